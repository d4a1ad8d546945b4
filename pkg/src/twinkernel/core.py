"""Time, event, value and trace types shared by every executor.

Simulation time is an integer number of nanoseconds so that macro-step
boundaries and channel deliveries land on an exact grid.  Continuous
state stays in 64-bit floats.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

from .errors import TraceEncodingError

NS_PER_S = 1_000_000_000
MAX_HORIZON_NS = 10_000 * NS_PER_S
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

SimTime = int
Value = Union[bool, int, float, str]

KINDS = ("signal", "event", "location", "marking")


def seconds(x: float) -> SimTime:
    """Convert seconds to integer nanoseconds (round to nearest)."""
    ns = round(x * NS_PER_S)
    if ns < 0:
        raise ValueError(f"negative time {x!r}")
    return int(ns)


def to_seconds(t: SimTime) -> float:
    return t / NS_PER_S


def format_time(t: SimTime) -> str:
    """Human-readable time, e.g. ``9.0s``."""
    return f"{to_seconds(t)!r}s"


def check_value(v, *, allow_none=False) -> None:
    if v is None and allow_none:
        return
    if isinstance(v, bool) or isinstance(v, str):
        return
    if isinstance(v, int):
        if not INT64_MIN <= v <= INT64_MAX:
            raise TraceEncodingError(f"integer {v} outside 64-bit range")
        return
    if isinstance(v, float):
        if not math.isfinite(v):
            raise TraceEncodingError(f"non-finite real {v!r}")
        return
    raise TraceEncodingError(f"unsupported value {v!r} of type {type(v).__name__}")


@dataclass(frozen=True)
class Event:
    name: str
    payload: Optional[Value] = None
    stamp: SimTime = 0

    def __post_init__(self):
        if not self.name:
            raise ValueError("event name must be nonempty")

    def __str__(self):
        if self.payload is None:
            return f"{self.name}@{format_time(self.stamp)}"
        return f"{self.name}({self.payload!r})@{format_time(self.stamp)}"


@dataclass(frozen=True)
class TraceRecord:
    t: SimTime
    source: str
    kind: str
    name: str
    value: Optional[Value] = None

    @property
    def key(self):
        return (self.t, self.source, self.name)

    @property
    def column(self) -> str:
        return f"{self.source}.{self.name}"


# Short keys keep lines compact; the order is alphabetical and fixed.
_KEYS = ("k", "n", "s", "t", "v")


def _encode_scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v, ensure_ascii=False)


def encode_trace_record(r: TraceRecord) -> str:
    """One canonical JSON line for ``r`` (no trailing newline)."""
    if not isinstance(r.t, int) or isinstance(r.t, bool) or r.t < 0:
        raise TraceEncodingError(f"invalid time stamp {r.t!r}")
    if r.kind not in KINDS:
        raise TraceEncodingError(f"invalid record kind {r.kind!r}")
    if not r.source or not r.name:
        raise TraceEncodingError("record source and name must be nonempty")
    check_value(r.value, allow_none=True)
    return (
        '{"k":' + json.dumps(r.kind)
        + ',"n":' + json.dumps(r.name, ensure_ascii=False)
        + ',"s":' + json.dumps(r.source, ensure_ascii=False)
        + ',"t":' + str(r.t)
        + ',"v":' + _encode_scalar(r.value)
        + "}"
    )


def decode_trace_record(line: str) -> TraceRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceEncodingError(f"malformed trace line: {exc}") from None
    if not isinstance(obj, dict) or tuple(sorted(obj)) != _KEYS:
        raise TraceEncodingError(f"trace line must have keys {_KEYS}")
    t = obj["t"]
    if not isinstance(t, int) or isinstance(t, bool):
        raise TraceEncodingError(f"invalid time stamp {t!r}")
    rec = TraceRecord(t=t, source=obj["s"], kind=obj["k"], name=obj["n"], value=obj["v"])
    # re-encoding validates every field
    encode_trace_record(rec)
    return rec


def _sort_key(r: TraceRecord):
    return (r.t, r.source, r.name)


class Trace:
    """An immutable, canonically ordered sequence of trace records.

    Records are ordered by ``(t, source, name)``; records sharing a key
    keep the order in which they were produced (stable sort).
    """

    __slots__ = ("records",)

    def __init__(self, records: Iterable[TraceRecord] = ()):
        self.records = tuple(sorted(records, key=_sort_key))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        return isinstance(other, Trace) and self.records == other.records

    def __repr__(self):
        return f"Trace({len(self.records)} records)"

    def lines(self) -> list[str]:
        return [encode_trace_record(r) for r in self.records]

    def encode(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    @classmethod
    def decode(cls, text: str) -> "Trace":
        recs = [decode_trace_record(line) for line in text.split("\n") if line.strip()]
        trace = cls(recs)
        if trace.records != tuple(recs):
            raise TraceEncodingError("trace file is not in canonical order")
        return trace

    def write(self, path) -> None:
        write_text_atomic(path, self.encode())

    @classmethod
    def read(cls, path) -> "Trace":
        return cls.decode(Path(path).read_text(encoding="utf-8"))

    def select(self, *, kind=None, source=None, name=None) -> list[TraceRecord]:
        return [
            r for r in self.records
            if (kind is None or r.kind == kind)
            and (source is None or r.source == source)
            and (name is None or r.name == name)
        ]

    def signal_columns(self) -> list[str]:
        return sorted({r.column for r in self.records if r.kind == "signal"})

    def series(self, column: str) -> list[tuple[SimTime, Value]]:
        """``(t, value)`` samples of one signal column, e.g. ``"cv.belt.v"``."""
        return [(r.t, r.value) for r in self.records if r.kind == "signal" and r.column == column]

    def value_at(self, column: str, t: SimTime):
        for rt, v in self.series(column):
            if rt == t:
                return v
        raise KeyError(f"no sample of {column} at {format_time(t)}")

    def to_csv(self, signals: Optional[Iterable[str]] = None) -> str:
        """Signal columns as CSV with ``t_seconds`` first."""
        cols = list(signals) if signals is not None else self.signal_columns()
        rows: dict[int, dict[str, Value]] = {}
        wanted = set(cols)
        for r in self.records:
            if r.kind == "signal" and r.column in wanted:
                rows.setdefault(r.t, {})[r.column] = r.value
        out = ["t_seconds," + ",".join(cols)]
        for t in sorted(rows):
            row = rows[t]
            cells = [repr(to_seconds(t))]
            for c in cols:
                cells.append(_csv_cell(row.get(c)))
            out.append(",".join(cells))
        return "\n".join(out) + "\n"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def diff_traces(a: Trace, b: Trace) -> Union[int, str]:
    """Index of the first differing record, or ``"equal"``."""
    la, lb = a.lines(), b.lines()
    for i, (x, y) in enumerate(zip(la, lb)):
        if x != y:
            return i
    if len(la) != len(lb):
        return min(len(la), len(lb))
    return "equal"


def write_text_atomic(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
