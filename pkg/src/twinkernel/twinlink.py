"""Plant traces, twin/plant discrepancy, and scalar calibration."""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .core import SimTime, Trace, seconds, to_seconds
from .errors import CalibrationError, ComparisonError, PlantTraceError, TwinKernelError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...
DEFAULT_MAX_GAP = 5_000_000  # half of the default 10 ms macro step


# ---------------------------------------------------------------- plant traces


@dataclass(frozen=True)
class PlantTrace:
    signals: tuple
    records: tuple  # (t, signal, value) sorted by time, then header order

    def series(self, signal) -> list:
        return [(t, v) for t, s, v in self.records if s == signal]

    def __len__(self):
        return len(self.records)


def parse_plant_csv(text: str, source: str = "<plant>") -> PlantTrace:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise PlantTraceError(f"{source}: empty file") from None
    header = [h.strip() for h in header]
    if not header or header[0] != "t_seconds":
        raise PlantTraceError(f"{source}:1: header must start with t_seconds")
    signals = header[1:]
    if len(set(signals)) != len(signals) or any(not s for s in signals):
        raise PlantTraceError(f"{source}:1: signal names must be nonempty and distinct")
    records = []
    last_t = None
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PlantTraceError(f"{source}:{lineno}: expected {len(header)} cells, found {len(row)}")
        try:
            ts = float(row[0])
        except ValueError:
            raise PlantTraceError(f"{source}:{lineno}: non-numeric time {row[0]!r}") from None
        if not math.isfinite(ts) or ts < 0:
            raise PlantTraceError(f"{source}:{lineno}: invalid time {row[0]!r}")
        t = seconds(ts)
        if last_t is not None and t < last_t:
            raise PlantTraceError(f"{source}:{lineno}: time {row[0]} is earlier than the previous row")
        last_t = t
        for name, cell in zip(signals, row[1:]):
            cell = cell.strip()
            if not cell:
                continue
            try:
                v = float(cell)
            except ValueError:
                raise PlantTraceError(f"{source}:{lineno}: non-numeric value {cell!r} for {name}") from None
            if not math.isfinite(v):
                raise PlantTraceError(f"{source}:{lineno}: non-finite value {cell!r} for {name}")
            records.append((t, name, v))
    return PlantTrace(tuple(signals), tuple(records))


def load_plant_trace(path) -> PlantTrace:
    """Read a ``t_seconds,<signal>...`` CSV file."""
    path = Path(path)
    return parse_plant_csv(path.read_text(encoding="utf-8"), str(path))


def plant_from_trace(trace: Trace, columns: Optional[Iterable[str]] = None) -> PlantTrace:
    """Turn a simulated trace into a plant log, as if it had been recorded."""
    return parse_plant_csv(trace.to_csv(columns), "<simulated>")


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class SignalDiscrepancy:
    signal: str
    rmse: float
    max_abs: float
    max_abs_t: Optional[SimTime]
    first_divergence: Optional[SimTime]
    samples: int

    def as_dict(self) -> dict:
        return {
            "first_divergence_s": None if self.first_divergence is None else to_seconds(self.first_divergence),
            "max_abs": self.max_abs,
            "max_abs_t_s": None if self.max_abs_t is None else to_seconds(self.max_abs_t),
            "rmse": self.rmse,
            "samples": self.samples,
            "signal": self.signal,
        }


@dataclass(frozen=True)
class DiscrepancyReport:
    signals: tuple  # SignalDiscrepancy
    tol: float
    max_gap: SimTime

    def __getitem__(self, name) -> SignalDiscrepancy:
        for s in self.signals:
            if s.signal == name:
                return s
        raise KeyError(name)

    @property
    def samples(self) -> int:
        return sum(s.samples for s in self.signals)

    def to_json(self) -> str:
        obj = {
            "max_gap_s": to_seconds(self.max_gap),
            "signals": [s.as_dict() for s in self.signals],
            "tol": self.tol,
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"

    def to_table(self) -> str:
        head = ("signal", "samples", "RMSE", "max abs", "at (s)", "diverges at (s)")
        rows = [head]
        for s in self.signals:
            rows.append((
                s.signal,
                str(s.samples),
                f"{s.rmse:.6g}",
                f"{s.max_abs:.6g}",
                "-" if s.max_abs_t is None else f"{to_seconds(s.max_abs_t):.6g}",
                "-" if s.first_divergence is None else f"{to_seconds(s.first_divergence):.6g}",
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"tolerance {self.tol:g}")
        return "\n".join(lines) + "\n"


def _pairs(signals) -> list:
    out = []
    for s in signals:
        if isinstance(s, tuple):
            out.append(s)
        elif "=" in s:
            a, b = s.split("=", 1)
            out.append((a, b))
        else:
            out.append((s, s))
    return out


def _nearest(times: list, t: int) -> int:
    i = bisect.bisect_left(times, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(times) and (best is None or abs(times[j] - t) < abs(times[best] - t)):
            best = j
    return best


def compare_series(twin: Sequence, plant: Sequence, tol: float, max_gap: SimTime, name="signal") -> SignalDiscrepancy:
    """Compare two ``(t, value)`` series joined by nearest time."""
    ptimes = [t for t, _ in plant]
    sq = 0.0
    max_abs = 0.0
    max_t = None
    first = None
    n = 0
    for t, v in twin:
        if not ptimes:
            break
        j = _nearest(ptimes, t)
        if abs(ptimes[j] - t) > max_gap:
            continue
        err = abs(float(v) - float(plant[j][1]))
        n += 1
        sq += err * err
        if max_t is None or err > max_abs:
            max_abs, max_t = err, t
        if first is None and err > tol:
            first = t
    if n == 0:
        raise ComparisonError(f"{name}: twin and plant samples do not overlap in time")
    return SignalDiscrepancy(name, math.sqrt(sq / n), max_abs, max_t, first, n)


def compare_traces(twin: Trace, plant: PlantTrace, signals=None, tol: float = 1e-3,
                   max_gap: SimTime = DEFAULT_MAX_GAP) -> DiscrepancyReport:
    """Per-signal RMSE, max error and first divergence of twin vs plant.

    ``signals`` names twin columns that the plant log shares, or
    ``"twin_column=plant_column"`` pairs.  By default every plant signal
    that the twin also records is compared.
    """
    twin_cols = set(twin.signal_columns())
    if signals is None:
        pairs = [(s, s) for s in plant.signals if s in twin_cols]
    else:
        pairs = _pairs(signals)
    if not pairs:
        raise ComparisonError("no signals in common between twin and plant")
    out = []
    for tcol, pcol in pairs:
        if tcol not in twin_cols:
            raise ComparisonError(f"twin trace has no signal {tcol!r}")
        if pcol not in plant.signals:
            raise ComparisonError(f"plant trace has no signal {pcol!r}")
        d = compare_series(twin.series(tcol), plant.series(pcol), tol, max_gap, tcol)
        out.append(d)
    return DiscrepancyReport(tuple(out), tol, max_gap)


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationResult:
    param: str
    value: float
    rmse: float
    iterations: int
    evaluations: int
    bracket_width: float
    lo: float
    hi: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":")) + "\n"


def calibrate_scalar(template: Callable[[float], object], param: str, bounds, plant: PlantTrace, signal,
                     tol: float = 1e-3, *, initial: Optional[float] = None,
                     max_gap: SimTime = DEFAULT_MAX_GAP, run: Optional[Callable] = None,
                     max_evaluations: int = 200) -> CalibrationResult:
    """Fit one parameter by golden-section search on the RMSE of ``signal``.

    ``template(value)`` builds the system to simulate for a candidate
    value; ``run`` turns it into a Trace (``system_run`` by default).
    The result is the midpoint of the final bracket, except that the
    model's current value ``initial`` is kept when it lies inside the
    final bracket and fits at least as well.
    """
    from .composition import system_run

    run = run or system_run
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise CalibrationError(f"empty search interval [{lo}, {hi}]")
    if not tol > 0:
        raise CalibrationError("tolerance must be positive")
    cache: dict = {}

    def rmse(x: float) -> float:
        if x in cache:
            return cache[x]
        if not lo <= x <= hi:  # pragma: no cover - guarded by construction
            raise CalibrationError(f"candidate {x!r} outside [{lo}, {hi}]", x)
        if len(cache) >= max_evaluations:
            raise CalibrationError(f"more than {max_evaluations} evaluations", x)
        try:
            trace = run(template(x))
            r = compare_traces(trace, plant, [signal], tol=math.inf, max_gap=max_gap).signals[0].rmse
        except TwinKernelError as exc:
            raise CalibrationError(f"simulation failed for {param} = {x!r}: {exc}", x) from exc
        cache[x] = r
        return r

    incumbent = initial if initial is not None and lo <= initial <= hi else None
    if incumbent is not None:
        rmse(incumbent)
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = rmse(c), rmse(d)
    iterations = 0
    while b - a > tol:
        iterations += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = rmse(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = rmse(d)
    mid = (a + b) / 2.0
    value, best = mid, rmse(mid)
    if incumbent is not None and a <= incumbent <= b and cache[incumbent] <= best:
        value, best = incumbent, cache[incumbent]
    return CalibrationResult(param, value, best, iterations, len(cache), b - a, lo, hi)
