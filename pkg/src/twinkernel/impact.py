"""Models of the IMPACT smartphone line and the scenarios that exercise them.

The sources live in ``models/impact/*.twin`` inside the package; the
builders below load them so that what ``demo`` runs and what the Python
API returns are the same models.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

from .composition import DtcSpec, SystemSpec, system_run
from .core import NS_PER_S, Trace, format_time
from .cpn import CpnNet
from .fsm import FsmModel
from .ha import HaModel
from .modelspec import ModelSet, load_text

MODEL_DIR = ("models", "impact")


def model_path(filename: str):
    """Traversable for a shipped ``.twin`` file."""
    p = resources.files(__package__)
    for part in (*MODEL_DIR, filename):
        p = p / part
    return p


def model_source(filename: str) -> str:
    return model_path(filename).read_text(encoding="utf-8")


def model_files() -> list[str]:
    d = resources.files(__package__)
    for part in MODEL_DIR:
        d = d / part
    return sorted(f.name for f in d.iterdir() if f.name.endswith(".twin"))


@lru_cache(maxsize=None)
def _load(filename: str) -> ModelSet:
    return load_text(model_source(filename), filename)


def build_conveyor_fsm() -> FsmModel:
    """Two-state conveyor: Idle and On, with the workpiece timeout."""
    return _load("impact_conveyor_fsm.twin").models[("fsm", "conveyor")]


def build_conveyor_ha() -> HaModel:
    """Conveyor with acceleration, cruise and braking phases."""
    return _load("impact_conveyor.twin").models[("ha", "conveyor_belt")]


def build_arm_ha() -> HaModel:
    """One axis of the high-bay rack arm."""
    return _load("impact_hbr.twin").models[("ha", "arm")]


def build_hbr_net() -> CpnNet:
    return _load("impact_hbr.twin").models[("cpn", "hbr")]


def build_hbr_dtc() -> DtcSpec:
    """Rack net plus one axis automaton per direction, wired together."""
    return _load("impact_hbr.twin").dtcs["hbr_cell"]


def build_line_flow_pn() -> CpnNet:
    """Coarse workpiece flow across the stations of the line."""
    return _load("impact_line.twin").models[("pn", "line_flow")]


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Checkpoint:
    """Expected value of a trace column at time ``t``.

    Numeric values compare within ``tol``; anything else (a marking, a
    location name) must match exactly.
    """

    t: int
    column: str
    value: object
    tol: Optional[float] = None

    def describe(self) -> str:
        bound = f" +- {self.tol:g}" if self.tol is not None else ""
        return f"{self.column} @ {format_time(self.t)} = {self.value!r}{bound}"


@dataclass(frozen=True)
class Scenario:
    name: str
    filename: str
    system: str
    summary: str
    checkpoints: tuple = ()

    @property
    def source(self) -> str:
        return model_source(self.filename)

    def load(self) -> SystemSpec:
        return _load(self.filename).systems[self.system]


def _s(x) -> int:
    return round(x * NS_PER_S)


SCENARIOS = {
    s.name: s
    for s in (
        Scenario(
            "conveyor",
            "impact_conveyor.twin",
            "conveyor_demo",
            "belt on at 0 s, off at 20 s: speed ramps up, holds and ramps down",
            (
                Checkpoint(_s(1), "cv.belt.v", 0.5, 1e-6),
                *(Checkpoint(_s(t), "cv.belt.v", 1.0, 1e-6) for t in range(2, 21)),
                Checkpoint(_s(22), "cv.belt.v", 0.0, 1e-6),
                Checkpoint(_s(25), "cv.belt.v", 0.0, 1e-6),
                Checkpoint(_s(30), "cv.belt.x", 20.0, 1e-6),
            ),
        ),
        Scenario(
            "conveyor_fsm",
            "impact_conveyor_fsm.twin",
            "conveyor_fsm_demo",
            "discrete controller commanding the belt speed",
            (
                Checkpoint(_s(5), "cv.ctl.v", 0.03, 0.0),
                # the belt sees the new speed one macro step after the command
                Checkpoint(_s(10), "cv.belt.x", 0.03 * (10 - 0.01), 1e-9),
            ),
        ),
        Scenario(
            "hbr",
            "impact_hbr.twin",
            "hbr_demo",
            "rack moves three axes to (0.3, 0.2, 0.1) and returns to idle",
            (
                Checkpoint(_s(12), "hbr.arm_x.x", 0.27, 1e-6),
                Checkpoint(_s(12), "hbr.arm_y.x", 0.17, 1e-6),
                Checkpoint(_s(12), "hbr.arm_z.x", 0.07, 1e-6),
                *(Checkpoint(_s(12), f"hbr.arm_{a}.location", "q6") for a in "xyz"),
            ),
        ),
        Scenario(
            "line",
            "impact_line.twin",
            "line_demo",
            "one workpiece flows from the rack to the press",
            (Checkpoint(_s(5), "line.flow.marking", "done:1'()"),),
        ),
    )
}


def scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


def column_at(trace: Trace, column: str, t: int):
    """Latest value recorded for ``column`` at or before ``t``."""
    src, _, name = column.rpartition(".")
    value = None
    found = False
    for r in trace.records:
        if r.t > t:
            break
        if r.source == src and r.name == name and r.kind != "event":
            value, found = r.value, True
    if not found:
        raise KeyError(f"no value of {column} at or before {format_time(t)}")
    return value


def check_point(trace: Trace, cp: Checkpoint) -> tuple[bool, object]:
    """Whether ``cp`` holds in ``trace``, and the value observed."""
    try:
        got = column_at(trace, cp.column, cp.t)
    except KeyError:
        return False, None
    if cp.tol is None:
        return got == cp.value, got
    try:
        return abs(float(got) - float(cp.value)) <= cp.tol, got
    except (TypeError, ValueError):
        return False, got


def run_scenario(name: str) -> tuple[Trace, list]:
    """Simulate a scenario; returns the trace and ``(checkpoint, ok, got)`` rows."""
    sc = scenario(name)
    trace = system_run(sc.load())
    return trace, [(cp, *check_point(trace, cp)) for cp in sc.checkpoints]
