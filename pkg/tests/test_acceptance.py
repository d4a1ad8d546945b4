"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL`` line; the lines are
repeated in the pytest terminal summary.
"""

import dataclasses
import os
import random
import re
import subprocess
import sys
import time

from twinkernel.composition import Stimulus, system_run
from twinkernel.core import NS_PER_S as S, Event, Trace, diff_traces, seconds
from twinkernel.cpn import CpnState, cpn_fire, cpn_step, initial_state
from twinkernel.errors import NonConvergenceError, NonQuiescenceError, SimulationError, TwinKernelError, ZenoError
from twinkernel.ha import HaState, ha_advance, ha_initial, integrate_step, locate_crossing
from twinkernel.impact import (
    SCENARIOS, build_arm_ha, build_conveyor_ha, build_hbr_net, build_line_flow_pn, column_at, model_files,
    model_source,
)
from twinkernel.modelspec import canonical_print, parse_model, patch_param, validate_document
from twinkernel.reachability import reachable_markings
from twinkernel.twinlink import calibrate_scalar, plant_from_trace

from .conftest import load, verdict
from .docgen import random_document
from .fuzzing import fuzz_inputs
from .test_composition import PING_PONG, gals_system

U_TOKEN = re.compile(r"(\d+)'\(")


def _tokens(marking: str) -> int:
    return sum(int(k) for k in U_TOKEN.findall(marking))


def test_1_conveyor_trapezoid():
    spec = SCENARIOS["conveyor"].load()
    assert (spec.delta, spec.substep) == (seconds(0.01), seconds(0.001))
    t0 = time.perf_counter()
    trace = system_run(spec)
    wall = time.perf_counter() - t0
    want = [(1.0, 0.5)] + [(float(t), 1.0) for t in range(2, 21)] + [(22.0, 0.0)]
    errs = [abs(column_at(trace, "cv.belt.v", seconds(t)) - v) for t, v in want]
    errs.append(abs(column_at(trace, "cv.belt.x", 30 * S) - 20.0))
    ok = max(errs) <= 1e-6 and wall < 5.0
    assert verdict(1, ok, f"max error {max(errs):.2e} over {len(errs)} points, {wall:.2f} s wall")


def test_2_hbr_end_to_end():
    spec = SCENARIOS["hbr"].load()
    t0 = time.perf_counter()
    trace = system_run(spec)
    wall = time.perf_counter() - t0
    (e,) = [r.t for r in trace.records if r.source == "hbr.arm_x" and r.name == "e"]
    rack = [(r.t, r.name) for r in trace.records if r.source == "hbr.rack" and r.kind == "event"]
    t2 = [t for t, n in rack if n == "T2"]
    t7 = [t for t, n in rack if n == "T7" and t // spec.delta == e // spec.delta]
    final = [r.value for r in trace.records if r.name == "marking"][-1]
    tokens = dict((d, float(p)) for d, p in re.findall(r"\((\w),([-0-9.e]+)\)", final))
    positions_ok = (final.startswith("q1:") and ";" not in final
                    and all(abs(tokens[d] - p) <= 1e-6 for d, p in (("x", 0.27), ("y", 0.17), ("z", 0.07))))
    same_step = len(t2) == 1 and t2[0] // spec.delta == e // spec.delta and len(t7) == 1
    ok = abs(e - 9 * S) <= 1000 and same_step and positions_ok and wall < 2.0
    assert verdict(2, ok, f"e at {e / S:.9f} s, T2/T7 same step: {same_step}, final {final}, {wall:.2f} s wall")


def test_3_token_conservation():
    base = SCENARIOS["hbr"].load()
    rng = random.Random(2024)
    horizon = 40 * S
    markings = violations = 0
    for _ in range(1000):
        stimuli = []
        for axis in "xyz":
            for _ in range(rng.randint(0, 3)):
                t = rng.randrange(0, horizon // 2, seconds(0.01))
                stimuli.append(Stimulus(t, "hbr", f"req_{axis}", rng.uniform(0.0, 1.0)))
        spec = dataclasses.replace(base, stimuli=tuple(sorted(stimuli, key=lambda s: (s.t, s.port))),
                                   horizon=horizon, delta=seconds(0.5), substep=seconds(0.05),
                                   sample_period=seconds(0.5))
        for r in system_run(spec).records:
            if r.name == "marking":
                markings += 1
                violations += _tokens(r.value) != 3
    ok = violations == 0 and markings > 1000
    assert verdict(3, ok, f"{violations} violations in {markings} markings over 1000 schedules")


def _visited(net, state, events, params):
    """Every marking a cpn_step passes through, in order."""
    r = cpn_step(net, state, events, 0, params)
    seen = [state.marking]
    s = CpnState(state.marking, tuple(state.pending) + tuple(events))
    for b in r.fired:
        s, _ = cpn_fire(net, s, b, (), 0, params)
        seen.append(s.marking)
    assert s.marking == r.state.marking
    return seen, r.state


def test_4_executor_within_oracle():
    net = build_hbr_net()
    params = net.param_values()
    payloads = [0.0, 0.02, 0.3, 0.6]
    alphabet = {f"{k}_{a}": payloads for k in ("inM", "inT") for a in "xyz"}
    reach = reachable_markings(net, initial_state(net).marking, alphabet, depth=20)
    rng = random.Random(11)
    state = initial_state(net)
    visited = set()
    for _ in range(2000):
        events = [Event(rng.choice(list(alphabet)), rng.choice(payloads)) for _ in range(rng.randint(1, 3))]
        seen, state = _visited(net, state, events, params)
        state = CpnState(state.marking)  # pending events expire with the macro step
        visited.update(seen)
    line = build_line_flow_pn()
    line_reach = reachable_markings(line, initial_state(line).marking, {}, depth=20)
    line_seen, _ = _visited(line, initial_state(line), [], line.param_values())
    missing = len(visited - reach) + len(set(line_seen) - line_reach)
    ok = missing == 0 and len(visited) > 3 and len(line_seen) == 8
    assert verdict(4, ok, f"{len(visited)} HBR + {len(line_seen)} line markings visited, {missing} outside the oracle")


def _flow_error(m, s, closed):
    err = 0.0
    for k in range(1, 30_001):
        s = integrate_step(m, s, 1e-3)
        for name, f in closed.items():
            err = max(err, abs(s.values[name] - f(k * 1e-3)))
    return err


def _bracketed(t, exact):
    ns = round(t * 1e9)
    return ns - 1 <= round(exact * 1e9) <= ns


def belt_state(loc, v0):
    return HaState(loc, {"x": 0.0, "v": v0, "c": 0.0, "armed": 0.0}, {"TurnOn": True})


def test_5_integrator_accuracy():
    belt, arm = build_conveyor_ha(), build_arm_ha()
    errors = {
        "Acc": _flow_error(belt, belt_state("Acc", 0.0), {"x": lambda t: 0.25 * t * t, "v": lambda t: 0.5 * t}),
        "Const": _flow_error(belt, belt_state("Const", 1.0), {"x": lambda t: t, "c": lambda t: t}),
        "Dec": _flow_error(belt, belt_state("Dec", 15.0),
                           {"x": lambda t: 15 * t - 0.25 * t * t, "v": lambda t: 15 - 0.5 * t}),
        "q7": _flow_error(arm, HaState("q7", {"x": 0.0}, {"xd": 0.0}), {"x": lambda t: 0.03 * t}),
        "q8": _flow_error(arm, HaState("q8", {"x": 0.0}, {"xd": 0.0}), {"x": lambda t: -0.03 * t}),
    }
    crossings = [
        _bracketed(locate_crossing(belt, belt_state("Acc", 0.0), "v >= v_max", 3.0), 2.0),
        _bracketed(locate_crossing(belt, belt_state("Dec", 1.0), "v <= 0", 3.0), 2.0),
        _bracketed(locate_crossing(arm, HaState("q7", {"x": 0.0}, {"xd": 0.3}), "abs(xd - x) < deadband", 12.0), 9.0),
        _bracketed(locate_crossing(arm, HaState("q8", {"x": 0.5}, {"xd": 0.2}), "abs(xd - x) < deadband", 12.0), 9.0),
    ]
    worst = max(errors.values())
    ok = worst <= 1e-9 and all(crossings)
    assert verdict(5, ok, f"max flow error {worst:.2e}, {sum(crossings)}/{len(crossings)} crossings in a 1 ns bracket")


def test_6_determinism(tmp_path):
    dirs = []
    for seed in ("1", "2"):
        out = tmp_path / f"run{seed}"
        env = dict(os.environ, PYTHONHASHSEED=seed)
        r = subprocess.run([sys.executable, "-m", "twinkernel", "demo", "--out", str(out)],
                           env=env, capture_output=True, text=True)
        assert r.returncode == 0, r.stdout + r.stderr
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir())
    same = [n for n in names if (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()]
    equal = all(diff_traces(Trace.decode((dirs[0] / n).read_text()), Trace.decode((dirs[1] / n).read_text()))
                == "equal" for n in names if n.endswith(".jsonl"))
    ok = len(names) == 2 * len(SCENARIOS) and same == names and equal
    assert verdict(6, ok, f"{len(same)}/{len(names)} files byte-identical across two processes")


def test_7_gals_contract():
    checked = wrong = 0
    for latency in (1, 2, 3):
        rng = random.Random(100 + latency)
        steps = 400
        sends = sorted(((rng.randrange(steps - 5), rng.choice(["go", "go2"])) for _ in range(3334)),
                       key=lambda s: s[0])
        trace = system_run(gals_system(latency, sends, steps))
        got = {p: [(r.t, r.value) for r in trace.select(kind="event", source="b", name=p)] for p in ("msg", "msg2")}
        want = {"msg": [], "msg2": []}
        for seq, (k, port) in enumerate(sends):
            lat = latency if port == "go" else latency + 1
            want["msg" if port == "go" else "msg2"].append(((k + lat) * seconds(0.01), seq))
        for p in want:
            checked += len(want[p])
            wrong += sum(a != b for a, b in zip(got[p], want[p])) + abs(len(got[p]) - len(want[p]))
    ok = wrong == 0 and checked >= 10_000
    assert verdict(7, ok, f"{checked} messages, {wrong} early, late or out of order")


def test_8_parser_round_trip_and_fuzz():
    docs = [random_document(seed) for seed in range(1000)] + [model_source(f) for f in model_files()]
    broken = 0
    for text in docs:
        d = parse_model(text)
        broken += parse_model(canonical_print(d)) != d
    crashes = rejected = 0
    for data in fuzz_inputs(100_000, seed=8):
        try:
            parse_model(data, "<fuzz>")
        except TwinKernelError as exc:
            rejected += 1
            crashes += not getattr(exc, "diagnostics", None)
        except Exception:  # noqa: BLE001 - any other exception is a crash
            crashes += 1
    ok = broken == 0 and crashes == 0
    assert verdict(8, ok, f"{len(docs) - broken}/{len(docs)} documents round-trip, "
                          f"{crashes} crashes in 100000 fuzz inputs ({rejected} rejected)")


def test_9_calibration_recovery():
    doc = parse_model(model_source("impact_conveyor_fsm.twin"))

    def template(v):
        return validate_document(patch_param(doc, "v_speed", v)).system("conveyor_fsm_demo")

    seen = []

    def recording(v):
        seen.append(v)
        return template(v)

    plant_035 = plant_from_trace(system_run(template(0.035)), ["cv.belt.x"])
    plant_030 = plant_from_trace(system_run(template(0.03)), ["cv.belt.x"])
    a = calibrate_scalar(recording, "v_speed", (0.01, 0.1), plant_035, "cv.belt.x", 1e-3, initial=0.03)
    b = calibrate_scalar(template, "v_speed", (0.01, 0.1), plant_030, "cv.belt.x", 1e-3, initial=0.03)
    ok = (abs(a.value - 0.035) <= 1e-3 and a.evaluations <= 40 and all(0.01 <= v <= 0.1 for v in seen)
          and abs(b.value - 0.03) <= 1e-3 and b.rmse <= 1e-9)
    assert verdict(9, ok, f"0.035 -> {a.value:.6f} in {a.evaluations} evaluations; "
                          f"0.03 -> {b.value:.6f} with RMSE {b.rmse:.1e}")


def test_10_divergence_guards():
    outcomes = {}

    def expect(name, fn, error, cause=None):
        t0 = time.perf_counter()
        try:
            fn()
            outcomes[name] = False
        except error as exc:
            outcomes[name] = cause is None or isinstance(exc.cause, cause)
        outcomes[name] = outcomes[name] and time.perf_counter() - t0 < 5.0

    spin = load("""
pn spin {
  place p = 1;
  transition loop {
    in p;
    out p;
  }
}
dtc d {
  instance s : pn spin;
}
system main {
  step 10ms;
  horizon 50ms;
  component u : d;
}
""")
    net = spin.models[("pn", "spin")]
    flip = load("""
ha flip {
  var x = 0;
  location A init { flow x' = 1; }
  location B { flow x' = 1; }
  edge A -> B when x >= 0;
  edge B -> A when x >= 0;
}
""").models[("ha", "flip")]
    expect("divergent net", lambda: cpn_step(net, initial_state(net), max_firings=1000), NonQuiescenceError)
    expect("divergent net in a system", lambda: system_run(spin.system()), SimulationError, NonQuiescenceError)
    expect("event cycle", lambda: system_run(load(PING_PONG).system()), SimulationError, NonConvergenceError)
    expect("zeno automaton", lambda: ha_advance(flip, ha_initial(flip), (), seconds(0.01)), ZenoError)
    ok = all(outcomes.values())
    assert verdict(10, ok, ", ".join(f"{k}: {'aborted' if v else 'NOT aborted'}" for k, v in outcomes.items()))
