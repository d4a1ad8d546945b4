import pytest

from twinkernel.core import Event, seconds
from twinkernel.errors import CrossingAmbiguityError, InvariantViolationError, ZenoError
from twinkernel.ha import HaState, ha_advance, ha_initial, ha_validate, integrate_step, locate_crossing
from twinkernel.impact import build_arm_ha, build_conveyor_ha

from .conftest import load

H = 1e-3
STEPS_30S = 30_000


@pytest.fixture(scope="module")
def belt():
    return build_conveyor_ha()


@pytest.fixture(scope="module")
def arm():
    return build_arm_ha()


def _max_error(m, s, closed, names):
    err = 0.0
    for k in range(1, STEPS_30S + 1):
        s = integrate_step(m, s, H)
        t = k * H
        for n in names:
            err = max(err, abs(s.values[n] - closed[n](t)))
    return err


@pytest.mark.parametrize("loc, v0, x, v", [
    ("Acc", 0.0, lambda t: 0.25 * t * t, lambda t: 0.5 * t),
    ("Const", 1.0, lambda t: t, lambda t: 1.0),
    ("Dec", 15.0, lambda t: 15 * t - 0.25 * t * t, lambda t: 15 - 0.5 * t),
])
def test_conveyor_flows_match_closed_form(belt, loc, v0, x, v):
    s = HaState(loc, {"x": 0.0, "v": v0, "c": 0.0, "armed": 0.0}, {"TurnOn": True})
    assert _max_error(belt, s, {"x": x, "v": v, "c": lambda t: t}, ["x", "v", "c"]) <= 1e-9


@pytest.mark.parametrize("loc, rate", [("q7", 0.03), ("q8", -0.03)])
def test_arm_flows_match_closed_form(arm, loc, rate):
    s = HaState(loc, {"x": 0.0}, {"xd": 0.0})
    assert _max_error(arm, s, {"x": lambda t: rate * t}, ["x"]) <= 1e-9


def test_idle_has_no_flow(belt):
    s = ha_initial(belt)
    assert s.location == "Idle"
    assert integrate_step(belt, s, 1.0).values == s.values


def _in_bracket(t, exact):
    """The result is the right end of a 1 ns bracket holding the true time."""
    ns = round(t * 1e9)
    return ns - 1 <= round(exact * 1e9) <= ns


def test_crossing_v_reaches_max(belt):
    s = HaState("Acc", {"x": 0.0, "v": 0.0, "c": 0.0, "armed": 0.0}, {"TurnOn": True})
    t = locate_crossing(belt, s, "v >= v_max", 3.0)
    assert _in_bracket(t, 2.0)


def test_crossing_arm_arrival(arm):
    s = HaState("q7", {"x": 0.0}, {"xd": 0.3})
    t = locate_crossing(arm, s, "abs(xd - x) <= deadband", 12.0)
    assert _in_bracket(t, 9.0)


def test_crossing_absent_and_already_true(arm):
    s = HaState("q7", {"x": 0.0}, {"xd": 0.3})
    assert locate_crossing(arm, s, "x >= 1", 1.0) is None
    with pytest.raises(ValueError):
        locate_crossing(arm, s, "x >= 0", 1.0)


def test_advance_runs_the_trapezoid(belt):
    s = ha_initial(belt)
    delta = seconds(0.01)
    jumps = []
    for k in range(3000):
        ins = []
        if k == 0:
            ins = [Event("TurnOn", True)]
        elif k == 2000:
            ins = [Event("TurnOn", False)]
        r = ha_advance(belt, s, ins, delta, t_start=k * delta)
        s = r.state
        jumps += [(t, a, b) for t, a, b in r.jumps]
    assert [(a, b) for _, a, b in jumps] == [("Idle", "Acc"), ("Acc", "Const"), ("Const", "Dec"), ("Dec", "Idle")]
    times = [t for t, _, _ in jumps]
    assert times[0] == 0
    assert abs(times[1] - seconds(2)) <= 1
    assert times[2] == seconds(20)
    assert abs(times[3] - seconds(22)) <= 1
    assert abs(s.values["x"] - 20.0) <= 1e-6 and s.values["v"] == 0.0


def test_workpieces_keep_the_belt_cruising(belt):
    s = ha_initial(belt)
    delta = seconds(0.01)
    for k in range(2500):
        ins = [Event("TurnOn", True)] if k == 0 else []
        if k % 100 == 50:
            ins.append(Event("WP"))
        s = ha_advance(belt, s, ins, delta, t_start=k * delta).state
    assert s.location == "Const" and s.values["armed"] == 1.0


def test_timeout_after_last_workpiece(belt):
    s = ha_initial(belt)
    delta = seconds(0.01)
    seen = []
    for k in range(1500):
        ins = [Event("TurnOn", True)] if k == 0 else []
        if k == 300:
            ins.append(Event("WP"))
            ins.append(Event("TurnOn", False))
        r = ha_advance(belt, s, ins, delta, t_start=k * delta)
        seen += r.jumps
        s = r.state
    assert ("Const", "Const") in [(a, b) for _, a, b in seen]
    assert s.location == "Idle"


def test_arm_emits_arrival_event(arm):
    s = ha_initial(arm)
    delta = seconds(0.01)
    got = []
    for k in range(1000):
        ins = [Event("xd", 0.3)] if k == 0 else []
        r = ha_advance(arm, s, ins, delta, t_start=k * delta)
        got += r.events
        s = r.state
    assert len(got) == 1 and got[0].name == "e"
    assert abs(got[0].stamp - seconds(9)) <= 1000
    assert abs(got[0].payload - 0.27) <= 1e-9
    assert s.location == "q6"


def test_samples_fall_on_the_grid(arm):
    s = HaState("q7", {"x": 0.0}, {"xd": 1.0})
    r = ha_advance(arm, s, (), seconds(0.35), t_start=seconds(0.05))
    assert [t for t, _ in r.samples] == [seconds(0.1), seconds(0.2), seconds(0.3), seconds(0.4)]
    assert abs(r.samples[0][1]["x"] - 0.03 * 0.05) <= 1e-12


ZENO = """
ha flip {
  var x = 0;
  location A init { flow x' = 1; }
  location B { flow x' = 1; }
  edge A -> B when x >= 0;
  edge B -> A when x >= 0;
}
"""


def test_zeno_guard():
    m = load(ZENO).models[("ha", "flip")]
    with pytest.raises(ZenoError):
        ha_advance(m, ha_initial(m), (), seconds(0.01), max_jumps=100)


def test_invariant_without_exit():
    m = load("""
ha trapped {
  var x = 0;
  location A init {
    flow x' = 1;
    inv x <= 0.5;
  }
}
""").models[("ha", "trapped")]
    assert ha_validate(m) == []
    with pytest.raises(InvariantViolationError):
        ha_advance(m, ha_initial(m), (), seconds(1))


def test_ambiguous_crossing():
    m = load("""
ha blip {
  var x = 0;
  location A init { flow x' = 1; }
  location B;
  edge A -> B urgent when x >= 0.0002 && x <= 0.0004 || x >= 0.0009;
}
""").models[("ha", "blip")]
    with pytest.raises(CrossingAmbiguityError):
        ha_advance(m, ha_initial(m), (), seconds(0.01))
