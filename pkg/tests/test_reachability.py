import random

import pytest

from twinkernel.core import Event
from twinkernel.cpn import Marking, cpn_fire, enabled_bindings, initial_state
from twinkernel.errors import OracleOverflowError
from twinkernel.impact import build_hbr_net, build_line_flow_pn
from twinkernel.reachability import reachable_markings, successors

from .conftest import load

MAIN_PATH = ["hbr_release", "drill_done", "assemble", "magazine_done", "press_done"]


def walk(net, state, inputs=(), rng=None, limit=100):
    """Fire bindings one at a time; returns every visited marking and the firings."""
    seen = [state.marking]
    fired = []
    for _ in range(limit):
        bs = enabled_bindings(net, state, inputs)
        if not bs:
            break
        b = rng.choice(bs) if rng else bs[0]
        state, _ = cpn_fire(net, state, b, inputs)
        inputs = ()
        seen.append(state.marking)
        fired.append(b.transition)
    return seen, fired, state


def test_line_state_space():
    net = build_line_flow_pn()
    m0 = initial_state(net).marking
    reach = reachable_markings(net, m0, {}, depth=20)
    # the net is a single chain: 7 firings, 8 markings
    assert len(reach) == 8
    assert Marking.of(done=[()]) in reach


def test_line_main_path():
    net = build_line_flow_pn()
    seen, fired, state = walk(net, initial_state(net))
    assert state.marking == Marking.of(done=[()])
    assert [t for t in fired if t in MAIN_PATH] == MAIN_PATH
    assert sorted(set(fired) - set(MAIN_PATH)) == ["deliver_pcb", "request_pcb"]


def test_assembly_waits_without_mobile_station():
    net = build_line_flow_pn()
    m0 = Marking.of(rack=[()])
    reach = reachable_markings(net, m0, {}, depth=20)
    assert reach == {m0, Marking.of(drill=[()]), Marking.of(assembly=[()])}


def test_empty_line_is_dead():
    net = build_line_flow_pn()
    assert successors(net, Marking(), {}, net.param_values()) == set()


def test_hbr_oracle_contains_executor_markings():
    net = build_hbr_net()
    payloads = [0.0, 0.02, 0.3, 0.6]
    alphabet = {f"{k}_{a}": payloads for k in ("inM", "inT") for a in "xyz"}
    reach = reachable_markings(net, initial_state(net).marking, alphabet, depth=20)
    rng = random.Random(7)
    st = initial_state(net)
    for _ in range(300):
        ev = Event(f"{rng.choice(['inM', 'inT'])}_{rng.choice('xyz')}", rng.choice(payloads))
        seen, _, st = walk(net, st, [ev], rng)
        for m in seen:
            assert m in reach
            assert m.count() == 3


def test_oracle_state_cap():
    net = load("""
pn grow {
  place p = 1;
  transition t {
    in p;
    out p;
    out p;
  }
}
""").models[("pn", "grow")]
    with pytest.raises(OracleOverflowError):
        reachable_markings(net, initial_state(net).marking, {}, depth=50, max_states=10)
