import pytest

from twinkernel.core import Event
from twinkernel.cpn import Marking, cpn_fire, cpn_step, cpn_validate, enabled_bindings, initial_state
from twinkernel.errors import ContractViolation, ModelError, NonQuiescenceError
from twinkernel.impact import build_hbr_net

from .conftest import load

ORIGIN = Marking.of(q1=[("x", 0.0), ("y", 0.0), ("z", 0.0)])


@pytest.fixture
def hbr():
    return build_hbr_net()


def test_marking_is_a_multiset():
    m = Marking.of(p=["a", "a", "b"])
    assert m.count("p") == 3 and m.count() == 3
    assert m["p"]["a"] == 2
    assert m.tokens("p") == ["a", "a", "b"]
    assert Marking.of(p=["b", "a", "a"]) == m
    assert hash(Marking.of(p=["b", "a", "a"])) == hash(m)
    assert Marking.of(p=[], q=["a"]) == Marking.of(q=["a"])
    assert str(Marking()) == "empty"


def test_removing_missing_token_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        Marking.of(p=["a"])._with([("p", "b")], [])


def test_hbr_initial_marking(hbr):
    assert cpn_validate(hbr) == []
    assert initial_state(hbr).marking == ORIGIN
    assert str(ORIGIN) == "q1:1'(x,0.0)+1'(y,0.0)+1'(z,0.0)"


def test_no_request_no_firing(hbr):
    r = cpn_step(hbr, initial_state(hbr))
    assert r.fired == [] and r.state.marking == ORIGIN


def test_request_below_deadband_is_ignored(hbr):
    r = cpn_step(hbr, initial_state(hbr), [Event("inM_x", 0.02)])
    assert r.fired == [] and r.state.marking == ORIGIN


def test_request_then_completion(hbr):
    r = cpn_step(hbr, initial_state(hbr), [Event("inM_x", 0.3)])
    assert [b.transition for b in r.fired] == ["T1"]
    assert r.state.marking == Marking.of(q1=[("y", 0.0), ("z", 0.0)], q2=[("x", 0.0)])
    # a second request for the busy axis cannot fire T1 again
    r2 = cpn_step(hbr, r.state, [Event("inM_x", 0.6)])
    assert r2.fired == []
    r3 = cpn_step(hbr, r.state, [Event("inT_x", 0.27)])
    assert [b.transition for b in r3.fired] == ["T2", "T7"]
    assert r3.state.marking == Marking.of(q1=[("x", 0.27), ("y", 0.0), ("z", 0.0)])
    assert r3.state.marking.count() == 3


def test_binding_values(hbr):
    bs = enabled_bindings(hbr, initial_state(hbr), [Event("inM_y", 0.5)])
    assert len(bs) == 1
    b = bs[0]
    assert b.transition == "T3"
    assert dict(b.values) == {"d": "y", "i": 0.0, "xd": 0.5}
    st, _ = cpn_fire(hbr, initial_state(hbr), b, [Event("inM_y", 0.5)])
    assert st.marking.tokens("q3") == [("y", 0.0)]


def test_unconsumed_events_stay_pending_within_step(hbr):
    # both requests fire within one quiescence loop
    r = cpn_step(hbr, initial_state(hbr), [Event("inM_x", 0.3), Event("inM_z", 0.1)])
    assert [b.transition for b in r.fired] == ["T1", "T5"]


def test_divergent_net_hits_the_firing_cap():
    net = load("""
pn spin {
  place p = 1;
  transition loop {
    in p;
    out p;
  }
}
""").models[("pn", "spin")]
    with pytest.raises(NonQuiescenceError):
        cpn_step(net, initial_state(net), max_firings=50)


def test_product_colour_and_guard():
    net = load("""
colorset item = int * bool;
cpn sorter {
  var n : int;
  var ok : bool;
  place inbox : item = 1'(1, true) + 1'(2, false) + 1'(3, true);
  place good : item;
  place bad : item;
  transition accept {
    in inbox (n, ok);
    guard ok;
    out good (n, ok);
  }
  transition reject {
    in inbox (n, ok);
    guard !ok;
    out bad (n, ok);
  }
}
""").models[("cpn", "sorter")]
    r = cpn_step(net, initial_state(net))
    assert r.state.marking.tokens("good") == [(1, True), (3, True)]
    assert r.state.marking.tokens("bad") == [(2, False)]
    assert len(r.fired) == 3


def test_type_error_in_arc_is_a_diagnostic():
    with pytest.raises(ModelError) as ei:
        load("""
colorset item = int;
cpn bad {
  var n : int;
  place a : item = 1'1;
  place b : item;
  transition t {
    in a n;
    out b (n > 0);
  }
}
""")
    assert ei.value.diagnostics
