"""Brute-force reachability oracle for checking the net executor.

Deliberately naive: every combination of token instances and event
payloads is enumerated with :func:`itertools.product` and filtered, with
its own pattern unifier.  It shares only the expression evaluator with
:mod:`twinkernel.cpn`.
"""

from __future__ import annotations

import itertools
from collections import Counter

from .cpn import CpnNet, Marking
from .errors import OracleOverflowError
from .expr import BoolLit, Name, Num, TupleExpr, Unary, coerce, compile_expr


def _unify(pattern, value, env, labels):
    if pattern is None:
        return value == ()
    if isinstance(pattern, Name):
        if pattern.id in labels:
            return value == pattern.id
        if pattern.id in env:
            return env[pattern.id] == value
        env[pattern.id] = value
        return True
    if isinstance(pattern, (Num, BoolLit)):
        return value == pattern.value
    if isinstance(pattern, Unary):
        return value == -pattern.operand.value
    if isinstance(pattern, TupleExpr):
        return (
            isinstance(value, tuple)
            and len(value) == len(pattern.items)
            and all(_unify(p, v, env, labels) for p, v in zip(pattern.items, value))
        )
    return False


def successors(net: CpnNet, marking: Marking, alphabet: dict, params: dict) -> set:
    labels = frozenset(net.labels)
    payload_types = {e.name: e.payload for e in net.events}
    colours = {p.name: p.colour for p in net.places}
    out = set()
    for t in net.transitions:
        guard = compile_expr(t.guard, labels) if t.guard is not None else None
        outs = [(a.place, compile_expr(a.expr, labels) if a.expr is not None else None) for a in t.outputs]
        # every token instance, by (place, index)
        pools = [list(enumerate(marking.tokens(a.place))) for a in t.inputs]
        payloads = [list(alphabet.get(a.event, ())) for a in t.events]
        for tokens in itertools.product(*pools):
            picks = [(a.place, idx) for a, (idx, _) in zip(t.inputs, tokens)]
            if len(set(picks)) != len(picks):
                continue
            for evs in itertools.product(*payloads):
                env = dict(params)
                ok = all(_unify(a.pattern, tok, env, labels) for a, (_, tok) in zip(t.inputs, tokens))
                if ok:
                    for a, pay in zip(t.events, evs):
                        if a.pattern is None:
                            continue
                        ptype = payload_types.get(a.event)
                        if pay is not None and ptype is not None:
                            pay = coerce(pay, ptype)
                        if not _unify(a.pattern, pay, env, labels):
                            ok = False
                            break
                if not ok or (guard is not None and not guard(env)):
                    continue
                places = {p: marking[p] for p in marking.places()}
                for a, (_, tok) in zip(t.inputs, tokens):
                    places[a.place] = places.get(a.place, Counter())
                    places[a.place][tok] -= 1
                for place, f in outs:
                    tok = () if f is None else coerce(f(env), colours[place])
                    places.setdefault(place, Counter())[tok] += 1
                out.add(Marking(places))
    return out


def reachable_markings(net: CpnNet, initial: Marking, alphabet: dict, depth: int,
                       *, params=None, max_states: int = 100_000) -> set:
    """All markings reachable from ``initial`` within ``depth`` firings.

    ``alphabet`` maps event names to the finite list of payloads the
    environment may offer (``[None]`` for payload-free events).
    """
    params = params if params is not None else net.param_values()
    seen = {initial}
    frontier = [initial]
    for _ in range(depth):
        nxt = []
        for m in frontier:
            for m2 in successors(net, m, alphabet, params):
                if m2 not in seen:
                    seen.add(m2)
                    nxt.append(m2)
                    if len(seen) > max_states:
                        raise OracleOverflowError(f"more than {max_states} reachable markings")
        if not nxt:
            break
        frontier = nxt
    return seen
