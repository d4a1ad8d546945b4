"""Coloured Petri-net executor, plus the uncoloured (``pn``) special case.

Tokens are plain Python values: enum labels are strings, products are
tuples, and the only token of an uncoloured place is ``()``.  Conflicts
between enabled transitions are resolved by declaration order; bindings of
one transition are ordered lexicographically by variable value.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional

from .core import Event, SimTime
from .decls import check_params, eval_params
from .diagnostics import NOWHERE, Diagnostic, Span, error, pick
from .errors import ContractViolation, ExecutionError, NonQuiescenceError
from .expr import (
    BOOL,
    BoolLit,
    DotType,
    Expr,
    Name,
    Num,
    Scope,
    TupleExpr,
    TypeCheckError,
    Unary,
    assignable,
    coerce,
    compile_expr,
    free_names,
    format_number,
    literal,
    type_of,
    value_conforms,
)

DEFAULT_MAX_FIRINGS = 1000


# ---------------------------------------------------------------- marking


def format_token(tok) -> str:
    if isinstance(tok, tuple):
        return "(" + ",".join(format_token(t) for t in tok) + ")"
    if isinstance(tok, (bool, int, float)):
        return format_number(tok)
    return str(tok)


class Marking:
    """Immutable multiset of tokens per place (empty places are dropped)."""

    __slots__ = ("_places", "_key")

    def __init__(self, places: Optional[dict] = None):
        clean = {}
        for p, toks in (places or {}).items():
            c = Counter({t: n for t, n in Counter(toks).items() if n > 0})
            if c:
                clean[p] = c
        self._places = clean
        self._key = tuple(
            (p, tuple(sorted(clean[p].items()))) for p in sorted(clean)
        )

    @classmethod
    def of(cls, **places) -> "Marking":
        """``Marking.of(q1=[("x", 0.0), ("y", 0.0)])``"""
        return cls({p: Counter(toks) for p, toks in places.items()})

    def __getitem__(self, place) -> Counter:
        return Counter(self._places.get(place, ()))

    def places(self):
        return list(self._places)

    def count(self, place=None) -> int:
        if place is None:
            return sum(sum(c.values()) for c in self._places.values())
        return sum(self._places.get(place, Counter()).values())

    def tokens(self, place) -> list:
        """Tokens of ``place`` in sorted order, one entry per instance."""
        c = self._places.get(place)
        if not c:
            return []
        out = []
        for tok, n in sorted(c.items()):
            out.extend([tok] * n)
        return out

    def counts(self) -> dict:
        return {p: sum(c.values()) for p, c in self._places.items()}

    def _with(self, removed: Iterable, added: Iterable) -> "Marking":
        places = {p: Counter(c) for p, c in self._places.items()}
        for p, tok in removed:
            c = places.get(p)
            if c is None or c[tok] <= 0:
                raise ContractViolation(f"token {format_token(tok)} not in place {p!r}")
            c[tok] -= 1
        for p, tok in added:
            places.setdefault(p, Counter())[tok] += 1
        return Marking(places)

    def __eq__(self, other):
        return isinstance(other, Marking) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __str__(self):
        parts = []
        for p, items in self._key:
            toks = "+".join(f"{n}'{format_token(t)}" for t, n in items)
            parts.append(f"{p}:{toks}")
        return "; ".join(parts) if parts else "empty"

    def __repr__(self):
        return f"Marking({self})"


# ---------------------------------------------------------------- model


@dataclass(frozen=True)
class ColorSet:
    name: str
    type: object
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Place:
    name: str
    colour: object
    initial: tuple = ()  # (count, Expr) terms
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: object
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class InArc:
    place: str
    pattern: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class EventArc:
    event: str
    pattern: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class OutArc:
    place: str
    expr: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class CpnEmit:
    event: str
    payload: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class CpnTransition:
    name: str
    inputs: tuple = ()
    events: tuple = ()
    guard: Optional[Expr] = None
    outputs: tuple = ()
    emits: tuple = ()
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class CpnNet:
    name: str
    places: tuple
    transitions: tuple
    variables: tuple = ()
    events: tuple = ()
    params: tuple = ()
    coloured: bool = True
    labels: dict = field(default_factory=dict, compare=False, repr=False)
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    def place(self, name) -> Place:
        for p in self.places:
            if p.name == name:
                return p
        raise KeyError(name)

    def transition(self, name) -> CpnTransition:
        for t in self.transitions:
            if t.name == name:
                return t
        raise KeyError(name)

    def param_values(self, overrides=None):
        return eval_params(self.params, overrides, frozenset(self.labels))

    def with_params(self, overrides: dict) -> "CpnNet":
        known = {p.name for p in self.params}
        unknown = set(overrides) - known
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        params = tuple(
            replace(p, value=literal(overrides[p.name])) if p.name in overrides else p
            for p in self.params
        )
        return replace(self, params=params)

    def emitted_events(self) -> set:
        return {e.event for t in self.transitions for e in t.emits}

    def initial_marking(self, params=None) -> Marking:
        env = params if params is not None else self.param_values()
        labels = frozenset(self.labels)
        places = {}
        for p in self.places:
            c = Counter()
            for count, e in p.initial:
                tok = () if e is None else coerce(compile_expr(e, labels)(env), p.colour)
                c[tok] += count
            places[p.name] = c
        return Marking(places)


@dataclass(frozen=True)
class CpnState:
    marking: Marking
    pending: tuple = ()


@dataclass(frozen=True)
class Binding:
    transition: str
    values: tuple  # sorted (variable, value) pairs
    events: tuple = ()  # indices into the available event list

    def as_dict(self) -> dict:
        return dict(self.values)

    def __str__(self):
        return ",".join(f"{k}={format_token(v)}" for k, v in self.values)


class CpnStep(NamedTuple):
    state: CpnState
    events: list
    fired: list


# ---------------------------------------------------------------- validation


def _is_pattern(e: Expr, variables) -> bool:
    if isinstance(e, (Num, BoolLit)):
        return True
    if isinstance(e, Unary) and e.op == "-" and isinstance(e.operand, Num):
        return True
    if isinstance(e, Name):
        return True
    if isinstance(e, TupleExpr):
        return all(_is_pattern(x, variables) for x in e.items)
    return False


def _pattern_vars(e: Expr, variables) -> set:
    return {n for n in free_names(e) if n in variables}


def _check_pattern(e, colour, scope, what, span, diags):
    if not _is_pattern(e, scope.symbols):
        diags.append(error(f"{what} must be a variable, literal or tuple pattern", pick(e.span, span)))
        return
    try:
        t = type_of(e, scope)
    except TypeCheckError as exc:
        diags.append(error(str(exc), pick(exc.span, span)))
        return
    if not (assignable(colour, t) or assignable(t, colour)):
        diags.append(error(f"colour mismatch: {what} has type {t}, place colour is {colour}", span))


def cpn_validate(net: CpnNet) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    labels = net.labels
    param_types = check_params(net.params, labels, diags)
    places = {}
    for p in net.places:
        if p.name in places:
            diags.append(error(f"duplicate place {p.name!r}", p.span))
        places[p.name] = p
        pscope = Scope(dict(param_types), labels)
        for count, e in p.initial:
            if count < 1:
                diags.append(error(f"token multiplicity must be >= 1 in place {p.name!r}", p.span))
            if e is None:
                if not isinstance(p.colour, DotType):
                    diags.append(error(f"colour mismatch: place {p.name!r} needs coloured tokens", p.span))
                continue
            try:
                t = type_of(e, pscope)
                if not assignable(p.colour, t):
                    diags.append(error(f"colour mismatch: initial token of type {t} in place {p.name!r} of colour {p.colour}", pick(e.span, p.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, p.span)))

    variables = {}
    for v in net.variables:
        if v.name in variables or v.name in param_types:
            diags.append(error(f"duplicate declaration of {v.name!r}", v.span))
        if v.name in labels:
            diags.append(error(f"variable {v.name!r} shadows a colour label", v.span))
        variables[v.name] = v.type
    events = {}
    for ev in net.events:
        if ev.name in events:
            diags.append(error(f"duplicate event {ev.name!r}", ev.span))
        events[ev.name] = ev

    names = set()
    for t in net.transitions:
        if t.name in names:
            diags.append(error(f"duplicate transition {t.name!r}", t.span))
        names.add(t.name)
        bound = set()
        full_scope = Scope({**param_types, **variables}, labels)
        for arc in t.inputs:
            p = places.get(arc.place)
            if p is None:
                diags.append(error(f"unknown place {arc.place!r}", pick(arc.span, t.span)))
                continue
            if arc.pattern is None:
                if not isinstance(p.colour, DotType):
                    diags.append(error(f"colour mismatch: arc from {arc.place!r} needs a pattern", pick(arc.span, t.span)))
                continue
            _check_pattern(arc.pattern, p.colour, full_scope, f"input arc from {arc.place!r}", pick(arc.span, t.span), diags)
            bound |= _pattern_vars(arc.pattern, variables)
        for arc in t.events:
            ev = events.get(arc.event)
            if ev is None:
                diags.append(error(f"unknown symbol {arc.event!r} (event)", pick(arc.span, t.span)))
                continue
            if arc.pattern is not None:
                if ev.payload is None:
                    diags.append(error(f"event {arc.event!r} carries no payload", pick(arc.span, t.span)))
                    continue
                _check_pattern(arc.pattern, ev.payload, full_scope, f"payload of {arc.event!r}", pick(arc.span, t.span), diags)
                bound |= _pattern_vars(arc.pattern, variables)
        bscope = Scope({**param_types, **{v: variables[v] for v in bound}}, labels)
        if t.guard is not None:
            for n in sorted(free_names(t.guard)):
                if n in variables and n not in bound:
                    diags.append(error(f"unbound variable {n!r} in guard of {t.name!r}", pick(t.guard.span, t.span)))
            try:
                gt = type_of(t.guard, Scope({**param_types, **variables}, labels))
                if gt is not BOOL:
                    diags.append(error(f"guard must be bool, got {gt}", pick(t.guard.span, t.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, t.span)))
        for arc in t.outputs:
            p = places.get(arc.place)
            if p is None:
                diags.append(error(f"unknown place {arc.place!r}", pick(arc.span, t.span)))
                continue
            if arc.expr is None:
                if not isinstance(p.colour, DotType):
                    diags.append(error(f"colour mismatch: arc into {arc.place!r} needs an inscription", pick(arc.span, t.span)))
                continue
            if isinstance(p.colour, DotType):
                diags.append(error(f"colour mismatch: uncoloured place {arc.place!r} takes no inscription", pick(arc.span, t.span)))
                continue
            for n in sorted(free_names(arc.expr)):
                if n in variables and n not in bound:
                    diags.append(error(f"unbound variable {n!r} in output of {t.name!r}", pick(arc.span, t.span)))
            try:
                ot = type_of(arc.expr, Scope({**param_types, **variables}, labels))
                if not assignable(p.colour, ot):
                    diags.append(error(f"colour mismatch: output {ot} into place {arc.place!r} of colour {p.colour}", pick(arc.span, t.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, t.span)))
        for em in t.emits:
            if em.payload is None:
                continue
            for n in sorted(free_names(em.payload)):
                if n in variables and n not in bound:
                    diags.append(error(f"unbound variable {n!r} in emit of {t.name!r}", pick(em.span, t.span)))
            try:
                type_of(em.payload, bscope if bound else Scope({**param_types, **variables}, labels))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, t.span)))
    return diags


# ---------------------------------------------------------------- matching


def _match(pattern, value, binding: dict, labels) -> Optional[dict]:
    """Unify a token with an input-arc pattern; None if they disagree."""
    if pattern is None:
        return binding if value == () else None
    if isinstance(pattern, Name):
        if pattern.id in labels:
            return binding if value == pattern.id else None
        if pattern.id in binding:
            return binding if binding[pattern.id] == value else None
        out = dict(binding)
        out[pattern.id] = value
        return out
    if isinstance(pattern, (Num, BoolLit)):
        return binding if value == pattern.value else None
    if isinstance(pattern, Unary):
        return binding if value == -pattern.operand.value else None
    if isinstance(pattern, TupleExpr):
        if not isinstance(value, tuple) or len(value) != len(pattern.items):
            return None
        for p, v in zip(pattern.items, value):
            binding = _match(p, v, binding, labels)
            if binding is None:
                return None
        return binding
    raise ExecutionError(f"unsupported arc pattern {pattern!r}")


class _Compiled:
    def __init__(self, net: CpnNet, params: dict):
        labels = frozenset(net.labels)
        self.labels = labels
        self.params = params
        self.guards = [compile_expr(t.guard, labels) if t.guard is not None else None for t in net.transitions]
        self.outputs = [
            [(a.place, compile_expr(a.expr, labels) if a.expr is not None else None, net.place(a.place).colour) for a in t.outputs]
            for t in net.transitions
        ]
        self.emits = [
            [(e.event, compile_expr(e.payload, labels) if e.payload is not None else None) for e in t.emits]
            for t in net.transitions
        ]
        self.event_types = {e.name: e.payload for e in net.events}


_CACHE: dict = {}


def _compiled(net: CpnNet, params: dict) -> _Compiled:
    key = (id(net), tuple(sorted(params.items())))
    hit = _CACHE.get(key)
    if hit is None or hit[0] is not net:
        hit = (net, _Compiled(net, params))
        if len(_CACHE) > 256:
            _CACHE.clear()
        _CACHE[key] = hit
    return hit[1]


def _value_key(v):
    # total order over token values of mixed type
    if isinstance(v, tuple):
        return (3, tuple(_value_key(x) for x in v))
    if isinstance(v, str):
        return (2, v)
    if v is None:
        return (0, 0)
    return (1, v)


def _transition_bindings(net, comp, ti, marking: Marking, events: list) -> list[Binding]:
    t = net.transitions[ti]
    labels = comp.labels
    results = []
    seen = set()

    def events_rec(k, binding, used_events):
        if k == len(t.events):
            env = dict(comp.params)
            env.update(binding)
            g = comp.guards[ti]
            if g is not None and not g(env):
                return
            values = tuple(sorted(binding.items()))
            if values in seen:
                return
            seen.add(values)
            results.append(Binding(t.name, values, tuple(used_events)))
            return
        arc = t.events[k]
        ptype = comp.event_types.get(arc.event)
        for idx, ev in enumerate(events):
            if ev.name != arc.event or idx in used_events:
                continue
            if arc.pattern is None:
                b = binding
            else:
                payload = coerce(ev.payload, ptype) if ptype is not None and ev.payload is not None else ev.payload
                b = _match(arc.pattern, payload, binding, labels)
            if b is not None:
                events_rec(k + 1, b, used_events + [idx])

    def inputs_rec(k, binding, taken: Counter):
        if k == len(t.inputs):
            events_rec(0, binding, [])
            return
        arc = t.inputs[k]
        for tok, n in sorted(marking[arc.place].items(), key=lambda kv: _value_key(kv[0])):
            if taken[(arc.place, tok)] >= n:
                continue
            b = _match(arc.pattern, tok, binding, labels)
            if b is None:
                continue
            taken[(arc.place, tok)] += 1
            inputs_rec(k + 1, b, taken)
            taken[(arc.place, tok)] -= 1

    inputs_rec(0, {}, Counter())
    results.sort(key=lambda b: (tuple((k, _value_key(v)) for k, v in b.values), b.events))
    return results


def _available(s: CpnState, inputs) -> list:
    return list(s.pending) + list(inputs)


def enabled_bindings(net: CpnNet, s: CpnState, inputs=(), params=None) -> list[Binding]:
    """Every enabled (transition, binding) pair in deterministic order."""
    params = params if params is not None else net.param_values()
    comp = _compiled(net, params)
    events = _available(s, inputs)
    out = []
    for ti in range(len(net.transitions)):
        out.extend(_transition_bindings(net, comp, ti, s.marking, events))
    return out


def _consumed_tokens(net, t: CpnTransition, binding: dict, comp) -> list:
    out = []
    for arc in t.inputs:
        if arc.pattern is None:
            out.append((arc.place, ()))
        else:
            tok = compile_expr(arc.pattern, comp.labels)(binding)
            out.append((arc.place, coerce(tok, net.place(arc.place).colour)))
    return out


def cpn_fire(net: CpnNet, s: CpnState, binding: Binding, inputs=(), now: SimTime = 0, params=None):
    """Fire one enabled binding; returns ``(state', emitted events)``."""
    params = params if params is not None else net.param_values()
    if binding not in enabled_bindings(net, s, inputs, params):
        raise ContractViolation(f"transition {binding.transition} is not enabled with binding {{{binding}}}")
    return _fire(net, s, binding, inputs, now, params)


def _fire(net, s, binding, inputs, now, params):
    comp = _compiled(net, params)
    ti = next(i for i, t in enumerate(net.transitions) if t.name == binding.transition)
    t = net.transitions[ti]
    env = dict(params)
    env.update(binding.as_dict())
    removed = _consumed_tokens(net, t, env, comp)
    added = []
    for place, f, colour in comp.outputs[ti]:
        tok = () if f is None else coerce(f(env), colour)
        if not value_conforms(tok, colour):
            raise ExecutionError(f"token {format_token(tok)} does not conform to colour {colour} of {place!r}")
        added.append((place, tok))
    marking = s.marking._with(removed, added)
    available = _available(s, inputs)
    used = set(binding.events)
    pending = tuple(ev for i, ev in enumerate(available) if i not in used)
    emitted = [Event(name, f(env) if f is not None else None, now) for name, f in comp.emits[ti]]
    return CpnState(marking, pending), emitted


def cpn_step(net: CpnNet, s: CpnState, inputs=(), now: SimTime = 0, params=None,
             max_firings: int = DEFAULT_MAX_FIRINGS) -> CpnStep:
    """Fire the first enabled binding repeatedly until none is enabled."""
    params = params if params is not None else net.param_values()
    state = CpnState(s.marking, tuple(_available(s, inputs)))
    emitted: list = []
    fired: list = []
    while True:
        enabled = enabled_bindings(net, state, (), params)
        if not enabled:
            return CpnStep(state, emitted, fired)
        if len(fired) >= max_firings:
            raise NonQuiescenceError(
                f"net {net.name!r} still enabled after {max_firings} firings (last: {fired[-1].transition})"
            )
        b = enabled[0]
        state, evs = _fire(net, state, b, (), now, params)
        emitted.extend(evs)
        fired.append(b)


def initial_state(net: CpnNet, params=None) -> CpnState:
    return CpnState(net.initial_marking(params))
