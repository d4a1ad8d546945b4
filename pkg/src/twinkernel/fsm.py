"""Finite-state machine executor (Mealy style, one transition per step).

Inputs come in two flavours.  Level inputs (``input TurnOn : bool``) latch
the payload of the last event carrying their name, so ``!TurnOn`` means
"the controller unset the signal".  Pulse events (``event WP``) are true
only in the step that delivers them.  Timers synthesize their expiry event
(e.g. ``TimeOut``) once ``now`` reaches the expiry time; all timers are
cleared whenever the machine leaves a state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .core import NS_PER_S, Event, SimTime
from .decls import (
    check_input_decls,
    check_params,
    eval_params,
    input_defaults,
    latch_value,
)
from .diagnostics import NOWHERE, Diagnostic, Span, error, pick
from .errors import ExecutionError
from .expr import (
    BOOL,
    Expr,
    Scope,
    TypeCheckError,
    check_assign,
    coerce,
    compile_expr,
    is_numeric,
    literal,
    type_of,
)


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: object
    init: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class TimerDecl:
    name: str
    period: Expr
    event: str
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class ResetTimer:
    timer: str
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Emit:
    event: str
    payload: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class FsmTransition:
    source: str
    target: str
    guard: Expr
    actions: tuple = ()
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class FsmModel:
    name: str
    states: tuple
    initial: str
    vars: tuple = ()
    timers: tuple = ()
    transitions: tuple = ()
    params: tuple = ()
    inputs: tuple = ()
    events: tuple = ()
    labels: dict = field(default_factory=dict, compare=False, repr=False)
    state_spans: dict = field(default_factory=dict, compare=False, repr=False)
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    @property
    def timer_events(self):
        return {t.event: t for t in self.timers}

    def param_values(self, overrides=None):
        return eval_params(self.params, overrides, frozenset(self.labels))

    def emitted_events(self) -> set:
        return {a.event for tr in self.transitions for a in tr.actions if isinstance(a, Emit)}

    def with_params(self, overrides: dict) -> "FsmModel":
        known = {p.name for p in self.params}
        unknown = set(overrides) - known
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        params = tuple(
            replace(p, value=literal(overrides[p.name])) if p.name in overrides else p
            for p in self.params
        )
        return replace(self, params=params)


@dataclass(frozen=True)
class FsmState:
    current: str
    signals: dict
    timers: dict
    inputs: dict = field(default_factory=dict)


class FsmStep(NamedTuple):
    state: FsmState
    assignments: list
    events: list


# ---------------------------------------------------------------- validation


def fsm_validate(m: FsmModel) -> list[Diagnostic]:
    """Check the structural and typing invariants of ``m``."""
    diags: list[Diagnostic] = []
    labels = m.labels
    states = set()
    for s in m.states:
        if s in states:
            diags.append(error(f"duplicate state {s!r}", m.state_spans.get(s, m.span)))
        states.add(s)
    if m.initial not in states:
        diags.append(error(f"unknown state {m.initial!r} (initial)", m.span))

    param_types = check_params(m.params, labels, diags)
    symbols = dict(param_types)
    seen = set(symbols)

    def declare(name, span, t):
        if name in seen:
            diags.append(error(f"duplicate declaration of {name!r}", span))
        seen.add(name)
        symbols[name] = t

    in_types = check_input_decls(m.inputs, labels, param_types, diags)
    for d in m.inputs:
        declare(d.name, d.span, in_types[d.name])
    for d in m.events:
        declare(d.name, d.span, BOOL)
    for v in m.vars:
        try:
            check_assign(v.init, v.type, Scope(dict(param_types), labels), f"initial value of {v.name!r}")
        except TypeCheckError as exc:
            diags.append(error(str(exc), pick(exc.span, v.span)))
        declare(v.name, v.span, v.type)
    timer_names = set()
    for t in m.timers:
        if t.name in timer_names:
            diags.append(error(f"duplicate timer {t.name!r}", t.span))
        timer_names.add(t.name)
        try:
            pt = type_of(t.period, Scope(dict(param_types), labels))
            if not is_numeric(pt):
                diags.append(error(f"timer period of {t.name!r} must be a number, got {pt}", t.span))
        except TypeCheckError as exc:
            diags.append(error(str(exc), pick(exc.span, t.span)))
        declare(t.event, t.span, BOOL)

    scope = Scope(symbols, labels)
    var_types = {v.name: v.type for v in m.vars}
    for tr in m.transitions:
        for end in (tr.source, tr.target):
            if end not in states:
                diags.append(error(f"unknown state {end!r}", tr.span))
        try:
            gt = type_of(tr.guard, scope)
            if gt is not BOOL:
                diags.append(error(f"guard must be bool, got {gt}", pick(tr.guard.span, tr.span)))
        except TypeCheckError as exc:
            diags.append(error(str(exc), pick(exc.span, tr.span)))
        for a in tr.actions:
            if isinstance(a, Assign):
                if a.target not in var_types:
                    diags.append(error(f"assignment to undeclared signal {a.target!r}", pick(a.span, tr.span)))
                    continue
                try:
                    check_assign(a.expr, var_types[a.target], scope, f"assignment to {a.target!r}")
                except TypeCheckError as exc:
                    diags.append(error(str(exc), pick(exc.span, a.span)))
            elif isinstance(a, ResetTimer):
                if a.timer not in timer_names:
                    diags.append(error(f"unknown timer {a.timer!r}", pick(a.span, tr.span)))
            elif isinstance(a, Emit) and a.payload is not None:
                try:
                    type_of(a.payload, scope)
                except TypeCheckError as exc:
                    diags.append(error(str(exc), pick(exc.span, a.span)))
    return diags


# ---------------------------------------------------------------- execution


class _Compiled:
    def __init__(self, m: FsmModel, params: dict):
        labels = frozenset(m.labels)
        self.params = params
        self.guards = {}
        self.actions = {}
        for i, tr in enumerate(m.transitions):
            self.guards[i] = compile_expr(tr.guard, labels)
            acts = []
            for a in tr.actions:
                if isinstance(a, Assign):
                    acts.append(("assign", a.target, compile_expr(a.expr, labels)))
                elif isinstance(a, ResetTimer):
                    acts.append(("reset", a.timer, None))
                else:
                    f = compile_expr(a.payload, labels) if a.payload is not None else None
                    acts.append(("emit", a.event, f))
            self.actions[i] = acts
        self.by_state: dict = {}
        for i, tr in enumerate(m.transitions):
            self.by_state.setdefault(tr.source, []).append(i)
        self.periods = {t.name: compile_expr(t.period, labels) for t in m.timers}
        self.var_types = {v.name: v.type for v in m.vars}


_CACHE: dict = {}


def _compiled(m: FsmModel, params: dict) -> _Compiled:
    key = (id(m), tuple(sorted(params.items())))
    hit = _CACHE.get(key)
    if hit is None or hit[0] is not m:
        hit = (m, _Compiled(m, params))
        if len(_CACHE) > 256:
            _CACHE.clear()
        _CACHE[key] = hit
    return hit[1]


def fsm_initial(m: FsmModel, params: Optional[dict] = None) -> FsmState:
    env = params if params is not None else m.param_values()
    labels = frozenset(m.labels)
    signals = {v.name: coerce(compile_expr(v.init, labels)(env), v.type) for v in m.vars}
    return FsmState(
        current=m.initial,
        signals=signals,
        timers={t.name: None for t in m.timers},
        inputs=input_defaults(m.inputs, env, labels),
    )


def fsm_step(m: FsmModel, s: FsmState, inputs=(), now: SimTime = 0, params: Optional[dict] = None) -> FsmStep:
    """Fire at most one transition of ``m`` from state ``s``."""
    params = params if params is not None else m.param_values()
    comp = _compiled(m, params)
    level = {d.name: d for d in m.inputs}
    pulses = {d.name for d in m.events}
    timer_events = m.timer_events

    latched = dict(s.inputs)
    present = set()
    for ev in inputs:
        if ev.name in level:
            try:
                latched[ev.name] = latch_value(level[ev.name], ev.payload)
            except ValueError as exc:
                raise ExecutionError(str(exc)) from None
        elif ev.name in pulses or ev.name in timer_events:
            present.add(ev.name)
        else:
            raise ExecutionError(f"fsm {m.name!r} has no input named {ev.name!r}")

    timers = dict(s.timers)
    for t in m.timers:
        expiry = timers.get(t.name)
        if expiry is not None and now >= expiry:
            present.add(t.event)
            timers[t.name] = None

    env = dict(params)
    env.update(latched)
    env.update(s.signals)
    for name in pulses:
        env[name] = name in present
    for name in timer_events:
        env[name] = name in present

    current = s.current
    signals = dict(s.signals)
    assignments: list = []
    emitted: list = []
    for i in comp.by_state.get(current, ()):
        if not comp.guards[i](env):
            continue
        tr = m.transitions[i]
        if tr.target != current:
            timers = {name: None for name in timers}
        for kind, name, f in comp.actions[i]:
            if kind == "assign":
                if name not in comp.var_types:
                    raise ExecutionError(f"assignment to undeclared signal {name!r}")
                v = coerce(f(env), comp.var_types[name])
                signals[name] = v
                env[name] = v
                assignments.append((name, v))
            elif kind == "reset":
                period = comp.periods[name](env)
                timers[name] = now + round(period * NS_PER_S)
            else:
                emitted.append(Event(name, f(env) if f is not None else None, now))
        current = tr.target
        break

    new = FsmState(current, signals, timers, latched)
    if new == s:
        new = s
    return FsmStep(new, assignments, emitted)
