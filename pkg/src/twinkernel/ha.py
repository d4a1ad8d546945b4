"""Hybrid automaton executor.

Continuous variables evolve under per-location flows integrated with the
classical fourth-order Runge-Kutta method on a fixed sub-step.  Urgent
edge guards and location invariants are monitored at every sub-step end;
when one trips, the crossing is bisected on the nanosecond grid and the
jump is committed at the crossing time.  Non-urgent edges are evaluated
at micro-iteration points only: the macro-step start and every committed
jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

from .core import NS_PER_S, Event, SimTime
from .decls import (
    check_input_decls,
    check_params,
    eval_params,
    input_defaults,
    latch_value,
)
from .diagnostics import NOWHERE, Diagnostic, Span, error, pick
from .errors import (
    CrossingAmbiguityError,
    ExecutionError,
    InvariantViolationError,
    NumericDivergenceError,
    ZenoError,
)
from .expr import (
    BOOL,
    REAL,
    Expr,
    Scope,
    TypeCheckError,
    check_assign,
    compile_expr,
    is_numeric,
    literal,
    type_of,
)

DEFAULT_SUBSTEP = 1_000_000  # 1 ms
DEFAULT_SAMPLE = 100_000_000  # 0.1 s
DEFAULT_MAX_JUMPS = 1000
EPS_INV = 1e-9
_AMBIGUITY_PROBES = 16


@dataclass(frozen=True)
class Flow:
    var: str
    rate: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Location:
    name: str
    flows: tuple = ()
    invariant: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class HaEdge:
    source: str
    target: str
    guard: Optional[Expr] = None
    urgent: bool = False
    triggers: tuple = ()
    resets: tuple = ()
    emits: tuple = ()
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class ContVar:
    name: str
    init: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class HaModel:
    name: str
    locations: tuple
    initial: str
    vars: tuple = ()
    edges: tuple = ()
    params: tuple = ()
    inputs: tuple = ()
    events: tuple = ()
    labels: dict = field(default_factory=dict, compare=False, repr=False)
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    @property
    def var_names(self) -> tuple:
        return tuple(v.name for v in self.vars)

    def location(self, name) -> Location:
        for loc in self.locations:
            if loc.name == name:
                return loc
        raise KeyError(name)

    def param_values(self, overrides=None):
        return eval_params(self.params, overrides, frozenset(self.labels))

    def with_params(self, overrides: dict) -> "HaModel":
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
        return {em.event for e in self.edges for em in e.emits}


@dataclass(frozen=True)
class HaState:
    location: str
    values: dict
    inputs: dict = field(default_factory=dict)


class HaAdvance(NamedTuple):
    state: HaState
    events: list  # Event, stamped with absolute time
    samples: list  # (t, {var: value})
    jumps: list  # (t, from_location, to_location)


# ---------------------------------------------------------------- validation


def ha_validate(m: HaModel) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    labels = m.labels
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
    pscope = Scope(dict(param_types), labels)
    for v in m.vars:
        try:
            check_assign(v.init, REAL, pscope, f"initial value of {v.name!r}")
        except TypeCheckError as exc:
            diags.append(error(str(exc), pick(exc.span, v.span)))
        declare(v.name, v.span, REAL)
    scope = Scope(symbols, labels)
    var_names = set(m.var_names)

    locs = set()
    for loc in m.locations:
        if loc.name in locs:
            diags.append(error(f"duplicate location {loc.name!r}", loc.span))
        locs.add(loc.name)
        flowed = set()
        for f in loc.flows:
            if f.var not in var_names:
                diags.append(error(f"flow for undeclared variable {f.var!r}", pick(f.span, loc.span)))
            if f.var in flowed:
                diags.append(error(f"duplicate flow for {f.var!r} in {loc.name!r}", pick(f.span, loc.span)))
            flowed.add(f.var)
            try:
                t = type_of(f.rate, scope)
                if not is_numeric(t):
                    diags.append(error(f"flow rate of {f.var!r} must be a number, got {t}", pick(f.span, loc.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, loc.span)))
        if loc.invariant is not None:
            try:
                t = type_of(loc.invariant, scope)
                if t is not BOOL:
                    diags.append(error(f"invariant must be bool, got {t}", pick(loc.invariant.span, loc.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, loc.span)))
    if m.initial not in locs:
        diags.append(error(f"unknown location {m.initial!r} (initial)", m.span))

    event_names = {d.name for d in m.events}
    for e in m.edges:
        for end in (e.source, e.target):
            if end not in locs:
                diags.append(error(f"unknown location {end!r}", e.span))
        for trig in e.triggers:
            if trig not in event_names:
                diags.append(error(f"unknown symbol {trig!r} (trigger event)", e.span))
        if e.guard is not None:
            try:
                t = type_of(e.guard, scope)
                if t is not BOOL:
                    diags.append(error(f"guard must be bool, got {t}", pick(e.guard.span, e.span)))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, e.span)))
        if e.urgent and e.guard is None:
            diags.append(error("urgent edge needs a guard", e.span))
        for a in e.resets:
            if a.target not in var_names:
                diags.append(error(f"reset of undeclared variable {a.target!r}", pick(a.span, e.span)))
                continue
            try:
                check_assign(a.expr, REAL, scope, f"reset of {a.target!r}")
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, e.span)))
        for em in e.emits:
            if em.payload is not None:
                try:
                    type_of(em.payload, scope)
                except TypeCheckError as exc:
                    diags.append(error(str(exc), pick(exc.span, e.span)))
    return diags


# ---------------------------------------------------------------- compiled form


class _CompiledEdge:
    __slots__ = ("index", "edge", "guard", "resets", "emits")

    def __init__(self, index, edge, labels):
        self.index = index
        self.edge = edge
        self.guard = compile_expr(edge.guard, labels) if edge.guard is not None else None
        self.resets = [(a.target, compile_expr(a.expr, labels)) for a in edge.resets]
        self.emits = [(em.event, compile_expr(em.payload, labels) if em.payload is not None else None) for em in edge.emits]


class _Compiled:
    def __init__(self, m: HaModel):
        labels = frozenset(m.labels)
        self.labels = labels
        self.names = m.var_names
        self.rates = {}
        self.invariants = {}
        for loc in m.locations:
            by_var = {f.var: compile_expr(f.rate, labels) for f in loc.flows}
            self.rates[loc.name] = [by_var.get(n) for n in self.names]
            self.invariants[loc.name] = compile_expr(loc.invariant, labels) if loc.invariant is not None else None
        self.edges = {}
        for i, e in enumerate(m.edges):
            self.edges.setdefault(e.source, []).append(_CompiledEdge(i, e, labels))
        self.levels = {d.name: d for d in m.inputs}
        self.pulses = {d.name for d in m.events}


_CACHE: dict = {}


def _compiled(m: HaModel) -> _Compiled:
    hit = _CACHE.get(id(m))
    if hit is None or hit[0] is not m:
        hit = (m, _Compiled(m))
        if len(_CACHE) > 256:
            _CACHE.clear()
        _CACHE[id(m)] = hit
    return hit[1]


def _deriv(comp: _Compiled, location: str, base: dict) -> Callable:
    rates = comp.rates[location]
    names = comp.names
    if all(r is None for r in rates):
        zero = [0.0] * len(names)
        return lambda y: zero
    env = dict(base)

    def f(y):
        for n, v in zip(names, y):
            env[n] = v
        return [0.0 if r is None else r(env) for r in rates]

    return f


def _rk4(f, y, h):
    k1 = f(y)
    y2 = [a + 0.5 * h * b for a, b in zip(y, k1)]
    k2 = f(y2)
    y3 = [a + 0.5 * h * b for a, b in zip(y, k2)]
    k3 = f(y3)
    y4 = [a + h * b for a, b in zip(y, k3)]
    k4 = f(y4)
    return [a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


def _check_finite(y, names, where):
    for n, v in zip(names, y):
        if not math.isfinite(v):
            raise NumericDivergenceError(f"variable {n!r} became {v} {where}")


def ha_initial(m: HaModel, params: Optional[dict] = None) -> HaState:
    env = params if params is not None else m.param_values()
    labels = frozenset(m.labels)
    values = {v.name: float(compile_expr(v.init, labels)(env)) for v in m.vars}
    return HaState(m.initial, values, input_defaults(m.inputs, env, labels))


def _base_env(params, s: HaState, pulses=()):
    env = dict(params)
    env.update(s.inputs)
    return env


# ---------------------------------------------------------------- public ops


def integrate_step(m: HaModel, s: HaState, h: float, params: Optional[dict] = None) -> HaState:
    """Advance the continuous state by one RK4 step of ``h`` seconds."""
    if not h > 0:
        raise ValueError("step size must be positive")
    params = params if params is not None else m.param_values()
    comp = _compiled(m)
    base = _base_env(params, s)
    for name in comp.pulses:
        base[name] = False
    f = _deriv(comp, s.location, base)
    y = [s.values[n] for n in comp.names]
    y = _rk4(f, y, h)
    _check_finite(y, comp.names, f"after a step of {h} s")
    return HaState(s.location, dict(zip(comp.names, y)), s.inputs)


def _bisect(pred_at: Callable[[int], bool], lo: int, hi: int) -> int:
    """Earliest ns offset in (lo, hi] where ``pred_at`` holds.

    Requires pred_at(lo) false and pred_at(hi) true.  Before bisecting,
    the bracket is probed at evenly spaced points; a truth pattern that is
    not false-then-true means the predicate changes more than once below
    the sub-step resolution.
    """
    span = hi - lo
    if span > _AMBIGUITY_PROBES:
        probes = [lo + span * k // _AMBIGUITY_PROBES for k in range(1, _AMBIGUITY_PROBES)]
        truth = [pred_at(p) for p in probes]
        first = next((i for i, v in enumerate(truth) if v), len(truth))
        if not all(truth[first:]):
            raise CrossingAmbiguityError(
                f"predicate changes more than once within [{lo}, {hi}] ns"
            )
        if first < len(probes):
            hi = probes[first]
        if first > 0:
            lo = probes[first - 1]
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        if pred_at(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _as_predicate(m: HaModel, predicate) -> Callable[[dict], bool]:
    if callable(predicate):
        return predicate
    if isinstance(predicate, str):
        from .modelspec.parser import parse_expression

        predicate = parse_expression(predicate)
    return compile_expr(predicate, frozenset(m.labels))


def locate_crossing(m: HaModel, s: HaState, predicate, h: float, params: Optional[dict] = None,
                    substep: SimTime = DEFAULT_SUBSTEP) -> Optional[float]:
    """Earliest time in ``[0, h]`` seconds at which ``predicate`` turns true.

    The flow of the current location is integrated with RK4 sub-steps; the
    first sub-step whose end satisfies the predicate is bisected down to a
    1 ns bracket by re-integrating from the sub-step start.  Returns None
    if the predicate never holds at a sub-step end.
    """
    params = params if params is not None else m.param_values()
    comp = _compiled(m)
    pred = _as_predicate(m, predicate)
    base = _base_env(params, s)
    for name in comp.pulses:
        base[name] = False
    f = _deriv(comp, s.location, base)
    names = comp.names

    def holds(y):
        env = dict(base)
        env.update(zip(names, y))
        return bool(pred(env))

    y = [s.values[n] for n in names]
    if holds(y):
        raise ValueError("predicate already holds at the start state")
    h_ns = round(h * NS_PER_S)
    t = 0
    while t < h_ns:
        end = min(t + substep, h_ns)
        y1 = _rk4(f, y, (end - t) / NS_PER_S)
        _check_finite(y1, names, "during crossing search")
        if holds(y1):
            y0, t0 = y, t
            hit = _bisect(lambda tau: holds(_rk4(f, y0, (tau - t0) / NS_PER_S)), t0, end)
            return hit / NS_PER_S
        y, t = y1, end
    return None


def ha_advance(m: HaModel, s: HaState, inputs=(), delta: SimTime = 10_000_000, *,
               t_start: SimTime = 0, params: Optional[dict] = None,
               substep: SimTime = DEFAULT_SUBSTEP, sample_period: Optional[SimTime] = DEFAULT_SAMPLE,
               max_jumps: int = DEFAULT_MAX_JUMPS) -> HaAdvance:
    """Advance ``m`` over one macro step ``[t_start, t_start + delta]``.

    Input events latch level inputs and offer pulse events to edges at the
    step start.  Returns the new state, emitted events (absolute stamps),
    trajectory samples at multiples of ``sample_period`` inside
    ``(t_start, t_start + delta]`` and the committed jumps.
    """
    if delta <= 0:
        raise ValueError("macro step must be positive")
    params = params if params is not None else m.param_values()
    comp = _compiled(m)
    names = comp.names

    latched = dict(s.inputs)
    pulses: dict = {}
    for ev in inputs:
        if ev.name in comp.levels:
            try:
                latched[ev.name] = latch_value(comp.levels[ev.name], ev.payload)
            except ValueError as exc:
                raise ExecutionError(str(exc)) from None
        elif ev.name in comp.pulses:
            pulses.setdefault(ev.name, []).append(ev)
        else:
            raise ExecutionError(f"hybrid automaton {m.name!r} has no input named {ev.name!r}")

    base = dict(params)
    base.update(latched)
    location = s.location
    y = [s.values[n] for n in names]
    events: list = []
    samples: list = []
    jumps: list = []
    n_jumps = 0

    def env_of(yv, with_pulses):
        env = dict(base)
        for name in comp.pulses:
            env[name] = bool(with_pulses and pulses.get(name))
        env.update(zip(names, yv))
        return env

    def discrete(offset, yv, with_pulses):
        nonlocal location, n_jumps
        while True:
            env = env_of(yv, with_pulses)
            chosen = None
            for ce in comp.edges.get(location, ()):
                if ce.edge.triggers:
                    if not with_pulses or not all(pulses.get(tr) for tr in ce.edge.triggers):
                        continue
                if ce.guard is None or ce.guard(env):
                    chosen = ce
                    break
            if chosen is None:
                return yv
            n_jumps += 1
            if n_jumps > max_jumps:
                raise ZenoError(
                    f"{m.name}: more than {max_jumps} discrete transitions within one macro step "
                    f"(at {location!r}, t={(t_start + offset) / NS_PER_S!r}s)"
                )
            for tr in chosen.edge.triggers:
                pulses[tr].pop(0)
            new_vals = {name: float(f(env)) for name, f in chosen.resets}
            if new_vals:
                yv = [new_vals.get(n, v) for n, v in zip(names, yv)]
            stamp = t_start + offset
            for name, f in chosen.emits:
                events.append(Event(name, f(env) if f is not None else None, stamp))
            jumps.append((stamp, location, chosen.edge.target))
            location = chosen.edge.target

    def check_invariant(offset, yv):
        inv = comp.invariants[location]
        if inv is not None and not inv(env_of(yv, False)):
            raise InvariantViolationError(
                f"{m.name}: invariant of {location!r} violated at t={(t_start + offset) / NS_PER_S!r}s "
                "with no enabled edge"
            )

    y = discrete(0, y, True)
    check_invariant(0, y)

    if sample_period:
        first = (t_start // sample_period + 1) * sample_period
        sample_offsets = list(range(first - t_start, delta + 1, sample_period))
    else:
        sample_offsets = []
    si = 0

    t = 0
    f = _deriv(comp, location, env_of(y, False))
    while t < delta:
        if all(r is None for r in comp.rates[location]):
            # constant state: guards and invariants cannot change until the
            # next step delivers new inputs
            while si < len(sample_offsets):
                samples.append((t_start + sample_offsets[si], dict(zip(names, y))))
                si += 1
            break
        nxt = min(t + substep, delta)
        if si < len(sample_offsets) and sample_offsets[si] < nxt:
            nxt = sample_offsets[si]
        y1 = _rk4(f, y, (nxt - t) / NS_PER_S)
        _check_finite(y1, names, f"in {location!r} at t={(t_start + nxt) / NS_PER_S!r}s")

        # monitored predicates: urgent, trigger-free edges, then the invariant
        monitors = []
        for ce in comp.edges.get(location, ()):
            if ce.edge.urgent and not ce.edge.triggers:
                monitors.append(ce.guard)
        inv = comp.invariants[location]
        if inv is not None:
            monitors.append(lambda env, inv=inv: not inv(env))
        tripped = [p for p in monitors if p(env_of(y1, False))]
        if tripped:
            y0, t0, f0 = y, t, f

            def state_at(tau):
                return _rk4(f0, y0, (tau - t0) / NS_PER_S)

            best = None
            for p in tripped:
                hit = _bisect(lambda tau, p=p: bool(p(env_of(state_at(tau), False))), t0, nxt)
                if best is None or hit < best:
                    best = hit
            y = state_at(best)
            t = best
            before = location
            y = discrete(t, y, False)
            if location == before:
                check_invariant(t, y)
                # guard tripped but the edge was not taken: nothing to commit
                raise InvariantViolationError(
                    f"{m.name}: urgent condition in {location!r} at t={(t_start + t) / NS_PER_S!r}s enabled no edge"
                )
            check_invariant(t, y)
            f = _deriv(comp, location, env_of(y, False))
            if si < len(sample_offsets) and sample_offsets[si] == t:
                samples.append((t_start + t, dict(zip(names, y))))
                si += 1
            continue
        y, t = y1, nxt
        if si < len(sample_offsets) and sample_offsets[si] == t:
            samples.append((t_start + t, dict(zip(names, y))))
            si += 1

    return HaAdvance(HaState(location, dict(zip(names, y)), latched), events, samples, jumps)
