"""Digital twin components and the GALS system runtime.

A DTC advances in macro steps of ``delta`` nanoseconds.  Each step has two
phases:

* Phase A: every hybrid automaton instance integrates over the step with
  the inputs it holds at the step start.
* Phase B: the discrete instances (FSM, net, replay) step repeatedly in
  declaration order, exchanging wired events, until nothing changes.
  Events emitted by Phase A are consumed here, in the same macro step.

Wires into a hybrid automaton take effect at the next macro step, since
its trajectory for the current step is already committed.  DTCs talk to
each other only through channels whose latency is a whole number of
macro steps.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import NS_PER_S, Event, SimTime, Trace, TraceRecord
from .cpn import CpnNet, CpnState, _fire, cpn_step, format_token, initial_state
from .decls import latch_value
from .diagnostics import NOWHERE, Diagnostic, Span, error
from .errors import NonConvergenceError, SimulationError, TwinKernelError
from .fsm import FsmModel, fsm_initial, fsm_step
from .ha import DEFAULT_MAX_JUMPS, DEFAULT_SAMPLE, DEFAULT_SUBSTEP, HaModel, ha_advance, ha_initial

log = logging.getLogger(__name__)

DEFAULT_DELTA = 10_000_000  # 0.01 s
DEFAULT_MAX_MICRO_ITERS = 64
KERNEL = "@kernel"


# ---------------------------------------------------------------- specs


@dataclass(frozen=True)
class ReplayModel:
    """Plays back recorded samples as events, one event per changed value."""

    name: str
    signals: tuple
    records: tuple  # (t, signal, value), time-sorted


@dataclass(frozen=True)
class InstanceSpec:
    id: str
    model: object  # FsmModel | CpnNet | HaModel | ReplayModel
    params: dict = field(default_factory=dict)
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    @property
    def kind(self) -> str:
        if isinstance(self.model, FsmModel):
            return "fsm"
        if isinstance(self.model, CpnNet):
            return "cpn" if self.model.coloured else "pn"
        if isinstance(self.model, HaModel):
            return "ha"
        if isinstance(self.model, ReplayModel):
            return "replay"
        raise TypeError(f"unsupported model {type(self.model).__name__}")


@dataclass(frozen=True)
class Endpoint:
    """``owner`` is an instance id, or None for a port of the DTC itself."""

    owner: Optional[str]
    name: str

    def __str__(self):
        return self.name if self.owner is None else f"{self.owner}.{self.name}"


@dataclass(frozen=True)
class Wire:
    src: Endpoint
    dst: Endpoint
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class DtcSpec:
    id: str
    instances: tuple
    wires: tuple = ()
    inputs: tuple = ()  # port names
    outputs: tuple = ()
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    def instance(self, iid) -> InstanceSpec:
        for inst in self.instances:
            if inst.id == iid:
                return inst
        raise KeyError(iid)


@dataclass(frozen=True)
class Channel:
    id: str
    src_dtc: str
    src_port: str
    dst_dtc: str
    dst_port: str
    latency: int = 1
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Stimulus:
    t: SimTime
    dtc: str
    port: str
    payload: object = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class SystemSpec:
    dtcs: tuple
    channels: tuple = ()
    delta: SimTime = DEFAULT_DELTA
    horizon: SimTime = NS_PER_S
    stimuli: tuple = ()
    sample_period: SimTime = DEFAULT_SAMPLE
    substep: SimTime = DEFAULT_SUBSTEP
    max_micro_iters: int = DEFAULT_MAX_MICRO_ITERS
    max_jumps: int = DEFAULT_MAX_JUMPS
    name: str = "system"
    span: Span = field(default=NOWHERE, compare=False, repr=False)

    def dtc(self, did) -> DtcSpec:
        for d in self.dtcs:
            if d.id == did:
                return d
        raise KeyError(did)

    @property
    def steps(self) -> int:
        return -(-self.horizon // self.delta)


# ---------------------------------------------------------------- names


def _consumes(inst: InstanceSpec) -> set:
    m = inst.model
    if isinstance(m, (FsmModel, HaModel)):
        return {d.name for d in m.inputs} | {d.name for d in m.events}
    if isinstance(m, CpnNet):
        return {d.name for d in m.events}
    return set()


def _event_outputs(inst: InstanceSpec) -> set:
    m = inst.model
    if isinstance(m, ReplayModel):
        return set(m.signals)
    return set(m.emitted_events())


def _signal_outputs(inst: InstanceSpec) -> set:
    m = inst.model
    if isinstance(m, FsmModel):
        return {v.name for v in m.vars}
    if isinstance(m, HaModel):
        return set(m.var_names)
    return set()


def dtc_validate(dtc: DtcSpec) -> list[Diagnostic]:
    """Wire and port checks; model-level checks are the executors' job."""
    diags: list[Diagnostic] = []
    ids = set()
    for inst in dtc.instances:
        if inst.id in ids:
            diags.append(error(f"duplicate instance {inst.id!r}", inst.span))
        ids.add(inst.id)
        if isinstance(inst.model, ReplayModel):
            continue
        try:
            inst.model.param_values(inst.params)
        except KeyError as exc:
            diags.append(error(f"instance {inst.id!r}: {exc.args[0]}", inst.span))
    ports = set()
    for p in tuple(dtc.inputs) + tuple(dtc.outputs):
        if p in ports or p in ids:
            diags.append(error(f"port name collision: {p!r}", dtc.span))
        ports.add(p)
    by_id = {i.id: i for i in dtc.instances}
    for w in dtc.wires:
        span = w.span if w.span is not NOWHERE else dtc.span
        src, dst = w.src, w.dst
        if src.owner is None:
            if src.name not in dtc.inputs:
                diags.append(error(f"unknown input port {src.name!r}", span))
        elif src.owner not in by_id:
            diags.append(error(f"unknown instance {src.owner!r}", span))
        else:
            inst = by_id[src.owner]
            if src.name not in _event_outputs(inst) | _signal_outputs(inst):
                diags.append(error(f"instance {src.owner!r} produces no event or signal {src.name!r}", span))
        if dst.owner is None:
            if dst.name not in dtc.outputs:
                diags.append(error(f"unknown output port {dst.name!r}", span))
        elif dst.owner not in by_id:
            diags.append(error(f"unknown instance {dst.owner!r}", span))
        else:
            inst = by_id[dst.owner]
            if dst.name not in _consumes(inst):
                diags.append(error(f"instance {dst.owner!r} has no input {dst.name!r}", span))
    return diags


def system_validate(sys: SystemSpec) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    if sys.delta <= 0:
        diags.append(error("macro step must be positive", sys.span))
    if sys.substep <= 0:
        diags.append(error("integration sub-step must be positive", sys.span))
    if sys.sample_period <= 0:
        diags.append(error("sample period must be positive", sys.span))
    ids = set()
    for d in sys.dtcs:
        if d.id in ids:
            diags.append(error(f"duplicate component {d.id!r}", d.span))
        ids.add(d.id)
        diags.extend(dtc_validate(d))
    by_id = {d.id: d for d in sys.dtcs}
    cids = set()
    for c in sys.channels:
        span = c.span if c.span is not NOWHERE else sys.span
        if c.id in cids:
            diags.append(error(f"duplicate channel {c.id!r}", span))
        cids.add(c.id)
        if c.latency < 1:
            diags.append(error(f"channel {c.id!r}: latency must be at least 1 macro step", span))
        src, dst = by_id.get(c.src_dtc), by_id.get(c.dst_dtc)
        if src is None:
            diags.append(error(f"unknown component {c.src_dtc!r}", span))
        elif c.src_port not in src.outputs:
            diags.append(error(f"component {c.src_dtc!r} has no output port {c.src_port!r}", span))
        if dst is None:
            diags.append(error(f"unknown component {c.dst_dtc!r}", span))
        elif c.dst_port not in dst.inputs:
            diags.append(error(f"component {c.dst_dtc!r} has no input port {c.dst_port!r}", span))
    for st in sys.stimuli:
        span = st.span if st.span is not NOWHERE else sys.span
        if st.t > sys.horizon:
            diags.append(error(f"stimulus at {st.t / NS_PER_S!r}s lies beyond the horizon", span))
        d = by_id.get(st.dtc)
        if d is None:
            diags.append(error(f"unknown component {st.dtc!r}", span))
        elif st.port not in d.inputs:
            diags.append(error(f"component {st.dtc!r} has no input port {st.port!r}", span))
    return diags


# ---------------------------------------------------------------- channels


@dataclass
class ChannelQueue:
    channel: Channel
    queue: deque = field(default_factory=deque)  # (deliver_step, send_step, Event)

    def send(self, step: int, ev: Event) -> None:
        self.queue.append((step + self.channel.latency, step, ev))


def channel_deliver(queues, step: int) -> dict:
    """Dequeue messages due at ``step``, grouped by destination DTC.

    Within a destination, channels are visited in id order and each
    channel's messages keep their send order.
    """
    out: dict = {}
    for q in sorted(queues, key=lambda q: q.channel.id):
        c = q.channel
        while q.queue and q.queue[0][0] <= step:
            due, _, ev = q.queue.popleft()
            if due < step:
                raise TwinKernelError(f"channel {c.id!r} missed delivery step {due}")
            out.setdefault(c.dst_dtc, []).append(Event(c.dst_port, ev.payload, ev.stamp))
    return out


# ---------------------------------------------------------------- DTC runtime


@dataclass
class DtcState:
    states: dict  # instance id -> executor state
    params: dict  # instance id -> evaluated parameters
    ha_inbox: dict  # instance id -> events for the next Phase A
    last: dict  # (instance id, signal) -> last value sent over a wire
    replay_pos: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StepConfig:
    substep: SimTime = DEFAULT_SUBSTEP
    sample_period: SimTime = DEFAULT_SAMPLE
    max_micro_iters: int = DEFAULT_MAX_MICRO_ITERS
    max_jumps: int = DEFAULT_MAX_JUMPS


def _trace_value(v):
    if isinstance(v, tuple):
        return format_token(v)
    return v


def _source(dtc, iid):
    return f"{dtc.id}.{iid}"


def _signal_values(inst, state) -> dict:
    if inst.kind == "fsm":
        return dict(state.signals)
    if inst.kind == "ha":
        return dict(state.values)
    return {}


def _state_records(dtc, inst, state, t) -> list:
    src = _source(dtc, inst.id)
    recs = []
    if inst.kind == "fsm":
        recs.append(TraceRecord(t, src, "location", "location", state.current))
    elif inst.kind == "ha":
        recs.append(TraceRecord(t, src, "location", "location", state.location))
    elif inst.kind in ("cpn", "pn"):
        recs.append(TraceRecord(t, src, "marking", "marking", str(state.marking)))
    for name, v in sorted(_signal_values(inst, state).items()):
        recs.append(TraceRecord(t, src, "signal", name, _trace_value(v)))
    return recs


def dtc_initial(dtc: DtcSpec) -> tuple:
    """Initial state and the records describing it at t=0."""
    states, params, ha_inbox, last = {}, {}, {}, {}
    records = []
    for inst in dtc.instances:
        m = inst.model
        if inst.kind == "replay":
            params[inst.id] = {}
            states[inst.id] = None
            continue
        env = m.param_values(inst.params)
        params[inst.id] = env
        if inst.kind == "fsm":
            states[inst.id] = fsm_initial(m, env)
        elif inst.kind == "ha":
            states[inst.id] = ha_initial(m, env)
            ha_inbox[inst.id] = []
        else:
            states[inst.id] = initial_state(m, env)
        records.extend(_state_records(dtc, inst, states[inst.id], 0))
    st = DtcState(states, params, ha_inbox, last, {i.id: 0 for i in dtc.instances if i.kind == "replay"})
    # consumers of signal wires start from the producer's initial value
    by_id = {i.id: i for i in dtc.instances}
    for w in dtc.wires:
        if w.src.owner is None or w.dst.owner is None:
            continue
        src = by_id[w.src.owner]
        values = _signal_values(src, states[src.id])
        if w.src.name in values and w.src.name not in _event_outputs(src):
            st.last[(src.id, w.src.name)] = values[w.src.name]
            dst = by_id[w.dst.owner]
            ev = Event(w.dst.name, values[w.src.name], 0)
            if dst.kind == "ha":
                st.ha_inbox[dst.id].append(ev)
            else:
                st.states[dst.id] = _latch_initial(dst, st.states[dst.id], ev, params[dst.id])
    return st, records


def _latch_initial(inst, state, ev, params):
    """Preset a level input of a discrete consumer without stepping it."""
    if inst.kind != "fsm":
        return state
    inputs = dict(state.inputs)
    for d in inst.model.inputs:
        if d.name == ev.name:
            inputs[d.name] = latch_value(d, ev.payload)
    return replace(state, inputs=inputs)


class _Router:
    """Fans events out along the DTC's wires."""

    def __init__(self, dtc: DtcSpec):
        self.dtc = dtc
        self.by_id = {i.id: i for i in dtc.instances}
        self.routes: dict = {}
        for w in dtc.wires:
            self.routes.setdefault((w.src.owner, w.src.name), []).append(w.dst)
        self.signal_src = set()
        for w in dtc.wires:
            if w.src.owner is not None:
                inst = self.by_id[w.src.owner]
                if w.src.name in _signal_outputs(inst) and w.src.name not in _event_outputs(inst):
                    self.signal_src.add((w.src.owner, w.src.name))

    def route(self, owner, name, payload, stamp, inbox, ha_next, outputs):
        for dst in self.routes.get((owner, name), ()):
            ev = Event(dst.name, payload, stamp)
            if dst.owner is None:
                outputs.append(ev)
            elif self.by_id[dst.owner].kind == "ha":
                ha_next[dst.owner].append(ev)
            else:
                inbox[dst.owner].append(ev)


_ROUTERS: dict = {}


def _router(dtc):
    hit = _ROUTERS.get(id(dtc))
    if hit is None or hit[0] is not dtc:
        hit = (dtc, _Router(dtc))
        if len(_ROUTERS) > 256:
            _ROUTERS.clear()
        _ROUTERS[id(dtc)] = hit
    return hit[1]


def _sample_points(t, delta, period):
    first = (t // period + 1) * period
    return range(first, t + delta + 1, period)


def dtc_macro_step(dtc: DtcSpec, st: DtcState, inputs, t: SimTime, delta: SimTime,
                   config: StepConfig = StepConfig()) -> tuple:
    """Advance one DTC over ``[t, t + delta]``.

    ``inputs`` are events addressed to the DTC's input ports.  Returns
    ``(state', outputs, records)`` where outputs are events on output
    ports.
    """
    router = _router(dtc)
    states = dict(st.states)
    last = dict(st.last)
    records: list = []
    outputs: list = []
    discrete = [i for i in dtc.instances if i.kind != "ha"]
    inbox = {i.id: [] for i in discrete}
    ha_now = {iid: list(evs) for iid, evs in st.ha_inbox.items()}
    ha_next = {iid: [] for iid in st.ha_inbox}
    replay_pos = dict(st.replay_pos)

    for ev in inputs:
        records.append(TraceRecord(ev.stamp, dtc.id, "event", ev.name, _trace_value(ev.payload)))
        router.route(None, ev.name, ev.payload, ev.stamp, inbox, ha_now, outputs)

    def emit(inst, ev):
        records.append(TraceRecord(ev.stamp, _source(dtc, inst.id), "event", ev.name, _trace_value(ev.payload)))
        router.route(inst.id, ev.name, ev.payload, ev.stamp, inbox, ha_next, outputs)

    def signals_out(inst, values, stamp):
        for name, v in values:
            key = (inst.id, name)
            if key in router.signal_src and last.get(key) != v:
                last[key] = v
                router.route(inst.id, name, v, stamp, inbox, ha_next, outputs)

    # Phase A
    for inst in dtc.instances:
        if inst.kind != "ha":
            continue
        src = _source(dtc, inst.id)
        r = ha_advance(
            inst.model, states[inst.id], ha_now[inst.id], delta, t_start=t,
            params=st.params[inst.id], substep=config.substep,
            sample_period=config.sample_period, max_jumps=config.max_jumps,
        )
        states[inst.id] = r.state
        for when, _, to in r.jumps:
            records.append(TraceRecord(when, src, "location", "location", to))
        for when, values in r.samples:
            for name, v in sorted(values.items()):
                records.append(TraceRecord(when, src, "signal", name, v))
        for ev in r.events:
            # HA events reach discrete consumers in this step, HA ones in the next
            emit(inst, ev)
        signals_out(inst, sorted(r.state.values.items()), t + delta)

    # Phase B
    clock = t
    for it in range(config.max_micro_iters + 1):
        active = []
        for inst in discrete:
            evs = inbox[inst.id]
            inbox[inst.id] = []
            if evs:
                clock = max(clock, max(e.stamp for e in evs))
            src = _source(dtc, inst.id)
            if inst.kind == "fsm":
                s0 = states[inst.id]
                r = fsm_step(inst.model, s0, evs, clock, st.params[inst.id])
                if r.state != s0 or r.events:
                    active.append(inst.id)
                    states[inst.id] = r.state
                    if r.state.current != s0.current:
                        records.append(TraceRecord(clock, src, "location", "location", r.state.current))
                for ev in r.events:
                    emit(inst, ev)
                signals_out(inst, r.assignments, clock)
            elif inst.kind in ("cpn", "pn"):
                s0 = states[inst.id]
                r = cpn_step(inst.model, s0, evs, clock, st.params[inst.id])
                states[inst.id] = r.state
                if r.fired:
                    active.append(inst.id)
                    for b, m in zip(r.fired, _markings(inst.model, s0, evs, r.fired, clock, st.params[inst.id])):
                        records.append(TraceRecord(clock, src, "event", b.transition, str(b) or "()"))
                        records.append(TraceRecord(clock, src, "marking", "marking", str(m)))
                for ev in r.events:
                    emit(inst, ev)
            else:  # replay
                if it == 0:
                    recs = inst.model.records
                    pos = replay_pos.get(inst.id, 0)
                    while pos < len(recs) and recs[pos][0] < t + delta:
                        when, name, v = recs[pos]
                        pos += 1
                        if when < t:
                            continue
                        key = (inst.id, name)
                        if last.get(key) != v:
                            last[key] = v
                            emit(inst, Event(name, v, max(when, clock)))
                            if inst.id not in active:
                                active.append(inst.id)
                    replay_pos[inst.id] = pos
        if not active:
            break
        if it == config.max_micro_iters:
            raise NonConvergenceError(
                f"dtc {dtc.id!r}: micro phase did not settle after {config.max_micro_iters} iterations "
                f"(still active: {', '.join(active)})",
                active,
            )

    # pending net events do not outlive the macro step
    for inst in discrete:
        if inst.kind in ("cpn", "pn") and states[inst.id].pending:
            states[inst.id] = CpnState(states[inst.id].marking, ())

    # sampled FSM signals
    for inst in discrete:
        if inst.kind != "fsm":
            continue
        src = _source(dtc, inst.id)
        values = sorted(states[inst.id].signals.items())
        for when in _sample_points(t, delta, config.sample_period):
            for name, v in values:
                records.append(TraceRecord(when, src, "signal", name, _trace_value(v)))

    for ev in outputs:
        records.append(TraceRecord(ev.stamp, dtc.id, "event", ev.name, _trace_value(ev.payload)))
    new = DtcState(states, st.params, ha_next, last, replay_pos)
    return new, outputs, records


def _markings(net, s0, evs, fired, now, params):
    """Markings after each firing of a cpn_step, re-derived firing by firing."""
    state = CpnState(s0.marking, tuple(s0.pending) + tuple(evs))
    out = []
    for b in fired:
        state, _ = _fire(net, state, b, (), now, params)
        out.append(state.marking)
    return out


# ---------------------------------------------------------------- system runtime


def system_run(sys: SystemSpec) -> Trace:
    """Run ``sys`` to its horizon; a pure function of the spec."""
    if sys.horizon <= 0:
        raise ValueError("empty horizon")
    if sys.delta <= 0:
        raise ValueError("macro step must be positive")
    config = StepConfig(sys.substep, sys.sample_period, sys.max_micro_iters, sys.max_jumps)
    dtcs = sorted(sys.dtcs, key=lambda d: d.id)
    records: list = []
    states = {}
    for d in dtcs:
        st, recs = dtc_initial(d)
        states[d.id] = st
        records.extend(recs)
    queues = [ChannelQueue(c) for c in sys.channels]
    by_src: dict = {}
    for q in queues:
        by_src.setdefault((q.channel.src_dtc, q.channel.src_port), []).append(q)
    stimuli: dict = {}
    for s in sorted(sys.stimuli, key=lambda s: s.t):
        step = s.t // sys.delta
        if step >= sys.steps:
            step = sys.steps - 1
        stimuli.setdefault(step, []).append(s)

    for k in range(sys.steps):
        t = k * sys.delta
        records.append(TraceRecord(t, KERNEL, "event", "step", k))
        delivered = channel_deliver(queues, k)
        for s in stimuli.get(k, ()):
            delivered.setdefault(s.dtc, []).append(Event(s.port, s.payload, s.t))
        for d in dtcs:
            inputs = [Event(e.name, e.payload, max(e.stamp, t)) for e in delivered.get(d.id, ())]
            try:
                st, outs, recs = dtc_macro_step(d, states[d.id], inputs, t, sys.delta, config)
            except TwinKernelError as exc:
                raise SimulationError(k, d.id, exc) from exc
            states[d.id] = st
            records.extend(recs)
            for ev in outs:
                for q in by_src.get((d.id, ev.name), ()):
                    q.send(k, ev)
    log.info("ran %d macro steps, %d records", sys.steps, len(records))
    return Trace(records)
