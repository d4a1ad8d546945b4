"""Name resolution and type checking: syntax tree to executable specs."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .. import cpn as C
from .. import fsm as F
from .. import ha as H
from ..composition import (
    Channel,
    DtcSpec,
    Endpoint,
    InstanceSpec,
    ReplayModel,
    Stimulus,
    SystemSpec,
    Wire,
    dtc_validate,
    system_validate,
)
from ..core import NS_PER_S
from ..decls import EventDecl, InputDecl, Param
from ..diagnostics import NOWHERE, Diagnostic, error, has_errors, pick
from ..errors import ExecutionError, ModelError, TwinKernelError
from ..expr import DOT, PRIMS, REAL, EnumType, ProductType, TimeLit, compile_expr, literal
from . import ast as A
from .parser import parse_model


@dataclass
class ModelSet:
    """Executable content of a document, keyed by block name."""

    document: A.ModelDocument
    types: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)  # fsm / cpn / pn / ha
    dtcs: dict = field(default_factory=dict)
    systems: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def system(self, name: Optional[str] = None) -> SystemSpec:
        if name is None:
            if len(self.systems) != 1:
                raise KeyError(f"document defines {len(self.systems)} systems; name one")
            return next(iter(self.systems.values()))
        return self.systems[name]


class _Loader:
    def __init__(self, doc: A.ModelDocument, base_dir: Optional[Path]):
        self.doc = doc
        self.base_dir = base_dir
        self.diags: list[Diagnostic] = []
        self.types: dict = dict(PRIMS)
        self.labels: dict = {}
        self.out = ModelSet(doc)

    def err(self, msg, span):
        self.diags.append(error(msg, span if span is not None else NOWHERE))

    # ------------------------------------------------------------ types

    def colorset(self, c: A.ColorsetDecl):
        if c.name in self.types:
            self.err(f"duplicate type name {c.name!r}", c.span)
            return
        if c.name in self.labels:
            self.err(f"type name {c.name!r} clashes with a colour label", c.span)
            return
        if c.kind == "product":
            comps = []
            for item in c.items:
                t = self.types.get(item)
                if t is None:
                    self.err(f"unknown type {item!r}", c.span)
                    return
                comps.append(t)
            self.types[c.name] = ProductType(c.name, tuple(comps))
            return
        if c.kind == "name" and c.items[0] in self.types:
            self.types[c.name] = self.types[c.items[0]]
            return
        if len(set(c.items)) != len(c.items):
            self.err(f"duplicate label in colour set {c.name!r}", c.span)
            return
        t = EnumType(c.name, tuple(c.items))
        for label in c.items:
            if label in self.labels:
                self.err(f"label {label!r} already belongs to colour set {self.labels[label].name!r}", c.span)
                continue
            if label in self.types:
                self.err(f"label {label!r} clashes with a type name", c.span)
                continue
            self.labels[label] = t
        self.types[c.name] = t

    def type(self, ref: Optional[A.TypeRef], span):
        if ref is None:
            return None
        t = self.types.get(ref.name)
        if t is None:
            self.err(f"unknown type {ref.name!r}", pick(ref.span, span))
            return REAL
        return t

    def const(self, e, span, what="value"):
        try:
            return compile_expr(e, frozenset(self.labels))({})
        except (ExecutionError, TwinKernelError) as exc:
            self.err(f"{what} must be a constant expression ({exc})", pick(getattr(e, "span", NOWHERE), span))
            return None

    def time(self, e, span, what):
        v = self.const(e, span, what)
        if v is None:
            return None
        if isinstance(e, TimeLit):
            ns = e.ns
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            ns = round(v * NS_PER_S)
        else:
            self.err(f"{what} must be a time", span)
            return None
        if ns < 0:
            self.err(f"{what} must not be negative", span)
            return None
        return ns

    # ------------------------------------------------------------ shared

    def params(self, b: A.Block):
        return tuple(Param(p.name, p.value, p.span) for p in b.of(A.ParamDecl))

    def inputs(self, b: A.Block):
        return tuple(InputDecl(d.name, self.type(d.type, d.span), d.default, d.span) for d in b.of(A.InputDecl))

    def events(self, b: A.Block):
        return tuple(EventDecl(d.name, self.type(d.payload, d.span), d.span) for d in b.of(A.EventDecl))

    def _initial(self, b, decls, what):
        inits = [d for d in decls if d.init]
        if len(inits) != 1:
            self.err(f"{b.kind} {b.name!r} needs exactly one initial {what}, found {len(inits)}", b.span)
            return decls[0].name if decls else ""
        return inits[0].name

    # ------------------------------------------------------------ fsm

    def fsm(self, b: A.Block) -> F.FsmModel:
        states = b.of(A.StateDecl)
        vars_ = []
        for v in b.of(A.VarDecl):
            if v.type is None or v.init is None:
                self.err(f"fsm variable {v.name!r} needs a type and an initial value", v.span)
                continue
            vars_.append(F.VarDecl(v.name, self.type(v.type, v.span), v.init, v.span))
        transitions = []
        for tr in b.of(A.TransitionRule):
            acts = []
            for a in tr.actions:
                if isinstance(a, A.AssignAct):
                    acts.append(F.Assign(a.target, a.expr, a.span))
                elif isinstance(a, A.ResetAct):
                    acts.append(F.ResetTimer(a.timer, a.span))
                else:
                    acts.append(F.Emit(a.event, a.payload, a.span))
            transitions.append(F.FsmTransition(tr.source, tr.target, tr.guard, tuple(acts), tr.span))
        return F.FsmModel(
            name=b.name,
            states=tuple(s.name for s in states),
            initial=self._initial(b, states, "state"),
            vars=tuple(vars_),
            timers=tuple(F.TimerDecl(t.name, t.period, t.event, t.span) for t in b.of(A.TimerDecl)),
            transitions=tuple(transitions),
            params=self.params(b),
            inputs=self.inputs(b),
            events=self.events(b),
            labels=self.labels,
            state_spans={s.name: s.span for s in states},
            span=b.span,
        )

    # ------------------------------------------------------------ nets

    def net(self, b: A.Block) -> C.CpnNet:
        coloured = b.kind == "cpn"
        places = []
        for p in b.of(A.PlaceDecl):
            if coloured:
                if p.colour is None:
                    self.err(f"place {p.name!r} needs a colour set", p.span)
                    colour = DOT
                else:
                    colour = self.type(p.colour, p.span)
            else:
                if p.colour is not None:
                    self.err(f"places of an uncoloured net take no colour set ({p.name!r})", p.span)
                colour = DOT
            places.append(C.Place(p.name, colour, p.initial, p.span))
        variables = []
        for v in b.of(A.VarDecl):
            if v.type is None or v.init is not None:
                self.err(f"net variable {v.name!r} needs a type and no initial value", v.span)
                continue
            variables.append(C.VarDecl(v.name, self.type(v.type, v.span), v.span))
        transitions = []
        for t in b.of(A.TransitionDecl):
            ins, evs, outs, emits = [], [], [], []
            guard = None
            for item in t.items:
                if isinstance(item, A.InArcDecl):
                    ins.append(C.InArc(item.place, item.pattern, item.span))
                elif isinstance(item, A.EventArcDecl):
                    evs.append(C.EventArc(item.event, item.pattern, item.span))
                elif isinstance(item, A.OutArcDecl):
                    outs.append(C.OutArc(item.place, item.expr, item.span))
                elif isinstance(item, A.GuardDecl):
                    if guard is not None:
                        self.err(f"transition {t.name!r} has more than one guard", item.span)
                    guard = item.expr
                else:
                    emits.append(C.CpnEmit(item.event, item.payload, item.span))
            transitions.append(C.CpnTransition(t.name, tuple(ins), tuple(evs), guard, tuple(outs), tuple(emits), t.span))
        return C.CpnNet(
            name=b.name,
            places=tuple(places),
            transitions=tuple(transitions),
            variables=tuple(variables),
            events=self.events(b),
            params=self.params(b),
            coloured=coloured,
            labels=self.labels,
            span=b.span,
        )

    # ------------------------------------------------------------ ha

    def ha(self, b: A.Block) -> H.HaModel:
        vars_ = []
        for v in b.of(A.VarDecl):
            if v.init is None:
                self.err(f"continuous variable {v.name!r} needs an initial value", v.span)
                continue
            if v.type is not None and self.type(v.type, v.span) is not REAL:
                self.err(f"continuous variable {v.name!r} must be real", v.span)
            vars_.append(H.ContVar(v.name, v.init, v.span))
        locs = b.of(A.LocationDecl)
        locations = tuple(
            H.Location(l.name, tuple(H.Flow(f.var, f.rate, f.span) for f in l.flows), l.invariant, l.span)
            for l in locs
        )
        edges = []
        for e in b.of(A.EdgeDecl):
            resets, emits = [], []
            for a in e.actions:
                if isinstance(a, A.AssignAct):
                    resets.append(F.Assign(a.target, a.expr, a.span))
                elif isinstance(a, A.EmitAct):
                    emits.append(F.Emit(a.event, a.payload, a.span))
                else:
                    self.err("hybrid automata have no timers; use a clock variable", a.span)
            edges.append(H.HaEdge(e.source, e.target, e.guard, e.urgent, e.triggers, tuple(resets), tuple(emits), e.span))
        return H.HaModel(
            name=b.name,
            locations=locations,
            initial=self._initial(b, locs, "location"),
            vars=tuple(vars_),
            edges=tuple(edges),
            params=self.params(b),
            inputs=self.inputs(b),
            events=self.events(b),
            labels=self.labels,
            span=b.span,
        )

    # ------------------------------------------------------------ dtc / system

    def dtc(self, b: A.Block) -> DtcSpec:
        instances = []
        for d in b.of(A.InstanceDecl):
            if d.kind == "replay":
                model = self.replay(d)
                if model is None:
                    continue
                instances.append(InstanceSpec(d.id, model, {}, d.span))
                continue
            model = self.out.models.get((d.kind, d.model))
            if model is None:
                self.err(f"unknown {d.kind} model {d.model!r}", d.span)
                continue
            args = {}
            for name, e in d.args:
                v = self.const(e, d.span, f"argument {name!r}")
                if v is not None:
                    args[name] = v
            instances.append(InstanceSpec(d.id, model, args, d.span))
        known = {d.id for d in b.of(A.InstanceDecl)}
        wires = []
        for w in b.of(A.WireDecl):
            for ref in (w.src, w.dst):
                if ref.owner is not None and ref.owner not in known:
                    self.err(f"unknown instance {ref.owner!r}", pick(ref.span, w.span))
            if all(r.owner is None or r.owner in {i.id for i in instances} for r in (w.src, w.dst)):
                wires.append(Wire(Endpoint(w.src.owner, w.src.name), Endpoint(w.dst.owner, w.dst.name), w.span))
        ports = b.of(A.PortDecl)
        spec = DtcSpec(
            id=b.name,
            instances=tuple(instances),
            wires=tuple(wires),
            inputs=tuple(p.name for p in ports if p.direction == "input"),
            outputs=tuple(p.name for p in ports if p.direction == "output"),
            span=b.span,
        )
        return spec

    def replay(self, d: A.InstanceDecl) -> Optional[ReplayModel]:
        from ..twinlink import load_plant_trace

        path = Path(d.model)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        try:
            pt = load_plant_trace(path)
        except (OSError, TwinKernelError) as exc:
            self.err(f"cannot load plant trace {d.model!r}: {exc}", d.span)
            return None
        return ReplayModel(d.id, pt.signals, tuple(pt.records))

    def system(self, b: A.Block) -> SystemSpec:
        settings = {}
        for s in b.of(A.SettingDecl):
            if s.key in settings:
                self.err(f"duplicate setting {s.key!r}", s.span)
            if s.key in ("iterations", "jumps"):
                v = self.const(s.value, s.span, s.key)
                if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 1):
                    self.err(f"{s.key} must be a positive integer", s.span)
                    v = None
            else:
                v = self.time(s.value, s.span, s.key)
            if v is not None:
                settings[s.key] = v
        dtcs = []
        for c in b.of(A.ComponentDecl):
            d = self.out.dtcs.get(c.dtc)
            if d is None:
                self.err(f"unknown dtc {c.dtc!r}", c.span)
                continue
            dtcs.append(replace(d, id=c.id, span=c.span))
        channels = []
        for c in b.of(A.ChannelDecl):
            if c.src.owner is None or c.dst.owner is None:
                self.err("channel endpoints must be component.port", c.span)
                continue
            channels.append(Channel(c.id, c.src.owner, c.src.name, c.dst.owner, c.dst.name, c.latency, c.span))
        stimuli = []
        for s in b.of(A.StimulusDecl):
            t = self.time(s.time, s.span, "stimulus time")
            payload = None
            if s.payload is not None:
                payload = self.const(s.payload, s.span, "stimulus payload")
                if isinstance(payload, tuple):
                    self.err("stimulus payloads must be scalars", s.span)
                    continue
            if t is not None:
                stimuli.append(Stimulus(t, s.component, s.port, payload, s.span))
        kw = {}
        keys = {"step": "delta", "horizon": "horizon", "sample": "sample_period", "substep": "substep",
                "iterations": "max_micro_iters", "jumps": "max_jumps"}
        for k, v in settings.items():
            kw[keys[k]] = v
        return SystemSpec(dtcs=tuple(dtcs), channels=tuple(channels), stimuli=tuple(stimuli), name=b.name, span=b.span, **kw)

    # ------------------------------------------------------------ driver

    def run(self) -> ModelSet:
        seen = {}
        for blk in self.doc.blocks:
            if isinstance(blk, A.ColorsetDecl):
                self.colorset(blk)
                continue
            group = "net" if blk.kind in ("cpn", "pn") else blk.kind
            key = (group, blk.name)
            if key in seen:
                self.err(f"duplicate {blk.kind} block {blk.name!r}", blk.span)
                continue
            seen[key] = blk
        self.out.types = self.types
        self.out.labels = self.labels
        validators = {"fsm": F.fsm_validate, "cpn": C.cpn_validate, "pn": C.cpn_validate, "ha": H.ha_validate}
        builders = {"fsm": self.fsm, "cpn": self.net, "pn": self.net, "ha": self.ha}
        for (group, name), blk in seen.items():
            if blk.kind in builders:
                model = builders[blk.kind](blk)
                self.diags.extend(validators[blk.kind](model))
                self.out.models[(blk.kind, name)] = model
        for (group, name), blk in seen.items():
            if blk.kind == "dtc":
                spec = self.dtc(blk)
                self.diags.extend(dtc_validate(spec))
                self.out.dtcs[name] = spec
        for (group, name), blk in seen.items():
            if blk.kind == "system":
                spec = self.system(blk)
                self.diags.extend(system_validate(spec))
                self.out.systems[name] = spec
        self.out.diagnostics = self.diags
        return self.out


def check_document(doc: A.ModelDocument, base_dir=None) -> list[Diagnostic]:
    """All diagnostics for ``doc``; empty when it is valid."""
    return _Loader(doc, Path(base_dir) if base_dir else None).run().diagnostics


def validate_document(doc: A.ModelDocument, base_dir=None) -> ModelSet:
    """Resolve and type-check ``doc``; raises :class:`ModelError` on errors."""
    out = _Loader(doc, Path(base_dir) if base_dir else None).run()
    if has_errors(out.diagnostics):
        raise ModelError([d for d in out.diagnostics if d.severity == "error"])
    return out


def load_text(text, file="<input>", base_dir=None) -> ModelSet:
    return validate_document(parse_model(text, file), base_dir)


def load_file(path) -> ModelSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return load_text(text, str(path), path.parent)


def patch_param(doc: A.ModelDocument, name: str, value, block: Optional[str] = None) -> A.ModelDocument:
    """Copy of ``doc`` with every ``param name`` (optionally in one block) set to ``value``."""
    hits = 0
    blocks = []
    for b in doc.blocks:
        if isinstance(b, A.Block) and (block is None or b.name == block):
            items = []
            for it in b.items:
                if isinstance(it, A.ParamDecl) and it.name == name:
                    it = A.ParamDecl(name, literal(value), it.span)
                    hits += 1
                items.append(it)
            b = replace(b, items=tuple(items))
        blocks.append(b)
    if hits == 0:
        raise KeyError(f"no parameter {name!r} in the document")
    return A.ModelDocument(tuple(blocks), doc.file)
