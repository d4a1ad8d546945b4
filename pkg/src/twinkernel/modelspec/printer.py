"""Canonical text form of a model document.

Two-space indentation, one declaration per line, a blank line between
top-level blocks, minimal parentheses in expressions.  Comments are not
part of the tree and are dropped.
"""

from __future__ import annotations

from ..expr import Binary, to_source
from . import ast as A

IND = "  "


def _e(x) -> str:
    return to_source(x)


def _actions(acts) -> str:
    out = []
    for a in acts:
        if isinstance(a, A.AssignAct):
            out.append(f"{a.target} := {_e(a.expr)}")
        elif isinstance(a, A.ResetAct):
            out.append(f"reset {a.timer}")
        else:
            out.append(_emit(a))
    return ", ".join(out)


def _emit(a: A.EmitAct) -> str:
    if a.payload is None:
        return f"emit {a.event}"
    return f"emit {a.event}({_e(a.payload)})"


def _ref(r: A.Ref) -> str:
    return r.name if r.owner is None else f"{r.owner}.{r.name}"


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _marking(terms) -> str:
    parts = []
    for count, e in terms:
        if e is None:
            parts.append(str(count))
        else:
            # a term is followed by '+', so a binary inscription needs parens
            text = _e(e)
            parts.append(f"{count}'({text})" if isinstance(e, Binary) else f"{count}'{text}")
    return " + ".join(parts)


def _item(item) -> list[str]:
    if isinstance(item, A.ParamDecl):
        return [f"param {item.name} = {_e(item.value)};"]
    if isinstance(item, A.InputDecl):
        d = f" = {_e(item.default)}" if item.default is not None else ""
        return [f"input {item.name} : {item.type.name}{d};"]
    if isinstance(item, A.EventDecl):
        p = f" : {item.payload.name}" if item.payload is not None else ""
        return [f"event {item.name}{p};"]
    if isinstance(item, A.VarDecl):
        s = f"var {item.name}"
        if item.type is not None:
            s += f" : {item.type.name}"
        if item.init is not None:
            s += f" = {_e(item.init)}"
        return [s + ";"]
    if isinstance(item, A.TimerDecl):
        return [f"timer {item.name} = {_e(item.period)} -> {item.event};"]
    if isinstance(item, A.StateDecl):
        return [f"state {item.name}{' init' if item.init else ''};"]
    if isinstance(item, A.TransitionRule):
        s = f"on {_e(item.guard)} from {item.source} to {item.target}"
        if item.actions:
            s += f" do {_actions(item.actions)}"
        return [s + ";"]
    if isinstance(item, A.PlaceDecl):
        s = f"place {item.name}"
        if item.colour is not None:
            s += f" : {item.colour.name}"
        if item.initial:
            s += f" = {_marking(item.initial)}"
        return [s + ";"]
    if isinstance(item, A.TransitionDecl):
        lines = [f"transition {item.name} {{"]
        for arc in item.items:
            lines.append(IND + _arc(arc))
        lines.append("}")
        return lines
    if isinstance(item, A.LocationDecl):
        head = f"location {item.name}{' init' if item.init else ''}"
        if not item.flows and item.invariant is None:
            return [head + ";"]
        lines = [head + " {"]
        for f in item.flows:
            lines.append(f"{IND}flow {f.var}' = {_e(f.rate)};")
        if item.invariant is not None:
            lines.append(f"{IND}inv {_e(item.invariant)};")
        lines.append("}")
        return lines
    if isinstance(item, A.EdgeDecl):
        s = f"edge {item.source} -> {item.target}"
        if item.urgent:
            s += " urgent"
        if item.triggers:
            s += " on " + ", ".join(item.triggers)
        if item.guard is not None:
            s += f" when {_e(item.guard)}"
        if item.actions:
            s += f" do {_actions(item.actions)}"
        return [s + ";"]
    if isinstance(item, A.PortDecl):
        return [f"{item.direction} {item.name};"]
    if isinstance(item, A.InstanceDecl):
        if item.kind == "replay":
            return [f"instance {item.id} : replay {_quote(item.model)};"]
        args = ""
        if item.args:
            args = "(" + ", ".join(f"{n} = {_e(v)}" for n, v in item.args) + ")"
        return [f"instance {item.id} : {item.kind} {item.model}{args};"]
    if isinstance(item, A.WireDecl):
        return [f"wire {_ref(item.src)} -> {_ref(item.dst)};"]
    if isinstance(item, A.SettingDecl):
        return [f"{item.key} {_e(item.value)};"]
    if isinstance(item, A.ComponentDecl):
        return [f"component {item.id} : {item.dtc};"]
    if isinstance(item, A.ChannelDecl):
        return [f"channel {item.id} : {_ref(item.src)} -> {_ref(item.dst)} latency {item.latency};"]
    if isinstance(item, A.StimulusDecl):
        p = f"({_e(item.payload)})" if item.payload is not None else ""
        return [f"stimulus {_e(item.time)} {item.component}.{item.port}{p};"]
    raise TypeError(f"cannot print {type(item).__name__}")


def _arc(arc) -> str:
    if isinstance(arc, A.GuardDecl):
        return f"guard {_e(arc.expr)};"
    if isinstance(arc, A.EmitAct):
        return _emit(arc) + ";"
    kw = {A.InArcDecl: "in", A.EventArcDecl: "on", A.OutArcDecl: "out"}[type(arc)]
    name = arc.event if isinstance(arc, A.EventArcDecl) else arc.place
    pat = arc.expr if isinstance(arc, A.OutArcDecl) else arc.pattern
    if pat is None:
        return f"{kw} {name};"
    return f"{kw} {name} {_e(pat)};"


def _colorset(c: A.ColorsetDecl) -> str:
    sep = " * " if c.kind == "product" else " | "
    return f"colorset {c.name} = {sep.join(c.items)};"


def canonical_print(doc: A.ModelDocument) -> str:
    chunks = []
    prev_colorset = False
    for b in doc.blocks:
        if isinstance(b, A.ColorsetDecl):
            line = _colorset(b)
            if prev_colorset:
                chunks[-1] += "\n" + line
            else:
                chunks.append(line)
            prev_colorset = True
            continue
        prev_colorset = False
        lines = [f"{b.kind} {b.name} {{"]
        for item in b.items:
            lines.extend(IND + ln for ln in _item(item))
        lines.append("}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + ("\n" if chunks else "")
