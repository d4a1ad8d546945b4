"""Syntax tree of a model document.

Nodes keep names unresolved; :mod:`twinkernel.modelspec.loader` turns
them into executable models.  Spans are excluded from equality so two
trees compare equal whenever they have the same structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..diagnostics import NOWHERE, Span
from ..expr import Expr


def _span():
    return field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class TypeRef:
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class ColorsetDecl:
    """``kind`` is ``enum`` (two or more labels), ``product`` or ``name``.

    A lone name is either an alias of a known type or a one-label enum;
    the loader decides.
    """

    name: str
    kind: str
    items: tuple
    span: Span = _span()


# ---------------------------------------------------------------- shared items


@dataclass(frozen=True)
class ParamDecl:
    name: str
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class InputDecl:
    name: str
    type: TypeRef
    default: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class EventDecl:
    name: str
    payload: Optional[TypeRef] = None
    span: Span = _span()


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: Optional[TypeRef] = None
    init: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class AssignAct:
    target: str
    expr: Expr
    span: Span = _span()


@dataclass(frozen=True)
class ResetAct:
    timer: str
    span: Span = _span()


@dataclass(frozen=True)
class EmitAct:
    event: str
    payload: Optional[Expr] = None
    span: Span = _span()


# ---------------------------------------------------------------- fsm


@dataclass(frozen=True)
class TimerDecl:
    name: str
    period: Expr
    event: str
    span: Span = _span()


@dataclass(frozen=True)
class StateDecl:
    name: str
    init: bool = False
    span: Span = _span()


@dataclass(frozen=True)
class TransitionRule:
    guard: Expr
    source: str
    target: str
    actions: tuple = ()
    span: Span = _span()


# ---------------------------------------------------------------- nets


@dataclass(frozen=True)
class PlaceDecl:
    name: str
    colour: Optional[TypeRef] = None
    initial: tuple = ()  # (count, Expr or None)
    span: Span = _span()


@dataclass(frozen=True)
class InArcDecl:
    place: str
    pattern: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class EventArcDecl:
    event: str
    pattern: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class OutArcDecl:
    place: str
    expr: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class GuardDecl:
    expr: Expr
    span: Span = _span()


@dataclass(frozen=True)
class TransitionDecl:
    name: str
    items: tuple = ()
    span: Span = _span()


# ---------------------------------------------------------------- ha


@dataclass(frozen=True)
class FlowDecl:
    var: str
    rate: Expr
    span: Span = _span()


@dataclass(frozen=True)
class LocationDecl:
    name: str
    init: bool = False
    flows: tuple = ()
    invariant: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class EdgeDecl:
    source: str
    target: str
    urgent: bool = False
    triggers: tuple = ()
    guard: Optional[Expr] = None
    actions: tuple = ()
    span: Span = _span()


# ---------------------------------------------------------------- dtc / system


@dataclass(frozen=True)
class PortDecl:
    direction: str  # input | output
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class InstanceDecl:
    id: str
    kind: str  # fsm | cpn | pn | ha | replay
    model: str  # block name, or file path for replay
    args: tuple = ()  # (name, Expr)
    span: Span = _span()


@dataclass(frozen=True)
class Ref:
    owner: Optional[str]
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class WireDecl:
    src: Ref
    dst: Ref
    span: Span = _span()


@dataclass(frozen=True)
class SettingDecl:
    key: str  # step | horizon | sample | substep | iterations | jumps
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class ComponentDecl:
    id: str
    dtc: str
    span: Span = _span()


@dataclass(frozen=True)
class ChannelDecl:
    id: str
    src: Ref
    dst: Ref
    latency: int = 1
    span: Span = _span()


@dataclass(frozen=True)
class StimulusDecl:
    time: Expr
    component: str
    port: str
    payload: Optional[Expr] = None
    span: Span = _span()


# ---------------------------------------------------------------- blocks


@dataclass(frozen=True)
class Block:
    kind: str  # fsm | cpn | pn | ha | dtc | system
    name: str
    items: tuple = ()
    span: Span = _span()

    def of(self, cls) -> list:
        return [i for i in self.items if isinstance(i, cls)]


@dataclass(frozen=True)
class ModelDocument:
    blocks: tuple = ()
    file: str = field(default="<input>", compare=False, repr=False)

    def block(self, name, kind=None) -> Block:
        for b in self.blocks:
            if isinstance(b, Block) and b.name == name and (kind is None or b.kind == kind):
                return b
        raise KeyError(name)

    def blocks_of(self, kind) -> list:
        if kind == "colorset":
            return [b for b in self.blocks if isinstance(b, ColorsetDecl)]
        return [b for b in self.blocks if isinstance(b, Block) and b.kind == kind]
