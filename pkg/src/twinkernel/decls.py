"""Declarations common to the FSM, CPN and HA model classes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .diagnostics import NOWHERE, Span, error, pick
from .expr import (
    BOOL,
    INT,
    REAL,
    EnumType,
    Expr,
    Scope,
    TypeCheckError,
    assignable,
    coerce,
    compile_expr,
    type_of,
)


@dataclass(frozen=True)
class Param:
    name: str
    value: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class InputDecl:
    """A level input: latches the payload of the last event of that name."""

    name: str
    type: object
    default: Optional[Expr] = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class EventDecl:
    """A pulse input, present only in the step it is delivered."""

    name: str
    payload: object = None
    span: Span = field(default=NOWHERE, compare=False, repr=False)


def default_value(t):
    if t is BOOL:
        return False
    if t is REAL:
        return 0.0
    if t is INT:
        return 0
    if isinstance(t, EnumType):
        return t.labels[0]
    return None


def check_params(params, labels, diags) -> dict:
    """Type-check params in order; returns name -> type."""
    types = {}
    for p in params:
        if p.name in types:
            diags.append(error(f"duplicate parameter {p.name!r}", p.span))
            continue
        try:
            t = type_of(p.value, Scope(dict(types), labels))
        except TypeCheckError as exc:
            diags.append(error(str(exc), pick(exc.span, p.span)))
            t = REAL
        types[p.name] = t
    return types


def eval_params(params, overrides=None, labels=frozenset()) -> dict:
    """Evaluate params in declaration order; ``overrides`` replace values."""
    overrides = dict(overrides or {})
    env: dict = {}
    for p in params:
        if p.name in overrides:
            v = overrides.pop(p.name)
        else:
            v = compile_expr(p.value, labels)(env)
        env[p.name] = v
    if overrides:
        raise KeyError(f"unknown parameter(s): {', '.join(sorted(overrides))}")
    return env


def check_input_decls(inputs, labels, param_types, diags) -> dict:
    types = {}
    for d in inputs:
        types[d.name] = d.type
        if d.default is not None:
            try:
                t = type_of(d.default, Scope(dict(param_types), labels))
                if not assignable(d.type, t):
                    diags.append(error(f"default of input {d.name!r} has type {t}, expected {d.type}", d.span))
            except TypeCheckError as exc:
                diags.append(error(str(exc), pick(exc.span, d.span)))
    return types


def input_defaults(inputs, params_env, labels=frozenset()) -> dict:
    out = {}
    for d in inputs:
        if d.default is None:
            out[d.name] = default_value(d.type)
        else:
            out[d.name] = coerce(compile_expr(d.default, labels)(params_env), d.type)
    return out


def latch_value(decl: InputDecl, payload):
    """Payload of an event delivered to a level input."""
    if payload is None:
        if decl.type is BOOL:
            return True
        raise ValueError(f"input {decl.name!r} needs a payload")
    return coerce(payload, decl.type)
