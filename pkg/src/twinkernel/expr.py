"""Expression language shared by guards, actions, flows and arc inscriptions.

Expressions are small ASTs.  They are type-checked against a :class:`Scope`
and compiled into Python closures over an environment dict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .diagnostics import NOWHERE, Span
from .errors import ExecutionError

# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class PrimType:
    name: str

    def __str__(self):
        return self.name


BOOL = PrimType("bool")
INT = PrimType("int")
REAL = PrimType("real")
PRIMS = {"bool": BOOL, "int": INT, "real": REAL}


@dataclass(frozen=True)
class EnumType:
    name: str
    labels: tuple

    @property
    def is_unit(self):
        return len(self.labels) == 1

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class ProductType:
    name: str
    components: tuple

    def __str__(self):
        return self.name or "(" + " * ".join(map(str, self.components)) + ")"


@dataclass(frozen=True)
class DotType:
    """Colour of uncoloured Petri-net places; its only token is ``()``."""

    name: str = "dot"

    def __str__(self):
        return self.name


DOT = DotType()

Type = Union[PrimType, EnumType, ProductType, DotType]


def is_numeric(t) -> bool:
    return t is INT or t is REAL


def assignable(target, source) -> bool:
    if target == source:
        return True
    if target is REAL and source is INT:
        return True
    if isinstance(target, ProductType) and isinstance(source, ProductType):
        return len(target.components) == len(source.components) and all(
            assignable(a, b) for a, b in zip(target.components, source.components)
        )
    return False


def coerce(value, t):
    """Bring a runtime value into the canonical representation of ``t``."""
    if t is REAL and not isinstance(value, bool) and isinstance(value, int):
        return float(value)
    if isinstance(t, ProductType):
        return tuple(coerce(v, c) for v, c in zip(value, t.components))
    return value


def value_conforms(value, t) -> bool:
    if t is BOOL:
        return isinstance(value, bool)
    if t is INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if t is REAL:
        return isinstance(value, float) and math.isfinite(value)
    if isinstance(t, EnumType):
        return isinstance(value, str) and value in t.labels
    if isinstance(t, ProductType):
        return (
            isinstance(value, tuple)
            and len(value) == len(t.components)
            and all(value_conforms(v, c) for v, c in zip(value, t.components))
        )
    if isinstance(t, DotType):
        return value == ()
    return False


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: Union[int, float]
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class TimeLit(Expr):
    ns: int
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Name(Expr):
    id: str
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    operand: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple
    span: Span = field(default=NOWHERE, compare=False, repr=False)


@dataclass(frozen=True)
class TupleExpr(Expr):
    items: tuple
    span: Span = field(default=NOWHERE, compare=False, repr=False)


FUNCTIONS = {"abs": 1, "min": 2, "max": 2}

BINARY_PREC = {
    "||": 1,
    "&&": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4,
    "*": 5, "/": 5,
}
COMPARISONS = {"==", "!=", "<", "<=", ">", ">="}
UNARY_PREC = 6


def literal(v) -> Expr:
    """AST for a Python scalar; negative numbers become unary minus."""
    if isinstance(v, bool):
        return BoolLit(v)
    if isinstance(v, (int, float)):
        if v < 0 or (isinstance(v, float) and math.copysign(1.0, v) < 0):
            return Unary("-", Num(-v))
        return Num(v)
    if isinstance(v, str):
        return Name(v)
    if isinstance(v, tuple):
        return TupleExpr(tuple(literal(x) for x in v))
    raise TypeError(f"no literal for {v!r}")


def free_names(e: Expr) -> set:
    out = set()

    def walk(n):
        if isinstance(n, Name):
            out.add(n.id)
        elif isinstance(n, Unary):
            walk(n.operand)
        elif isinstance(n, Binary):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)
        elif isinstance(n, TupleExpr):
            for a in n.items:
                walk(a)

    walk(e)
    return out


# ---------------------------------------------------------------- printing


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return BINARY_PREC[e.op]
    if isinstance(e, Unary):
        return UNARY_PREC
    return 7


def format_number(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def format_time_literal(ns: int) -> str:
    for unit, factor in (("s", 1_000_000_000), ("ms", 1_000_000), ("us", 1_000)):
        if ns % factor == 0:
            return f"{ns // factor}{unit}"
    return f"{ns}ns"


def to_source(e: Expr) -> str:
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, TimeLit):
        return format_time_literal(e.ns)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(to_source(a) for a in e.args) + ")"
    if isinstance(e, TupleExpr):
        return "(" + ", ".join(to_source(a) for a in e.items) + ")"
    if isinstance(e, Unary):
        inner = to_source(e.operand)
        if _prec(e.operand) < UNARY_PREC:
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        p = BINARY_PREC[e.op]
        left, right = to_source(e.left), to_source(e.right)
        lp, rp = _prec(e.left), _prec(e.right)
        if lp < p or (e.op in COMPARISONS and lp == p):
            left = f"({left})"
        if rp <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- typing


class TypeCheckError(Exception):
    def __init__(self, message, span=NOWHERE):
        super().__init__(message)
        self.span = span


@dataclass
class Scope:
    """Names visible to an expression: symbol -> type, plus enum labels."""

    symbols: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)

    def child(self, extra: dict) -> "Scope":
        s = dict(self.symbols)
        s.update(extra)
        return Scope(s, self.labels)

    def lookup(self, name):
        if name in self.symbols:
            return self.symbols[name]
        if name in self.labels:
            return self.labels[name]
        return None


def type_of(e: Expr, scope: Scope):
    """Return the type of ``e`` or raise :class:`TypeCheckError`."""
    if isinstance(e, Num):
        return INT if isinstance(e.value, int) else REAL
    if isinstance(e, TimeLit):
        return REAL
    if isinstance(e, BoolLit):
        return BOOL
    if isinstance(e, Name):
        t = scope.lookup(e.id)
        if t is None:
            raise TypeCheckError(f"unknown symbol {e.id!r}", e.span)
        return t
    if isinstance(e, Unary):
        t = type_of(e.operand, scope)
        if e.op == "-":
            if not is_numeric(t):
                raise TypeCheckError(f"unary '-' needs a number, got {t}", e.span)
            return t
        if t is not BOOL:
            raise TypeCheckError(f"'!' needs a bool, got {t}", e.span)
        return BOOL
    if isinstance(e, Binary):
        lt, rt = type_of(e.left, scope), type_of(e.right, scope)
        op = e.op
        if op in ("&&", "||"):
            if lt is not BOOL or rt is not BOOL:
                raise TypeCheckError(f"'{op}' needs bool operands, got {lt} and {rt}", e.span)
            return BOOL
        if op in ("+", "-", "*", "/"):
            if not (is_numeric(lt) and is_numeric(rt)):
                raise TypeCheckError(f"'{op}' needs numbers, got {lt} and {rt}", e.span)
            if op == "/" or lt is REAL or rt is REAL:
                return REAL
            return INT
        if op in ("<", "<=", ">", ">="):
            if not (is_numeric(lt) and is_numeric(rt)):
                raise TypeCheckError(f"cannot order {lt} and {rt}", e.span)
            return BOOL
        # == / !=
        if is_numeric(lt) and is_numeric(rt):
            return BOOL
        if lt == rt or assignable(lt, rt) or assignable(rt, lt):
            return BOOL
        raise TypeCheckError(f"cannot compare {lt} with {rt}", e.span)
    if isinstance(e, Call):
        arity = FUNCTIONS.get(e.func)
        if arity is None:
            raise TypeCheckError(f"unknown function {e.func!r}", e.span)
        if len(e.args) != arity:
            raise TypeCheckError(f"{e.func} takes {arity} argument(s)", e.span)
        ts = [type_of(a, scope) for a in e.args]
        if not all(is_numeric(t) for t in ts):
            raise TypeCheckError(f"{e.func} needs numeric arguments", e.span)
        return REAL if any(t is REAL for t in ts) else INT
    if isinstance(e, TupleExpr):
        return ProductType("", tuple(type_of(a, scope) for a in e.items))
    raise TypeCheckError(f"not an expression: {e!r}")


def check_assign(e: Expr, target, scope: Scope, what="value"):
    t = type_of(e, scope)
    if not assignable(target, t):
        raise TypeCheckError(f"{what} has type {t}, expected {target}", getattr(e, "span", NOWHERE))
    return t


# ---------------------------------------------------------------- evaluation

_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _div(a, b):
    if b == 0:
        raise ExecutionError("division by zero")
    return a / b


def compile_expr(e: Expr, labels=frozenset()) -> Callable[[dict], object]:
    """Compile ``e`` into ``f(env) -> value``.

    Names are looked up in ``env``; a name missing there that is found in
    ``labels`` evaluates to the label string itself, so variables shadow
    labels as they do in type checking.
    """
    if isinstance(e, Num):
        v = e.value
        return lambda env: v
    if isinstance(e, TimeLit):
        v = e.ns / 1e9
        return lambda env: v
    if isinstance(e, BoolLit):
        v = e.value
        return lambda env: v
    if isinstance(e, Name):
        name = e.id
        is_label = name in labels

        def load(env):
            try:
                return env[name]
            except KeyError:
                if is_label:
                    return name
                raise ExecutionError(f"unbound symbol {name!r}") from None

        return load
    if isinstance(e, Unary):
        f = compile_expr(e.operand, labels)
        if e.op == "-":
            return lambda env: -f(env)
        return lambda env: not f(env)
    if isinstance(e, Binary):
        lf, rf = compile_expr(e.left, labels), compile_expr(e.right, labels)
        if e.op == "&&":
            return lambda env: bool(lf(env)) and bool(rf(env))
        if e.op == "||":
            return lambda env: bool(lf(env)) or bool(rf(env))
        if e.op == "/":
            return lambda env: _div(lf(env), rf(env))
        op = _BINOPS[e.op]
        return lambda env: op(lf(env), rf(env))
    if isinstance(e, Call):
        fs = [compile_expr(a, labels) for a in e.args]
        if e.func == "abs":
            (f,) = fs
            return lambda env: abs(f(env))
        fn = min if e.func == "min" else max
        a, b = fs
        return lambda env: fn(a(env), b(env))
    if isinstance(e, TupleExpr):
        fs = [compile_expr(a, labels) for a in e.items]
        return lambda env: tuple(f(env) for f in fs)
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, env: Optional[dict] = None, labels=frozenset()):
    return compile_expr(e, labels)(env or {})
