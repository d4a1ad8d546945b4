"""Recursive-descent parser for ``.twin`` model documents.

The first syntax error stops the parse and is reported with its span.
See docs/GRAMMAR.md for the grammar.
"""

from __future__ import annotations

from typing import Optional, Union

from ..diagnostics import Span, error
from ..errors import ModelError
from ..expr import (
    BINARY_PREC,
    BoolLit,
    Binary,
    Call,
    Expr,
    Name,
    Num,
    TimeLit,
    TupleExpr,
    Unary,
)
from . import ast as A
from .lexer import LexError, Token, tokenize

# Bounds both syntactic nesting and the height of the expression tree, so
# that the recursive passes over an expression stay well inside Python's
# recursion limit.
MAX_DEPTH = 64
BLOCK_KINDS = ("fsm", "cpn", "pn", "ha", "dtc", "system")
SETTINGS = ("step", "horizon", "sample", "substep", "iterations", "jumps")
INSTANCE_KINDS = ("fsm", "cpn", "pn", "ha", "replay")
_CMP = ("==", "!=", "<", "<=", ">", ">=")


class ParseError(Exception):
    def __init__(self, message, span):
        super().__init__(message)
        self.span = span


class Parser:
    def __init__(self, tokens: list[Token], file="<input>"):
        self.toks = tokens
        self.i = 0
        self.file = file
        self.depth = 0
        self.heights: dict = {}  # id(node) -> tree height, for the current expression

    # ------------------------------------------------------------ helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text) -> bool:
        t = self.tok
        return t.kind in ("punct", "ident") and t.text == text

    def accept(self, text) -> Optional[Token]:
        if self.at(text):
            return self.advance()
        return None

    def _describe(self, t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)

    def expect(self, text) -> Token:
        if self.at(text):
            return self.advance()
        raise ParseError(f"expected {text!r}, found {self._describe(self.tok)}", self.tok.span)

    def ident(self, what="identifier") -> Token:
        t = self.tok
        if t.kind != "ident":
            raise ParseError(f"expected {what}, found {self._describe(t)}", t.span)
        return self.advance()

    def int_literal(self, what) -> Token:
        t = self.tok
        if t.kind != "num" or not isinstance(t.value, int):
            raise ParseError(f"expected {what} (an integer), found {self._describe(t)}", t.span)
        return self.advance()

    def span_from(self, start: Span) -> Span:
        prev = self.toks[self.i - 1] if self.i > 0 else self.tok
        return start.to(prev.span)

    # ------------------------------------------------------------ expressions

    def expr(self) -> Expr:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ParseError("expression nested too deeply", self.tok.span)
        try:
            return self._binary(1)
        finally:
            self.depth -= 1
            if self.depth == 0:
                self.heights.clear()

    def _tall(self, node: Expr, *children) -> Expr:
        """Record the height of ``node``; too tall a tree is a parse error."""
        h = 1 + max((self.heights.get(id(c), 1) for c in children), default=0)
        if h > MAX_DEPTH:
            raise ParseError("expression nested too deeply", node.span)
        self.heights[id(node)] = h
        return node

    def _binary(self, level) -> Expr:
        if level > 5:
            return self.unary()
        left = self._binary(level + 1)
        while self.tok.kind == "punct" and BINARY_PREC.get(self.tok.text) == level:
            op = self.advance().text
            right = self._binary(level + 1)
            left = self._tall(Binary(op, left, right, left.span.to(right.span)), left, right)
            if op in _CMP:
                if self.tok.kind == "punct" and self.tok.text in _CMP:
                    raise ParseError("comparisons do not chain; add parentheses", self.tok.span)
                break
        return left

    def unary(self) -> Expr:
        t = self.tok
        if t.kind == "punct" and t.text in ("-", "!"):
            self.advance()
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise ParseError("expression nested too deeply", t.span)
            try:
                operand = self.unary()
            finally:
                self.depth -= 1
            return self._tall(Unary(t.text, operand, t.span.to(operand.span)), operand)
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(t.value, t.span)
        if t.kind == "time":
            self.advance()
            return TimeLit(t.value, t.span)
        if t.kind == "ident":
            self.advance()
            if t.text in ("true", "false"):
                return BoolLit(t.text == "true", t.span)
            if self.at("("):
                self.advance()
                args = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                end = self.expect(")")
                return self._tall(Call(t.text, tuple(args), t.span.to(end.span)), *args)
            return Name(t.text, t.span)
        if self.at("("):
            self.advance()
            first = self.expr()
            if self.accept(","):
                items = [first, self.expr()]
                while self.accept(","):
                    items.append(self.expr())
                end = self.expect(")")
                return self._tall(TupleExpr(tuple(items), t.span.to(end.span)), *items)
            self.expect(")")
            return first
        raise ParseError(f"expected an expression, found {self._describe(t)}", t.span)

    # ------------------------------------------------------------ document

    def document(self) -> A.ModelDocument:
        blocks = []
        while self.tok.kind != "eof":
            t = self.tok
            if t.kind == "ident" and t.text == "colorset":
                blocks.append(self.colorset())
            elif t.kind == "ident" and t.text in BLOCK_KINDS:
                blocks.append(self.block())
            else:
                raise ParseError(
                    f"expected a block (colorset, {', '.join(BLOCK_KINDS)}), found {self._describe(t)}", t.span
                )
        return A.ModelDocument(tuple(blocks), self.file)

    def colorset(self) -> A.ColorsetDecl:
        kw = self.advance()
        name = self.ident("colour set name").text
        self.expect("=")
        self.accept("|")
        first = self.ident("label or type name").text
        if self.at("|"):
            items = [first]
            while self.accept("|"):
                items.append(self.ident("label").text)
            kind = "enum"
        elif self.at("*"):
            items = [first]
            while self.accept("*"):
                items.append(self.ident("type name").text)
            kind = "product"
        else:
            items = [first]
            kind = "name"
        self.expect(";")
        return A.ColorsetDecl(name, kind, tuple(items), self.span_from(kw.span))

    def block(self) -> A.Block:
        kw = self.advance()
        name = self.ident(f"{kw.text} name").text
        self.expect("{")
        items = []
        item_fn = getattr(self, f"_{kw.text}_item")
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise ParseError(f"unclosed block '{kw.text} {name}'", kw.span)
            items.append(item_fn())
        self.expect("}")
        return A.Block(kw.text, name, tuple(items), self.span_from(kw.span))

    def _keyword(self, allowed, where) -> Token:
        t = self.tok
        if t.kind == "ident" and t.text in allowed:
            return self.advance()
        raise ParseError(
            f"expected one of {', '.join(allowed)} in {where}, found {self._describe(t)}", t.span
        )

    # ------------------------------------------------------------ shared items

    def _param(self, kw):
        name = self.ident("parameter name").text
        self.expect("=")
        value = self.expr()
        self.expect(";")
        return A.ParamDecl(name, value, self.span_from(kw.span))

    def _type(self) -> A.TypeRef:
        t = self.ident("type name")
        return A.TypeRef(t.text, t.span)

    def _input(self, kw):
        name = self.ident("input name").text
        self.expect(":")
        ty = self._type()
        default = None
        if self.accept("="):
            default = self.expr()
        self.expect(";")
        return A.InputDecl(name, ty, default, self.span_from(kw.span))

    def _event(self, kw):
        name = self.ident("event name").text
        payload = None
        if self.accept(":"):
            payload = self._type()
        self.expect(";")
        return A.EventDecl(name, payload, self.span_from(kw.span))

    def _var(self, kw):
        name = self.ident("variable name").text
        ty = None
        init = None
        if self.accept(":"):
            ty = self._type()
        if self.accept("="):
            init = self.expr()
        self.expect(";")
        return A.VarDecl(name, ty, init, self.span_from(kw.span))

    def _actions(self) -> tuple:
        acts = [self._action()]
        while self.accept(","):
            acts.append(self._action())
        return tuple(acts)

    def _action(self):
        t = self.ident("action")
        if self.at(":="):
            self.advance()
            e = self.expr()
            return A.AssignAct(t.text, e, t.span.to(e.span))
        if t.text == "reset":
            timer = self.ident("timer name")
            return A.ResetAct(timer.text, t.span.to(timer.span))
        if t.text == "emit":
            return self._emit(t)
        raise ParseError(f"expected an action (name := expr, reset, emit), found {t.text!r}", t.span)

    def _emit(self, kw):
        ev = self.ident("event name")
        payload = None
        if self.accept("("):
            payload = self.expr()
            self.expect(")")
        return A.EmitAct(ev.text, payload, self.span_from(kw.span))

    # ------------------------------------------------------------ fsm

    def _fsm_item(self):
        kw = self._keyword(("param", "input", "event", "var", "timer", "state", "on"), "fsm")
        k = kw.text
        if k == "param":
            return self._param(kw)
        if k == "input":
            return self._input(kw)
        if k == "event":
            return self._event(kw)
        if k == "var":
            return self._var(kw)
        if k == "timer":
            name = self.ident("timer name").text
            self.expect("=")
            period = self.expr()
            self.expect("->")
            ev = self.ident("timeout event name").text
            self.expect(";")
            return A.TimerDecl(name, period, ev, self.span_from(kw.span))
        if k == "state":
            name = self.ident("state name").text
            init = bool(self.accept("init"))
            self.expect(";")
            return A.StateDecl(name, init, self.span_from(kw.span))
        guard = self.expr()
        self.expect("from")
        src = self.ident("state name").text
        self.expect("to")
        dst = self.ident("state name").text
        actions = ()
        if self.accept("do"):
            actions = self._actions()
        self.expect(";")
        return A.TransitionRule(guard, src, dst, actions, self.span_from(kw.span))

    # ------------------------------------------------------------ nets

    def _net_item(self, coloured):
        where = "cpn" if coloured else "pn"
        kw = self._keyword(("param", "var", "event", "place", "transition"), where)
        k = kw.text
        if k == "param":
            return self._param(kw)
        if k == "var":
            return self._var(kw)
        if k == "event":
            return self._event(kw)
        if k == "place":
            name = self.ident("place name").text
            colour = None
            if self.accept(":"):
                colour = self._type()
            initial = ()
            if self.accept("="):
                initial = self._marking()
            self.expect(";")
            return A.PlaceDecl(name, colour, initial, self.span_from(kw.span))
        name = self.ident("transition name").text
        self.expect("{")
        items = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise ParseError(f"unclosed block 'transition {name}'", kw.span)
            items.append(self._arc_item())
        self.expect("}")
        return A.TransitionDecl(name, tuple(items), self.span_from(kw.span))

    def _cpn_item(self):
        return self._net_item(True)

    def _pn_item(self):
        return self._net_item(False)

    def _marking(self) -> tuple:
        terms = [self._marking_term()]
        while self.accept("+"):
            terms.append(self._marking_term())
        return tuple(terms)

    def _marking_term(self):
        count = self.int_literal("token count")
        if self.accept("'"):
            return (count.value, self.unary())
        return (count.value, None)

    def _optional_pattern(self):
        if self.at(";"):
            return None
        return self.expr()

    def _arc_item(self):
        kw = self._keyword(("in", "on", "guard", "out", "emit"), "transition")
        k = kw.text
        if k == "emit":
            em = self._emit(kw)
            self.expect(";")
            return em
        if k == "guard":
            e = self.expr()
            self.expect(";")
            return A.GuardDecl(e, self.span_from(kw.span))
        name = self.ident("place or event name").text
        pattern = self._optional_pattern()
        self.expect(";")
        span = self.span_from(kw.span)
        if k == "in":
            return A.InArcDecl(name, pattern, span)
        if k == "on":
            return A.EventArcDecl(name, pattern, span)
        return A.OutArcDecl(name, pattern, span)

    # ------------------------------------------------------------ ha

    def _ha_item(self):
        kw = self._keyword(("param", "input", "event", "var", "location", "edge"), "ha")
        k = kw.text
        if k == "param":
            return self._param(kw)
        if k == "input":
            return self._input(kw)
        if k == "event":
            return self._event(kw)
        if k == "var":
            return self._var(kw)
        if k == "location":
            name = self.ident("location name").text
            init = bool(self.accept("init"))
            flows = []
            inv = None
            if self.accept("{"):
                while not self.at("}"):
                    if self.tok.kind == "eof":
                        raise ParseError(f"unclosed block 'location {name}'", kw.span)
                    item = self._keyword(("flow", "inv"), "location")
                    if item.text == "flow":
                        var = self.ident("variable name")
                        self.expect("'")
                        self.expect("=")
                        rate = self.expr()
                        self.expect(";")
                        flows.append(A.FlowDecl(var.text, rate, self.span_from(item.span)))
                    else:
                        if inv is not None:
                            raise ParseError("location has more than one invariant", item.span)
                        inv = self.expr()
                        self.expect(";")
                self.expect("}")
            else:
                self.expect(";")
            return A.LocationDecl(name, init, tuple(flows), inv, self.span_from(kw.span))
        src = self.ident("location name").text
        self.expect("->")
        dst = self.ident("location name").text
        urgent = bool(self.accept("urgent"))
        triggers = []
        if self.accept("on"):
            triggers.append(self.ident("event name").text)
            while self.accept(","):
                triggers.append(self.ident("event name").text)
        guard = None
        if self.accept("when"):
            guard = self.expr()
        actions = ()
        if self.accept("do"):
            actions = self._actions()
        self.expect(";")
        return A.EdgeDecl(src, dst, urgent, tuple(triggers), guard, actions, self.span_from(kw.span))

    # ------------------------------------------------------------ dtc

    def _ref(self) -> A.Ref:
        first = self.ident("name")
        if self.accept("."):
            second = self.ident("name")
            return A.Ref(first.text, second.text, first.span.to(second.span))
        return A.Ref(None, first.text, first.span)

    def _dtc_item(self):
        kw = self._keyword(("input", "output", "instance", "wire"), "dtc")
        k = kw.text
        if k in ("input", "output"):
            name = self.ident("port name").text
            self.expect(";")
            return A.PortDecl(k, name, self.span_from(kw.span))
        if k == "instance":
            iid = self.ident("instance id").text
            self.expect(":")
            kind = self._keyword(INSTANCE_KINDS, "instance declaration").text
            if kind == "replay":
                t = self.tok
                if t.kind != "string":
                    raise ParseError(f"expected a quoted file path, found {self._describe(t)}", t.span)
                self.advance()
                self.expect(";")
                return A.InstanceDecl(iid, kind, t.value, (), self.span_from(kw.span))
            model = self.ident("model name").text
            args = []
            if self.accept("("):
                if not self.at(")"):
                    args.append(self._arg())
                    while self.accept(","):
                        args.append(self._arg())
                self.expect(")")
            self.expect(";")
            return A.InstanceDecl(iid, kind, model, tuple(args), self.span_from(kw.span))
        src = self._ref()
        self.expect("->")
        dst = self._ref()
        self.expect(";")
        return A.WireDecl(src, dst, self.span_from(kw.span))

    def _arg(self):
        name = self.ident("parameter name").text
        self.expect("=")
        return (name, self.expr())

    # ------------------------------------------------------------ system

    def _system_item(self):
        kw = self._keyword(SETTINGS + ("component", "channel", "stimulus"), "system")
        k = kw.text
        if k in SETTINGS:
            value = self.expr()
            self.expect(";")
            return A.SettingDecl(k, value, self.span_from(kw.span))
        if k == "component":
            cid = self.ident("component id").text
            self.expect(":")
            dtc = self.ident("dtc name").text
            self.expect(";")
            return A.ComponentDecl(cid, dtc, self.span_from(kw.span))
        if k == "channel":
            cid = self.ident("channel id").text
            self.expect(":")
            src = self._ref()
            self.expect("->")
            dst = self._ref()
            latency = 1
            if self.accept("latency"):
                latency = self.int_literal("latency").value
            self.expect(";")
            return A.ChannelDecl(cid, src, dst, latency, self.span_from(kw.span))
        time = self.expr()
        target = self._ref()
        if target.owner is None:
            raise ParseError("stimulus target must be component.port", target.span)
        payload = None
        if self.accept("("):
            payload = self.expr()
            self.expect(")")
        self.expect(";")
        return A.StimulusDecl(time, target.owner, target.name, payload, self.span_from(kw.span))


def _decode(text: Union[str, bytes], file) -> str:
    if isinstance(text, bytes):
        try:
            return text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8 (byte offset {exc.start})", Span(1, 1, 1, 2, file)) from None
    return text


def parse_model(text: Union[str, bytes], file: str = "<input>") -> A.ModelDocument:
    """Parse a document; raises :class:`ModelError` on the first syntax error."""
    try:
        src = _decode(text, file)
        return Parser(tokenize(src, file), file).document()
    except (ParseError, LexError) as exc:
        raise ModelError([error(str(exc), exc.span)]) from None


def parse_expression(text: str) -> Expr:
    try:
        p = Parser(tokenize(text))
        e = p.expr()
        if p.tok.kind != "eof":
            raise ParseError(f"unexpected {p._describe(p.tok)} after expression", p.tok.span)
        return e
    except (ParseError, LexError) as exc:
        raise ModelError([error(str(exc), exc.span)]) from None
