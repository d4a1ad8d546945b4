"""Tokenizer for ``.twin`` model files.

Keywords are contextual: the lexer only produces identifiers and the
parser decides what an identifier means where it appears.
"""

from __future__ import annotations

import math
import re
from typing import NamedTuple

from ..diagnostics import Span

TIME_UNITS = {"s": 1_000_000_000, "ms": 1_000_000, "us": 1_000, "ns": 1}

_PUNCT = (":=", "->", "&&", "||", "==", "!=", "<=", ">=",
          "{", "}", "(", ")", ";", ",", ":", "=", "'", "+", "-", "*", "/", "!", "<", ">", "|", ".")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
# A backslash always takes the next character with it, so the string
# pattern never backtracks; only \" and \\ are escapes in the value.
_STR_ESC = re.compile(r'\\(["\\])')
_SCAN = re.compile(
    r"(?P<ws>[ \t\r\f\v]+)"
    r"|(?P<nl>\n)"
    r"|(?P<comment>\#[^\n]*)"
    r"|(?P<num>[0-9]+(?P<frac>\.[0-9]+)?(?P<exp>[eE][+-]?[0-9]+)?)(?P<unit>[A-Za-z_][A-Za-z0-9_]*)?"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r'|(?P<string>"(?:[^"\\\n]|\\.)*")'
    r"|(?P<punct>" + "|".join(re.escape(p) for p in sorted(_PUNCT, key=len, reverse=True)) + ")"
    r"|(?P<bad>[\s\S])"
)


class LexError(Exception):
    def __init__(self, message, span):
        super().__init__(message)
        self.span = span


class Token(NamedTuple):
    kind: str  # ident | num | time | string | punct | eof
    text: str
    value: object
    span: Span


def _time_token(text, m, span) -> Token:
    num, u = m.group("num"), m.group("unit")
    if u not in TIME_UNITS:
        raise LexError(f"unknown time unit {u!r}", span)
    factor = TIME_UNITS[u]
    if m.group("frac") is None and m.group("exp") is None:
        ns = int(num) * factor
    else:
        scaled = float(num) * factor
        if not math.isfinite(scaled):
            raise LexError(f"time literal {m.group(0)!r} out of range", span)
        ns = round(scaled)
        if abs(ns - scaled) > 1e-6 * max(1.0, abs(ns)):
            raise LexError(f"time literal {m.group(0)!r} is not a whole number of nanoseconds", span)
    return Token("time", m.group(0), ns, span)


def _number_token(m, span) -> Token:
    num = m.group("num")
    if m.group("frac") is None and m.group("exp") is None:
        return Token("num", num, int(num), span)
    v = float(num)
    if not math.isfinite(v):
        raise LexError(f"number {num!r} out of range", span)
    return Token("num", num, v, span)


def _unterminated(text, i, line, col, file):
    end = text.find("\n", i)
    end = len(text) if end < 0 else end
    return LexError("unterminated string", Span(line, col, line, col + end - i, file))


def tokenize(text: str, file: str = "<input>") -> list[Token]:
    out: list[Token] = []
    append = out.append
    line, line_start = 1, 0
    for m in _SCAN.finditer(text):
        kind = m.lastgroup
        if kind == "ws" or kind == "comment":
            continue
        i, j = m.span()
        if kind == "nl":
            line += 1
            line_start = j
            continue
        col = i - line_start + 1
        span = Span(line, col, line, col + j - i, file)
        word = m.group()
        if kind == "ident" or kind == "punct":
            append(Token(kind, word, word, span))
        elif kind == "num":
            append(_number_token(m, span))
        elif kind == "unit":  # lastgroup names the innermost group that closed last
            append(_time_token(text, m, span))
        elif kind == "string":
            append(Token("string", word, _STR_ESC.sub(r"\1", word[1:-1]), span))
        else:
            if word == '"':
                raise _unterminated(text, i, line, col, file)
            shown = word if word.isprintable() else f"U+{ord(word):04X}"
            raise LexError(f"unexpected character {shown!r}", Span(line, col, line, col + 1, file))
    col = len(text) - line_start + 1
    append(Token("eof", "", None, Span(line, col, line, col, file)))
    return out
