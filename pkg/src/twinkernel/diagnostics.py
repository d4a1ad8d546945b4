from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    """1-based line/column range; ``end_col`` is exclusive."""

    line: int
    col: int
    end_line: int
    end_col: int
    file: str = "<input>"

    @classmethod
    def point(cls, line, col, length=1, file="<input>"):
        return cls(line, col, line, col + length, file)

    def to(self, other: "Span") -> "Span":
        return Span(self.line, self.col, other.end_line, other.end_col, self.file)

    def __str__(self):
        return f"{self.file}:{self.line}:{self.col}"


NOWHERE = Span(0, 0, 0, 0, "<model>")


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    span: Span = NOWHERE

    def __str__(self):
        if self.span is NOWHERE or self.span.line == 0:
            return f"{self.severity}: {self.message}"
        return f"{self.span}: {self.severity}: {self.message}"


def error(message, span=NOWHERE) -> Diagnostic:
    return Diagnostic("error", message, span or NOWHERE)


def warning(message, span=NOWHERE) -> Diagnostic:
    return Diagnostic("warning", message, span or NOWHERE)


def has_errors(diags) -> bool:
    return any(d.severity == "error" for d in diags)


def pick(span, fallback):
    """``span`` unless it is unknown, else ``fallback``."""
    if span is None or span is NOWHERE or span.line == 0:
        return fallback
    return span
