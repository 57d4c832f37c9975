"""Constraint language: AST, parser, canonical printer, three-valued evaluator.

Grammar (precedence not > and > or, both binary operators left-associative)::

    expr := or
    or   := and ("or" and)*
    and  := not ("and" not)*
    not  := "not" not | atom
    atom := "(" expr ")" | "exists(" ident ")" | ident op literal

Literals are quoted text, integers, booleans ``true|false``, dotted versions
and sizes ``<int><B|KB|MB|GB>``. Evaluation is three-valued: a comparison on a
missing property yields Unknown rather than a violation, so that sites with
undeclared properties are reported distinctly from sites that fail a check.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from .errors import ExpressionSyntaxError
from .values import (
    PropertyValue,
    Size,
    Version,
    kind_of,
)

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Exists:
    name: str


@dataclass(frozen=True)
class Compare:
    name: str
    op: str  # one of = != < <= > >=
    literal: PropertyValue


@dataclass(frozen=True)
class Not:
    operand: "Expression"


@dataclass(frozen=True)
class And:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Or:
    left: "Expression"
    right: "Expression"


Expression = Union[Exists, Compare, Not, And, Or]

COMPARE_OPS = ("=", "!=", "<", "<=", ">", ">=")

# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<size>\d+(?:B|KB|MB|GB)\b)
  | (?P<version>\d+(?:\.\d+)+)
  | (?P<int>\d+)
  | (?P<ident>[a-zA-Z_][a-zA-Z0-9_.]*)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
    """,
    re.VERBOSE,
)

KEYWORDS = {"and", "or", "not", "true", "false", "exists"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ExpressionSyntaxError(
                f"unexpected character {text[pos]!r}", pos, frozenset({"token"})
            )
        kind = m.lastgroup
        if kind != "ws":
            tok_text = m.group()
            if kind == "ident" and tok_text in KEYWORDS:
                kind = tok_text
            tokens.append(Token(kind, tok_text, pos))
        pos = m.end()
    tokens.append(Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, expected: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            self.fail({expected})
        return self.advance()

    def fail(self, expected: set[str]):
        tok = self.peek()
        what = tok.text or "end of input"
        raise ExpressionSyntaxError(f"unexpected {what!r}", tok.offset, frozenset(expected))

    def parse(self) -> Expression:
        node = self.parse_or()
        if self.peek().kind != "eof":
            self.fail({"end of input", "'and'", "'or'"})
        return node

    def parse_or(self) -> Expression:
        node = self.parse_and()
        while self.peek().kind == "or":
            self.advance()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Expression:
        node = self.parse_not()
        while self.peek().kind == "and":
            self.advance()
            node = And(node, self.parse_not())
        return node

    def parse_not(self) -> Expression:
        if self.peek().kind == "not":
            self.advance()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self) -> Expression:
        tok = self.peek()
        if tok.kind == "lparen":
            self.advance()
            node = self.parse_or()
            self.expect("rparen", "')'")
            return node
        if tok.kind == "exists":
            self.advance()
            self.expect("lparen", "'('")
            name = self.expect("ident", "identifier").text
            self.expect("rparen", "')'")
            return Exists(name)
        if tok.kind == "ident":
            name = self.advance().text
            op = self.expect("op", "comparison operator").text
            return Compare(name, op, self.parse_literal())
        self.fail({"'('", "'exists('", "identifier", "'not'"})

    def parse_literal(self) -> PropertyValue:
        tok = self.peek()
        if tok.kind == "string":
            self.advance()
            return _unquote(tok.text)
        if tok.kind == "size":
            self.advance()
            return Size.parse(tok.text)
        if tok.kind == "version":
            self.advance()
            return Version.parse(tok.text)
        if tok.kind == "int":
            self.advance()
            return int(tok.text)
        if tok.kind in ("true", "false"):
            self.advance()
            return tok.kind == "true"
        self.fail({"literal"})


def parse_expression(text: str) -> Expression:
    """Parse constraint text; raises ExpressionSyntaxError with offset."""
    return _Parser(text).parse()


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    return re.sub(r"\\(.)", r"\1", body)


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


# ---------------------------------------------------------------------------
# Canonical printer

_PRECEDENCE = {Or: 1, And: 2, Not: 3, Exists: 4, Compare: 4}


def print_literal(value: PropertyValue) -> str:
    kind = kind_of(value)
    if kind == "text":
        return _quote(value)
    if kind == "boolean":
        return "true" if value else "false"
    if kind == "version":
        # A single-part version would re-tokenize as an integer; pad with .0
        # (equal under component-wise comparison).
        return str(value) if len(value.parts) > 1 else f"{value.parts[0]}.0"
    return str(value)  # integer, bytes


def print_expression(expr: Expression) -> str:
    """Canonical text form; ``parse_expression`` round-trips it."""

    def render(node: Expression, parent_prec: int, right_of_binary: bool) -> str:
        prec = _PRECEDENCE[type(node)]
        if isinstance(node, Exists):
            out = f"exists({node.name})"
        elif isinstance(node, Compare):
            out = f"{node.name} {node.op} {print_literal(node.literal)}"
        elif isinstance(node, Not):
            out = "not " + render(node.operand, prec, False)
        elif isinstance(node, And):
            out = render(node.left, prec, False) + " and " + render(node.right, prec, True)
        else:
            out = render(node.left, prec, False) + " or " + render(node.right, prec, True)
        # Left-associative binaries: a right child at equal precedence needs
        # parentheses to preserve the tree shape.
        if prec < parent_prec or (prec == parent_prec and right_of_binary):
            return "(" + out + ")"
        return out

    return render(expr, 0, False)


# ---------------------------------------------------------------------------
# Three-valued evaluation


class Status(str, Enum):
    SATISFIED = "SATISFIED"
    VIOLATED = "VIOLATED"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Reason:
    clause: str
    code: str  # FALSE_CLAUSE | TYPE_MISMATCH


@dataclass(frozen=True)
class EvalOutcome:
    status: Status
    reasons: tuple[Reason, ...] = ()
    missing: frozenset[str] = field(default_factory=frozenset)

    @classmethod
    def satisfied(cls) -> "EvalOutcome":
        return cls(Status.SATISFIED)

    @classmethod
    def violated(cls, reasons) -> "EvalOutcome":
        return cls(Status.VIOLATED, reasons=_dedupe(reasons))

    @classmethod
    def unknown(cls, names) -> "EvalOutcome":
        return cls(Status.UNKNOWN, missing=frozenset(names))

    @property
    def is_satisfied(self) -> bool:
        return self.status is Status.SATISFIED

    def to_json(self) -> dict:
        out: dict = {"status": self.status.value}
        if self.reasons:
            out["reasons"] = [{"clause": r.clause, "code": r.code} for r in self.reasons]
        if self.missing:
            out["missing"] = sorted(self.missing)
        return out


def _dedupe(reasons) -> tuple[Reason, ...]:
    seen = set()
    out = []
    for r in reasons:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return tuple(out)


def evaluate(expr: Expression, props: dict[str, PropertyValue]) -> EvalOutcome:
    """Evaluate an expression against a property set.

    Combination tables: And(V, _) = V, And(U, S) = U, Or(S, _) = S,
    Or(U, V) = U, Not(U) = U. Violated sides contribute their reasons in
    left-to-right order; Unknown sides pool their missing names.
    """
    if isinstance(expr, Exists):
        if expr.name in props:
            return EvalOutcome.satisfied()
        return EvalOutcome.violated([Reason(print_expression(expr), "FALSE_CLAUSE")])

    if isinstance(expr, Compare):
        if expr.name not in props:
            return EvalOutcome.unknown([expr.name])
        actual = props[expr.name]
        if kind_of(actual) != kind_of(expr.literal):
            return EvalOutcome.violated([Reason(print_expression(expr), "TYPE_MISMATCH")])
        if _compare(actual, expr.op, expr.literal):
            return EvalOutcome.satisfied()
        return EvalOutcome.violated([Reason(print_expression(expr), "FALSE_CLAUSE")])

    if isinstance(expr, Not):
        inner = evaluate(expr.operand, props)
        if inner.status is Status.UNKNOWN:
            return inner
        if inner.status is Status.VIOLATED:
            return EvalOutcome.satisfied()
        return EvalOutcome.violated([Reason(print_expression(expr), "FALSE_CLAUSE")])

    if isinstance(expr, And):
        return combine_and(evaluate(expr.left, props), evaluate(expr.right, props))

    if isinstance(expr, Or):
        return combine_or(evaluate(expr.left, props), evaluate(expr.right, props))

    raise TypeError(f"not an expression: {expr!r}")


def combine_and(left: EvalOutcome, right: EvalOutcome) -> EvalOutcome:
    if left.status is Status.VIOLATED or right.status is Status.VIOLATED:
        return EvalOutcome.violated(left.reasons + right.reasons)
    if left.status is Status.UNKNOWN or right.status is Status.UNKNOWN:
        return EvalOutcome.unknown(left.missing | right.missing)
    return EvalOutcome.satisfied()


def combine_or(left: EvalOutcome, right: EvalOutcome) -> EvalOutcome:
    if left.status is Status.SATISFIED or right.status is Status.SATISFIED:
        return EvalOutcome.satisfied()
    if left.status is Status.UNKNOWN or right.status is Status.UNKNOWN:
        return EvalOutcome.unknown(left.missing | right.missing)
    return EvalOutcome.violated(left.reasons + right.reasons)


def _compare(actual: PropertyValue, op: str, literal: PropertyValue) -> bool:
    if op == "=":
        return actual == literal
    if op == "!=":
        return actual != literal
    if op == "<":
        return actual < literal
    if op == "<=":
        return actual <= literal
    if op == ">":
        return actual > literal
    if op == ">=":
        return actual >= literal
    raise ValueError(f"unknown operator {op!r}")


def conjunction(exprs) -> Expression | None:
    """Fold expressions into a left-associated conjunction (None if empty)."""
    node: Expression | None = None
    for e in exprs:
        node = e if node is None else And(node, e)
    return node


# ---------------------------------------------------------------------------
# Standing constraints

DISK_FREE = "disk.free"


@dataclass(frozen=True)
class StandingCheck:
    constraint: str
    outcome: EvalOutcome


def check_standing(site, delta_footprint: Size | int = 0) -> list[StandingCheck]:
    """Evaluate a machine's standing constraints under a simulated install.

    The conventional ``disk.free`` property is reduced by ``delta_footprint``
    (floored at zero) before evaluation; other properties are untouched.
    ``site`` needs ``properties`` and ``standing_constraints`` attributes.
    """
    delta = delta_footprint.count if isinstance(delta_footprint, Size) else int(delta_footprint)
    props = dict(site.properties)
    free = props.get(DISK_FREE)
    if delta and isinstance(free, Size):
        props[DISK_FREE] = Size(max(0, free.count - delta))
    checks = []
    for text in site.standing_constraints:
        expr = parse_expression(text)
        checks.append(StandingCheck(text, evaluate(expr, props)))
    return checks
