"""Small expression trees with an S-expression text form.

Leaves are constants (finite floats) and variable names; inner nodes carry
one of the operators in ``OPS``. ``+`` and ``*`` are n-ary, ``-`` is unary
negation or binary subtraction, ``^`` takes a constant exponent.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

OPS = {"+": (1, None), "-": (1, 2), "*": (1, None), "/": (2, 2), "^": (2, 2), "log10": (1, 1), "sqrt": (1, 1)}
NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_.:,\[\]-]*$")


class ExprError(ValueError):
    pass


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ExprError("constants must be finite")


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Op:
    op: str
    args: tuple

    def __post_init__(self):
        if self.op not in OPS:
            raise ExprError(f"unknown operator {self.op!r}")
        lo, hi = OPS[self.op]
        if len(self.args) < lo or (hi is not None and len(self.args) > hi):
            raise ExprError(f"operator {self.op} takes {lo}..{hi or 'n'} arguments, got {len(self.args)}")


Expr = Union[Const, Var, Op]


def const(x) -> Const:
    return Const(float(x))


def as_expr(x) -> Expr:
    if isinstance(x, (Const, Var, Op)):
        return x
    if isinstance(x, str):
        return Var(x)
    return const(x)


def add(*terms) -> Expr:
    ts = [as_expr(t) for t in terms if not (isinstance(t, (int, float)) and t == 0)]
    if not ts:
        return Const(0.0)
    return ts[0] if len(ts) == 1 else Op("+", tuple(ts))


def sub(a, b) -> Expr:
    return Op("-", (as_expr(a), as_expr(b)))


def mul(*factors) -> Expr:
    fs = [as_expr(f) for f in factors]
    return fs[0] if len(fs) == 1 else Op("*", tuple(fs))


def div(a, b) -> Expr:
    return Op("/", (as_expr(a), as_expr(b)))


def power(a, k) -> Expr:
    return Op("^", (as_expr(a), const(k)))


def log10(a) -> Expr:
    return Op("log10", (as_expr(a),))


def sqrt(a) -> Expr:
    return Op("sqrt", (as_expr(a),))


def lin(terms, c: float = 0.0) -> Expr:
    """Linear combination from ``[(coef, var name), ...]`` plus a constant."""
    parts = []
    for coef, name in terms:
        if coef == 0:
            continue
        parts.append(Var(name) if coef == 1 else mul(coef, name))
    if c != 0 or not parts:
        parts.append(const(c))
    return parts[0] if len(parts) == 1 else Op("+", tuple(parts))


# ---------------------------------------------------------------- evaluation

def evaluate(e: Expr, values: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(values[e.name])
        except KeyError:
            raise ExprError(f"no value for variable {e.name}") from None
    a = [evaluate(x, values) for x in e.args]
    op = e.op
    if op == "+":
        return math.fsum(a)
    if op == "-":
        return -a[0] if len(a) == 1 else a[0] - a[1]
    if op == "*":
        out = 1.0
        for x in a:
            out *= x
        return out
    if op == "/":
        if a[1] == 0:
            raise ExprError("division by zero")
        return a[0] / a[1]
    if op == "^":
        return a[0] ** a[1]
    if op == "log10":
        if a[0] <= 0:
            raise ExprError("log10 of a nonpositive value")
        return math.log10(a[0])
    if a[0] < 0:
        raise ExprError("sqrt of a negative value")
    return math.sqrt(a[0])


def variables(e: Expr) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, Op):
        for x in e.args:
            yield from variables(x)


def constants(e: Expr) -> Iterator[float]:
    if isinstance(e, Const):
        yield e.value
    elif isinstance(e, Op):
        for x in e.args:
            yield from constants(x)


# ---------------------------------------------------------------- text form

def fmt_float(x: float) -> str:
    return repr(float(x))


def to_sexpr(e: Expr) -> str:
    if isinstance(e, Const):
        return fmt_float(e.value)
    if isinstance(e, Var):
        return e.name
    return "(" + " ".join([e.op] + [to_sexpr(a) for a in e.args]) + ")"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def tokenize(text: str) -> list:
    return _TOKEN.findall(text)


def parse_tokens(tokens: list, pos: int = 0):
    """Parse one expression starting at ``tokens[pos]``; returns (expr, next pos)."""
    if pos >= len(tokens):
        raise ExprError("unexpected end of expression")
    tok = tokens[pos]
    if tok == "(":
        if pos + 1 >= len(tokens):
            raise ExprError("unexpected end of expression")
        op = tokens[pos + 1]
        if op not in OPS:
            raise ExprError(f"unknown operator {op!r}")
        args = []
        pos += 2
        while pos < len(tokens) and tokens[pos] != ")":
            a, pos = parse_tokens(tokens, pos)
            args.append(a)
        if pos >= len(tokens):
            raise ExprError("missing closing parenthesis")
        return Op(op, tuple(args)), pos + 1
    if tok == ")":
        raise ExprError("unexpected ')'")
    if NAME_RE.match(tok):
        return Var(tok), pos + 1
    try:
        return Const(float(tok)), pos + 1
    except ValueError:
        raise ExprError(f"bad token {tok!r}") from None


def parse(text: str) -> Expr:
    toks = tokenize(text)
    e, pos = parse_tokens(toks)
    if pos != len(toks):
        raise ExprError("trailing tokens after expression")
    return e
