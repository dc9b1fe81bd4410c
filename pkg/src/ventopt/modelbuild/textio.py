"""Line-oriented text export of a design model and its parser.

Layout (one item per line)::

    format_version 1
    model <name> <mode>
    var <name> <B|I|C> <lb> <ub>          sorted by name
    obj min <expr>
    con <tag> <name> <sense> <lhs> <rhs>  sorted by tag, then name

Expressions are S-expressions over + - * / ^ log10 sqrt; numbers use the
shortest round-tripping decimal form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .expr import ExprError, fmt_float, parse_tokens, to_sexpr, tokenize
from .model import Constraint, VarDecl

FORMAT_VERSION = 1
SENSES = ("<=", ">=", "==")


class ModelFormatError(ValueError):
    pass


@dataclass
class ParsedModel:
    name: str
    mode: str
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: object = None


def export_model(model) -> str:
    lines = [f"format_version {FORMAT_VERSION}", f"model {model.name} {model.mode}"]
    for name in sorted(model.variables):
        v = model.variables[name]
        lines.append(f"var {v.name} {v.domain} {fmt_float(v.lb)} {fmt_float(v.ub)}")
    lines.append(f"obj min {to_sexpr(model.objective)}")
    for c in sorted(model.constraints, key=lambda c: (c.tag, c.name)):
        lines.append(f"con {c.tag} {c.name} {c.sense} {to_sexpr(c.lhs)} {to_sexpr(c.rhs)}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ParsedModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"format_version {FORMAT_VERSION}":
        raise ModelFormatError(f"line 1: expected 'format_version {FORMAT_VERSION}'")
    out = None
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        head, _, rest = line.partition(" ")
        try:
            if head == "model":
                parts = rest.split()
                if len(parts) != 2:
                    raise ModelFormatError("model line needs a name and a mode")
                out = ParsedModel(parts[0], parts[1])
                continue
            if out is None:
                raise ModelFormatError("model line missing")
            if head == "var":
                parts = rest.split()
                if len(parts) != 4 or parts[1] not in ("B", "I", "C"):
                    raise ModelFormatError("expected: var <name> <B|I|C> <lb> <ub>")
                name = parts[0]
                if name in out.variables:
                    raise ModelFormatError(f"variable {name} declared twice")
                out.variables[name] = VarDecl(name, parts[1], float(parts[2]), float(parts[3]),
                                              name.split("[", 1)[0])
            elif head == "obj":
                toks = tokenize(rest)
                if not toks or toks[0] != "min":
                    raise ModelFormatError("objective must be 'obj min <expr>'")
                e, pos = parse_tokens(toks, 1)
                if pos != len(toks):
                    raise ModelFormatError("trailing tokens after objective")
                out.objective = e
            elif head == "con":
                toks = tokenize(rest)
                if len(toks) < 5 or toks[2] not in SENSES:
                    raise ModelFormatError("expected: con <tag> <name> <sense> <lhs> <rhs>")
                lhs, pos = parse_tokens(toks, 3)
                rhs, pos = parse_tokens(toks, pos)
                if pos != len(toks):
                    raise ModelFormatError("trailing tokens after constraint")
                out.constraints.append(Constraint(toks[0], toks[1], toks[2], lhs, rhs))
            else:
                raise ModelFormatError(f"unknown line type {head!r}")
        except (ExprError, ValueError) as exc:
            if isinstance(exc, ModelFormatError) and str(exc).startswith("line "):
                raise
            raise ModelFormatError(f"line {no}: {exc}") from None
    if out is None or out.objective is None:
        raise ModelFormatError("model or objective line missing")
    return out
