"""Residual checks of a variable assignment against a model, and assignment
construction from solver output."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import ExprError, constants, evaluate
from .model import DesignModel

TOL = 1e-6


class VerificationError(ValueError):
    pass


@dataclass
class Violation:
    kind: str        # constraint | bound | integrality | evaluation
    name: str
    tag: str
    residual: float


@dataclass
class CheckReport:
    feasible: bool
    max_residual: float
    objective: float
    residuals: dict = field(default_factory=dict)     # constraint name -> scaled residual
    violations: list = field(default_factory=list)

    def summary(self, limit: int = 20) -> str:
        head = (f"{'feasible' if self.feasible else 'infeasible'}: {len(self.residuals)} constraints, "
                f"max scaled residual {self.max_residual:.3e}, objective {self.objective:.6f}")
        rows = [f"  {v.kind} {v.name} [{v.tag}] residual {v.residual:.3e}"
                for v in sorted(self.violations, key=lambda v: -v.residual)[:limit]]
        return "\n".join([head] + rows)

    def to_dict(self) -> dict:
        return {"format_version": 1, "feasible": self.feasible, "max_residual": self.max_residual,
                "objective": self.objective,
                "violations": [{"kind": v.kind, "name": v.name, "tag": v.tag, "residual": v.residual}
                               for v in self.violations]}


def _row_scale(c) -> float:
    vals = [abs(x) for x in constants(c.lhs)] + [abs(x) for x in constants(c.rhs)]
    return max([1.0] + vals)


def check_solution(model, assignment: dict, tol: float = TOL) -> CheckReport:
    """Scaled residual of every constraint plus bound and integrality checks.

    Residuals are divided by the largest absolute constant in the row (at
    least 1) and compared with ``tol``.
    """
    missing = [n for n in model.variables if n not in assignment]
    if missing:
        shown = ", ".join(missing[:5]) + (" ..." if len(missing) > 5 else "")
        raise VerificationError(f"assignment lacks {len(missing)} variables: {shown}")
    vals = {k: float(v) for k, v in assignment.items()}
    viol = []
    for v in model.variables.values():
        x = vals[v.name]
        if not math.isfinite(x):
            viol.append(Violation("bound", v.name, v.family, math.inf))
            continue
        over = max(v.lb - x, x - v.ub, 0.0) / max(1.0, abs(v.lb), abs(v.ub))
        if over > tol:
            viol.append(Violation("bound", v.name, v.family, over))
        if v.domain in ("B", "I") and abs(x - round(x)) > tol:
            viol.append(Violation("integrality", v.name, v.family, abs(x - round(x))))
    res = {}
    for c in model.constraints:
        try:
            diff = evaluate(c.lhs, vals) - evaluate(c.rhs, vals)
        except (ExprError, OverflowError, ZeroDivisionError):
            res[c.name] = math.inf
            viol.append(Violation("evaluation", c.name, c.tag, math.inf))
            continue
        if c.sense == "<=":
            r = max(diff, 0.0)
        elif c.sense == ">=":
            r = max(-diff, 0.0)
        else:
            r = abs(diff)
        r /= _row_scale(c)
        res[c.name] = r
        if r > tol:
            viol.append(Violation("constraint", c.name, c.tag, r))
    try:
        obj = evaluate(model.objective, vals)
    except ExprError:
        obj = math.nan
    worst = max([0.0] + [v.residual for v in viol] + list(res.values()))
    return CheckReport(not viol, worst, obj, res, viol)


# ---------------------------------------------------------------- assignments

class _Context:
    """Design data the variable rules read from."""

    def __init__(self, problem, design, ev):
        self.p = problem
        self.design = design
        self.ev = ev
        self._ops = {}
        for st in problem.stations:
            for si in range(problem.S):
                d = ev.dispatch[st.index][si]
                for f in (d.fans if d else []):
                    self._ops[(st.index, f.type_index, f.copy, si)] = f
        g = problem.graph
        delta = {}
        for v in problem.vfcs:
            delta[v.edge] = -ev.vfc_dp[v.index]
        for k, sl in enumerate(problem.sils):
            delta[sl.edge] = -ev.sil_dp[k]
        for st in problem.stations:
            delta[st.edge] = ev.P[st.index]
        self.node_p = {g.source: np.array([g.nodes[g.source].pressure_pa[s] for s in problem.scen], dtype=float)}
        for eid in problem.edge_ids:
            e = g.edges[eid]
            loss = np.array([g.loss(eid, s) for s in problem.scen])
            self.node_p[e.to] = self.node_p[e.frm] + delta.get(eid, 0.0) - loss

    def counts(self, st):
        return st.configs[self.design.configs[st.index]]

    def fan_op(self, st, t, c, si):
        return self._ops.get((st.index, t, c, si))

    def sil(self, k):
        ch = self.design.silencers[k]
        if ch is None:
            return None
        sl = self.p.sils[k]
        return sl.options[ch[0]].n, float(sl.lengths[ch[1]])


def assignment_from_design(model: DesignModel, design, ev=None, vfc_pins=None) -> dict:
    p = model.problem
    if ev is None or ev.dispatch is None:
        ev = p.evaluate(design, with_acoustics=False, vfc_pins=vfc_pins)
        if ev.dispatch is None:
            raise VerificationError(f"design cannot be operated: {ev.reason}")
    ctx = _Context(p, design, ev)
    vals = {}
    for name, rule in model.rules:
        vals[name] = float(rule(vals, ctx))
    return vals


def assignment_from_solution(model: DesignModel, solution) -> dict:
    """Values for every model variable reproducing a solver solution."""
    from ..solver.solution import design_from_purchases

    p = model.problem
    if solution.design is not None:
        design = solution.design
    elif solution.purchases:
        design = design_from_purchases(p, solution.purchases)
    else:
        raise VerificationError("solution holds no design")
    bought = (solution.purchases or {}).get("vfcs") or {}
    pins = {v.index: bool(bought[v.edge]) for v in p.vfcs if v.edge in bought}
    return assignment_from_design(model, design, None, pins)


def dump_assignment(values: dict, path):
    Path(path).write_text(json.dumps({"format_version": 1, "values": values}, indent=1, sort_keys=True) + "\n")


def load_assignment(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise VerificationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict) or d.get("format_version") != 1 or not isinstance(d.get("values"), dict):
        raise VerificationError(f"{path}: expected an object with format_version 1 and values")
    return {k: float(v) for k, v in d["values"].items()}
