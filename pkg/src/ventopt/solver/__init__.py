"""Global design search: airflow-only, coupled, sequential and Pareto sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..problem import CompiledProblem, hydraulic_lower_bound
from .search import OFF, BranchAndBound
from .solution import Solution, SolutionError, build_solution, design_from_purchases, operations

__all__ = ["Solution", "SolutionError", "ParetoFront", "solve_airflow", "solve_coupled", "solve_sequential",
           "pareto_sweep", "continuous_subproblem", "hydraulic_lower_bound", "design_from_purchases"]


def _problem(model) -> CompiledProblem:
    return getattr(model, "problem", model)


def _limits(p: CompiledProblem, noise_limit):
    if noise_limit is None:
        return p.limits.copy()
    return np.full(p.R, float(noise_limit))


def _check_tol(tol):
    if not 0 < tol <= 0.1:
        raise ValueError("tolerance must lie in (0, 0.1]")


def solve_airflow(model, tol: float = 1e-3, time_budget: Optional[float] = None, **pins) -> Solution:
    """Cheapest design ignoring acoustics (silencers never bought)."""
    _check_tol(tol)
    p = _problem(model)
    res = BranchAndBound(p, airflow=True, tol=tol, time_budget=time_budget, **pins).run()
    return build_solution(p, res, "airflow", None, tol)


def solve_coupled(model, noise_limit=None, lower_bound: Optional[float] = None, tol: float = 1e-3,
                  time_budget: Optional[float] = None, station_pins=None, vfc_pins=None) -> Solution:
    """Cheapest design meeting the room noise limits.

    ``noise_limit`` of ``None`` keeps each room's own limit, a number applies
    one limit to every room and ``inf`` switches the acoustic check off.
    ``lower_bound`` is only used to stop early once the incumbent reaches it.
    """
    _check_tol(tol)
    p = _problem(model)
    if not p.coupled:
        raise ValueError("solve_coupled needs a model built in coupled mode")
    res = BranchAndBound(p, limits=_limits(p, noise_limit), tol=tol, time_budget=time_budget,
                         lower_bound=lower_bound, station_pins=station_pins, vfc_pins=vfc_pins).run()
    meta = {"warm_lower_bound": lower_bound, "_vfc_pins": vfc_pins}
    return build_solution(p, res, "coupled", noise_limit, tol, meta)


def solve_sequential(model, noise_limit=None, tol: float = 1e-3, time_budget: Optional[float] = None) -> Solution:
    """Airflow design first, then acoustics with its fan sets and VFC purchases pinned."""
    p = _problem(model)
    first = solve_airflow(p, tol=tol, time_budget=time_budget)
    if first.design is None:
        first.mode = "sequential"
        first.metadata["step"] = 1
        return first
    station_pins = {st.index: first.design.configs[st.index] for st in p.stations}
    vfc_pins = {v.index: bool(first.evaluation.vfc_bought[v.index]) for v in p.vfcs}
    sol = solve_coupled(p, noise_limit, tol=tol, time_budget=time_budget,
                        station_pins=station_pins, vfc_pins=vfc_pins)
    sol.mode = "sequential"
    sol.metadata["step1_objective_eur"] = first.objective
    if sol.design is None and sol.status == "infeasible":
        sol.status = "infeasible_pinned"
    return sol


@dataclass
class ParetoFront:
    """Points ordered from loose to tight limits.

    Each point holds the requested limit, the realized max room level (the
    abscissa), the solution and its objective.
    """

    points: list = field(default_factory=list)
    infeasible: Optional[dict] = None
    provenance: list = field(default_factory=list)

    @property
    def min_feasible_limit(self):
        return self.points[-1]["abscissa_dba"] if self.points else None

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "points": [{"requested_limit_dba": _fmt(pt["limit"]), "abscissa_dba": _fmt(pt["abscissa_dba"]),
                        "objective_eur": pt["objective"], "solution": pt["solution"].to_dict()}
                       for pt in self.points],
            "infeasible": self.infeasible,
            "lower_bound_provenance": self.provenance,
            "min_feasible_limit_dba": _fmt(self.min_feasible_limit),
        }

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_csv(self, sequential: Optional[list] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["limit_dba", "invest_eur", "energy_eur", "total_eur"]
        if sequential is not None:
            head += ["seq_invest_eur", "seq_energy_eur", "seq_total_eur"]
        w.writerow(head)
        for i, pt in enumerate(self.points):
            s = pt["solution"]
            row = [_fmt(pt["abscissa_dba"]), f"{sum(s.invest.values()):.6f}", f"{s.energy:.6f}",
                   f"{s.objective:.6f}"]
            if sequential is not None:
                q = sequential[i]
                if q is None or q.design is None:
                    row += ["", "", ""]
                else:
                    row += [f"{sum(q.invest.values()):.6f}", f"{q.energy:.6f}", f"{q.objective:.6f}"]
            w.writerow(row)
        return buf.getvalue()


def _fmt(x):
    if x is None:
        return None
    return "inf" if math.isinf(x) else round(float(x), 6)


def pareto_sweep(model, limits: Sequence[float], tol: float = 1e-3, time_budget: Optional[float] = None,
                 chain: bool = True) -> ParetoFront:
    """Solve for strictly decreasing limits, each solve warm-started with the
    previous objective as lower bound. The airflow-only optimum comes first."""
    limits = [float(x) for x in limits]
    if any(b >= a for a, b in zip(limits, limits[1:])):
        raise ValueError("limits must be strictly decreasing")
    p = _problem(model)
    front = ParetoFront()
    air = solve_airflow(p, tol=tol, time_budget=time_budget)
    if air.design is None:
        front.infeasible = {"limit": "inf", "status": air.status, "certificate": air.certificate}
        return front
    if p.coupled and air.room_levels_dba is None:
        air = solve_coupled(p, math.inf, tol=tol, time_budget=time_budget)
    front.points.append({"limit": math.inf, "abscissa_dba": air.max_room_dba if air.max_room_dba is not None
                         else math.inf, "objective": air.objective, "solution": air})
    front.provenance.append({"limit": "inf", "lower_bound": None, "source": "airflow-only solve"})
    for lim in limits:
        if math.isinf(lim):
            continue
        prev = front.points[-1]
        # a previous design that already meets this limit stays optimal
        if prev["abscissa_dba"] <= lim + 1e-6 and prev["solution"].status == "optimal":
            front.provenance.append({"limit": lim, "lower_bound": prev["objective"], "source": "previous optimum meets limit"})
            continue
        lb = prev["objective"] if chain else None
        sol = solve_coupled(p, lim, lower_bound=lb, tol=tol, time_budget=time_budget)
        front.provenance.append({"limit": lim, "lower_bound": lb,
                                 "source": "previous point" if chain else "cold"})
        if sol.design is None:
            front.infeasible = {"limit": lim, "status": sol.status, "certificate": sol.certificate}
            break
        front.points.append({"limit": lim, "abscissa_dba": sol.max_room_dba, "objective": sol.objective,
                             "solution": sol})
    # a tighter design that came out cheaper is feasible for every looser limit too
    for i in range(len(front.points) - 2, -1, -1):
        nxt = front.points[i + 1]
        if nxt["objective"] < front.points[i]["objective"]:
            front.points[i] = dict(front.points[i], objective=nxt["objective"], solution=nxt["solution"],
                                   abscissa_dba=nxt["abscissa_dba"])
    return front


def continuous_subproblem(topology: dict, model, scenarios: Optional[Sequence[str]] = None,
                          tol: float = 1e-6) -> dict:
    """Operate a fixed purchase decision.

    ``topology`` uses the solution purchase layout; a silencer entry may give
    ``length_m: null`` to let the length float on its grid.
    Returns per-scenario operating points, the weighted energy cost and the
    relative error bound of the length search.
    """
    p = _problem(model)
    fixed = json.loads(json.dumps(topology))
    free = {}
    for k, sl in enumerate(p.sils):
        c = (fixed.get("silencers") or {}).get(sl.edge)
        if c is not None and c.get("length_m") is None:
            opt = [j for j, o in enumerate(sl.options) if o.n == c["splitters"]]
            if not opt:
                raise SolutionError(f"silencer {sl.edge}: {c['splitters']} splitters not offered")
            free[k] = (opt[0], 0, len(sl.lengths) - 1)
            c["length_m"] = float(sl.lengths[0])
    design = design_from_purchases(p, fixed)
    gap = 0.0
    if free:
        fix = {k: (OFF if c is None else (c[0], c[1], c[1])) for k, c in enumerate(design.silencers) if k not in free}
        fix.update(free)
        res = BranchAndBound(p, tol=tol, station_pins=dict(enumerate(design.configs)), sil_fixings=fix).run()
        if res.design is None:
            return {"feasible": False, "reason": "no silencer length meets the limits", "error_bound": math.inf}
        design, gap = res.design, res.gap
    ev = p.evaluate(design)
    if not ev.feasible:
        return {"feasible": False, "reason": ev.reason, "error_bound": 0.0}
    sel = list(p.scen) if scenarios is None else list(scenarios)
    ops = operations(p, ev)
    idx = [p.scen.index(s) for s in sel]
    energy = p.w_energy * float(sum(p.w[i] * ev.power[:, i].sum() for i in idx))
    return {"feasible": True, "operations": {s: ops[s] for s in sel}, "energy_eur": energy,
            "silencer_lengths_m": {sl.edge: (None if design.silencers[k] is None
                                             else float(sl.lengths[design.silencers[k][1]]))
                                   for k, sl in enumerate(p.sils)},
            "error_bound": gap, "design": design}
