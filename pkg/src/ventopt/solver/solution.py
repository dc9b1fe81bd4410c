"""Solution records, their JSON/CSV forms, and mapping back to designs."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from ..problem import CompiledProblem, Design, Evaluation

FORMAT_VERSION = 1


class SolutionError(ValueError):
    pass


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x):
    if isinstance(x, str):
        return float(x)
    return x


@dataclass
class Solution:
    status: str
    objective: float
    gap: float
    lower_bound: float
    mode: str
    noise_limit: object = None
    invest: dict = field(default_factory=dict)
    energy: float = 0.0
    purchases: dict = field(default_factory=dict)
    operations: dict = field(default_factory=dict)
    room_levels_dba: Optional[dict] = None
    certificate: Optional[dict] = None
    stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    design: Optional[Design] = field(default=None, repr=False, compare=False)
    evaluation: Optional[Evaluation] = field(default=None, repr=False, compare=False)

    @property
    def feasible(self):
        if self.design is not None:
            return True
        return self.status in ("optimal", "budget") and math.isfinite(self.objective)

    @property
    def max_room_dba(self):
        if not self.room_levels_dba:
            return None
        return max(v for row in self.room_levels_dba.values() for v in row.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "status": self.status,
            "mode": self.mode,
            "noise_limit_dba": _num(self.noise_limit) if not isinstance(self.noise_limit, dict) else self.noise_limit,
            "objective_eur": _num(self.objective),
            "lower_bound_eur": _num(self.lower_bound),
            "gap": _num(self.gap),
            "costs": {"invest": {k: float(v) for k, v in self.invest.items()}, "energy": float(self.energy),
                      "total": _num(self.objective)},
            "purchases": self.purchases,
            "operations": self.operations,
            "room_levels_dba": self.room_levels_dba,
            "certificate": self.certificate,
            "stats": self.stats,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def dump(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        if d.get("format_version") != FORMAT_VERSION:
            raise SolutionError(f"solution format_version must be {FORMAT_VERSION}")
        costs = d.get("costs", {})
        return cls(status=d["status"], objective=_unnum(d["objective_eur"]), gap=_unnum(d.get("gap")),
                   lower_bound=_unnum(d.get("lower_bound_eur")), mode=d.get("mode", "coupled"),
                   noise_limit=_unnum(d.get("noise_limit_dba")), invest=costs.get("invest", {}),
                   energy=costs.get("energy", 0.0), purchases=d.get("purchases", {}),
                   operations=d.get("operations", {}), room_levels_dba=d.get("room_levels_dba"),
                   certificate=d.get("certificate"), stats=d.get("stats", {}), metadata=d.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "Solution":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SolutionError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        except KeyError as exc:
            raise SolutionError(f"{path}: missing field {exc}") from None

    def cost_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["item", "eur"])
        for k in sorted(self.invest):
            w.writerow([f"invest_{k}", f"{self.invest[k]:.6f}"])
        w.writerow(["energy", f"{self.energy:.6f}"])
        w.writerow(["total", f"{self.objective:.6f}"])
        return buf.getvalue()

    def rooms_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.room_levels_dba:
            w.writerow(["room"])
            return buf.getvalue()
        scen = sorted({s for row in self.room_levels_dba.values() for s in row})
        w.writerow(["room"] + scen)
        for r, row in self.room_levels_dba.items():
            w.writerow([r] + [f"{row[s]:.6f}" for s in scen])
        return buf.getvalue()


def build_solution(problem: CompiledProblem, result, mode: str, noise_limit, tol: float,
                   extra_meta: Optional[dict] = None) -> Solution:
    """Turn a search result into a Solution (levels re-evaluated exactly)."""
    meta = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"), "tol": tol}
    meta.update(extra_meta or {})
    stats = {"nodes": result.nodes, "leaves": result.leaves}
    if result.design is None:
        return Solution(result.status, math.inf, math.inf, result.lower_bound, mode, noise_limit,
                        certificate=result.certificate, stats=stats, metadata=meta)
    design, ev = result.design, result.evaluation
    if problem.coupled and ev.room_dba is None:
        ev = problem.evaluate(design, with_acoustics=True, limits=np.full(problem.R, np.inf),
                              vfc_pins=(extra_meta or {}).get("_vfc_pins"))
    meta.pop("_vfc_pins", None)
    sol = Solution(result.status, result.objective, result.gap, result.lower_bound, mode, noise_limit,
                   invest=dict(ev.invest), energy=ev.energy, purchases=purchases(problem, design, ev),
                   operations=operations(problem, ev), stats=stats, metadata=meta,
                   design=design, evaluation=ev)
    if ev.room_dba is not None:
        sol.room_levels_dba = {room: {s: float(ev.room_dba[r, si]) for si, s in enumerate(problem.scen)}
                               for r, room in enumerate(problem.rooms)}
    return sol


def purchases(problem: CompiledProblem, design: Design, ev: Evaluation) -> dict:
    out = {"fan_stations": {}, "vfcs": {}, "silencers": {}}
    for st in problem.stations:
        cfg = st.configs[design.configs[st.index]]
        out["fan_stations"][st.edge] = [
            {"line": t.line.id, "diameter_m": t.diameter_m} for t, c in zip(st.types, cfg) for _ in range(c)]
    for v in problem.vfcs:
        out["vfcs"][v.edge] = bool(ev.vfc_bought[v.index])
    for k, sl in enumerate(problem.sils):
        c = design.silencers[k]
        out["silencers"][sl.edge] = None if c is None else {
            "splitters": sl.options[c[0]].n, "length_m": float(sl.lengths[c[1]])}
    return out


def operations(problem: CompiledProblem, ev: Evaluation) -> dict:
    out = {}
    for si, s in enumerate(problem.scen):
        stations = {}
        for st in problem.stations:
            d = ev.dispatch[st.index][si]
            stations[st.edge] = {
                "pressure_pa": float(ev.P[st.index, si]), "power_w": float(d.power) if d else 0.0,
                "fans": [{"line": st.types[f.type_index].line.id, "diameter_m": st.types[f.type_index].diameter_m,
                          "copy": f.copy, "flow_m3s": f.flow_m3s, "speed": f.speed,
                          "pressure_pa": f.pressure_pa, "power_w": f.power_w} for f in (d.fans if d else [])]}
        vfcs = {v.edge: {"active": bool(ev.vfc_active[v.index, si]),
                         "pressure_drop_pa": float(ev.vfc_dp[v.index, si])} for v in problem.vfcs}
        sils = {sl.edge: {"pressure_loss_pa": float(ev.sil_dp[k, si])} for k, sl in enumerate(problem.sils)}
        out[s] = {"stations": stations, "vfcs": vfcs, "silencers": sils}
    return out


def design_from_purchases(problem: CompiledProblem, purchases: dict) -> Design:
    """Rebuild the internal design from a solution's purchase record."""
    cfgs = []
    for st in problem.stations:
        fans = (purchases.get("fan_stations") or {}).get(st.edge)
        if fans is None:
            raise SolutionError(f"solution has no entry for fan station {st.edge}")
        counts = [0] * len(st.types)
        for f in fans:
            idx = [t.index for t in st.types
                   if t.line.id == f["line"] and abs(t.diameter_m - f["diameter_m"]) < 1e-12]
            if not idx:
                raise SolutionError(f"unknown fan {f['line']}/{f['diameter_m']} at {st.edge}")
            counts[idx[0]] += 1
        if tuple(counts) not in st.configs:
            raise SolutionError(f"fan set at {st.edge} is not admissible")
        cfgs.append(st.configs.index(tuple(counts)))
    sils = []
    for k, sl in enumerate(problem.sils):
        c = (purchases.get("silencers") or {}).get(sl.edge)
        if c is None:
            sils.append(None)
            continue
        opt = [j for j, o in enumerate(sl.options) if o.n == c["splitters"]]
        if not opt:
            raise SolutionError(f"silencer {sl.edge}: {c['splitters']} splitters not offered")
        li = int(np.argmin(np.abs(sl.lengths - c["length_m"])))
        if abs(sl.lengths[li] - c["length_m"]) > 1e-9:
            raise SolutionError(f"silencer {sl.edge}: length {c['length_m']} is off the length grid")
        sils.append((opt[0], li))
    return Design(tuple(cfgs), tuple(sils))
