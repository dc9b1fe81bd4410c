"""Algebraic form of the design problem.

Every variable gets finite bounds and a family; every constraint carries an
equation tag. Sound power variables use an offset of +300 dB so the -300 dB
floor maps to 0 and all power levels are nonnegative. Room sound pressure
levels stay in plain dB(A).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import economics as eco
from ..acoustics import A_WEIGHTS, FLOOR, N_BANDS, fit_tangents
from ..components import Catalog, CatalogError, fan_power, fan_pressure, silencer_geometry, silencer_pressure_loss
from ..network import NetworkGraph
from ..problem import CompiledProblem, Options
from .expr import Const, Expr, Var, add, as_expr, div, evaluate, lin, log10, mul, power, sub

OFFSET = -FLOOR   # model level = true level + OFFSET
ROOM_LO = -600.0


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class VarDecl:
    name: str
    domain: str      # B | I | C
    lb: float
    ub: float
    family: str


@dataclass(frozen=True)
class Constraint:
    tag: str
    name: str
    sense: str       # <= | >= | ==
    lhs: Expr
    rhs: Expr


# family -> (symbol, component, index description)
FAMILIES = {
    "p": ("p", "node", "node, scenario"),
    "pin": ("p^in", "component", "edge, scenario"),
    "pout": ("p^out", "component", "edge, scenario"),
    "y_fs": ("y", "fan station", "edge"),
    "x_fs": ("x", "fan station", "edge, scenario"),
    "q_fs": ("Q", "fan station", "edge, scenario"),
    "po_fs": ("po", "fan station", "edge, scenario"),
    "c_fs": ("c", "fan station", "edge"),
    "y_fan": ("y", "fan", "edge, type, copy"),
    "x_fan": ("x", "fan", "edge, type, copy, scenario"),
    "q_fan": ("q", "fan", "edge, type, copy, scenario"),
    "qi_fan": ("q^fan", "fan", "edge, type, copy, scenario"),
    "n_fan": ("n", "fan", "edge, type, copy, scenario"),
    "dp_fan": ("dp", "fan", "edge, type, copy, scenario"),
    "pom_fan": ("po^model", "fan", "edge, type, copy, scenario"),
    "po_fan": ("po", "fan", "edge, type, copy, scenario"),
    "c_fan": ("c", "fan", "edge, type, copy"),
    "y_vfc": ("y", "vfc", "edge"),
    "x_vfc": ("x", "vfc", "edge, scenario"),
    "dp_vfc": ("dp", "vfc", "edge, scenario"),
    "c_vfc": ("c", "vfc", "edge"),
    "y_sil": ("y", "silencer", "edge"),
    "n_sil": ("n", "silencer", "edge"),
    "l_sil": ("l", "silencer", "edge"),
    "s_sil": ("s", "silencer", "edge"),
    "v_sil": ("v", "silencer", "edge, scenario"),
    "dp_sil": ("dp", "silencer", "edge, scenario"),
    "cg_sil": ("c^geom", "silencer", "edge"),
    "c_sil": ("c", "silencer", "edge"),
    # acoustics
    "lw": ("l^W,out", "component", "edge, scenario, band"),
    "lmax": ("l^W,max", "component", "edge, scenario, band"),
    "dl": ("dl^W", "component", "edge, scenario, band"),
    "linc": ("l^W,inc", "component", "edge, scenario, band"),
    "z": ("z", "component", "edge, scenario, band"),
    "d_sil": ("d^W", "silencer", "edge, band"),
    "lflow_sil": ("l^W,flow", "silencer", "edge, scenario, band"),
    "lflow_vfc": ("l^W,flow", "vfc", "edge, scenario, band"),
    "lflow_fan": ("l^W,flow", "fan", "edge, type, copy, scenario, band"),
    "lwin_fan": ("l^W,in", "fan", "edge, type, copy, scenario, band"),
    "lwout_fan": ("l^W,out", "fan", "edge, type, copy, scenario, band"),
    "fmax": ("l^W,max", "fan", "edge, type, copy, scenario, band"),
    "fdl": ("dl^W", "fan", "edge, type, copy, scenario, band"),
    "finc": ("l^W,inc", "fan", "edge, type, copy, scenario, band"),
    "fz": ("z", "fan", "edge, type, copy, scenario, band"),
    "lp": ("l^p,A_f", "room", "room, scenario, term"),
    "racc": ("l^p,A", "room", "room, scenario, term"),
    "rmax": ("l^W,max", "room", "room, scenario, term"),
    "rdl": ("dl^W", "room", "room, scenario, term"),
    "rinc": ("l^W,inc", "room", "room, scenario, term"),
    "rz": ("z", "room", "room, scenario, term"),
}
ACOUSTIC_FAMILIES = frozenset(["lw", "lmax", "dl", "linc", "z", "d_sil", "lflow_sil", "lflow_vfc", "lflow_fan",
                               "lwin_fan", "lwout_fan", "fmax", "fdl", "finc", "fz", "lp", "racc", "rmax",
                               "rdl", "rinc", "rz"])


def vname(family: str, *idx) -> str:
    return f"{family}[{','.join(str(i) for i in idx)}]"


# ---------------------------------------------------------------- big-M

@dataclass
class BigM:
    dp_bar: dict          # edge -> Pa
    level_bar: float      # dB, upper bound on true sound power levels
    p_bound: float        # |node pressure| bound
    fan_capability: float
    silencer_dp: dict     # silencer edge -> Pa at maximum length


def _silencer_dp_bar(graph: NetworkGraph, eid: str, spec) -> float:
    best = 0.0
    for n in range(spec.splitters[0], spec.splitters[1] + 1):
        for s in graph.scenario_ids:
            geo = silencer_geometry(spec, n, graph.flow(eid, s))
            best = max(best, silencer_pressure_loss(geo["v"], geo["s"], spec.length_m[1], spec))
    return best


def compute_bigM(network: NetworkGraph, catalog: Catalog, level_bar: float = 150.0) -> BigM:
    """Per-edge pressure bounds: worst fixed path loss below the edge plus the
    strongest fan plus the silencer losses on that path."""
    g = network
    cap = 0.0
    sil = {}
    for eid, e in g.edges.items():
        if e.slot == "fan_station":
            spec = catalog.stations.get(e.component)
            if spec is None:
                raise CatalogError(f"edge {eid}: unknown fan station {e.component!r}")
            for c in spec.candidates:
                cap = max(cap, catalog.fan_lines[c.line].size(c.diameter_m).pressure_pa[1])
        elif e.slot == "silencer":
            spec = catalog.silencers.get(e.component)
            if spec is None:
                raise CatalogError(f"edge {eid}: unknown silencer {e.component!r}")
            sil[eid] = _silencer_dp_bar(g, eid, spec)
    src = g.nodes[g.source]
    paths = {r: g.path_to_room(r) for r in g.rooms}
    dp_bar = {}
    for eid in g.edge_order():
        worst_fixed, worst_sil = 0.0, 0.0
        for r in g.rooms_below(eid):
            path = paths[r]
            for s in g.scenario_ids:
                f = g.nodes[r].pressure_pa[s] - src.pressure_pa[s] + sum(g.loss(e, s) for e in path)
                worst_fixed = max(worst_fixed, f)
            worst_sil = max(worst_sil, sum(sil.get(e, 0.0) for e in path))
        dp_bar[eid] = worst_fixed + cap + worst_sil
    p_abs = max(abs(n.pressure_pa[s]) for n in g.nodes.values() if n.pressure_pa for s in n.pressure_pa) \
        if any(n.pressure_pa for n in g.nodes.values()) else 0.0
    losses = sum(max(abs(g.loss(e, s)) for s in g.scenario_ids) for e in g.edges)
    p_bound = p_abs + losses + cap + sum(sil.values()) + 1.0
    return BigM(dp_bar, float(level_bar), p_bound, cap, sil)


# ---------------------------------------------------------------- model

class DesignModel:
    """Variables, tagged constraints and objective of one design problem.

    The algebra is generated on first access; the compiled problem that the
    search works on is available right away as ``problem``.
    """

    def __init__(self, problem: CompiledProblem, bigm: BigM, name: str = "ventopt"):
        self.problem = problem
        self.bigM = bigm
        self.name = name
        self.mode = problem.options.mode
        self.tangents = fit_tangents(problem.options.tangent_d_max, problem.options.tangent_count)
        self._lock = threading.Lock()
        self._algebra = None

    def _get(self):
        with self._lock:
            if self._algebra is None:
                self._algebra = _Builder(self).run()
            return self._algebra

    @property
    def variables(self) -> dict:
        return self._get().variables

    @property
    def constraints(self) -> list:
        return self._get().constraints

    @property
    def objective(self) -> Expr:
        return self._get().objective

    @property
    def rules(self) -> list:
        return self._get().rules

    @property
    def families(self) -> dict:
        out = {}
        for v in self.variables.values():
            sym, comp, idx = FAMILIES[v.family]
            f = out.setdefault(v.family, {"symbol": sym, "component": comp, "index": idx,
                                          "domain": v.domain, "count": 0})
            f["count"] += 1
        return out

    def counts(self) -> dict:
        by_tag = {}
        for c in self.constraints:
            by_tag[c.tag] = by_tag.get(c.tag, 0) + 1
        fams = self.families
        return {
            "variables": len(self.variables),
            "constraints": len(self.constraints),
            "acoustic_variables": sum(f["count"] for k, f in fams.items() if k in ACOUSTIC_FAMILIES),
            "by_family": {k: f["count"] for k, f in sorted(fams.items())},
            "by_tag": dict(sorted(by_tag.items())),
        }

    def tags(self) -> set:
        return {c.tag for c in self.constraints}


@dataclass
class _Algebra:
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: Expr = None
    rules: list = field(default_factory=list)   # (var name, fn(values, ctx))


def build_model(network: NetworkGraph, catalogs: Catalog, econ: eco.EconomicParams, noise_limits=None,
                options: Optional[Options] = None, level_bar: Optional[float] = None) -> DesignModel:
    """Compile the network and catalog into a design model.

    ``noise_limits``: ``None`` keeps each room's limit, a number applies to
    every room, a dict overrides single rooms.
    """
    opts = options or Options()
    if isinstance(noise_limits, (int, float)):
        opts = Options(**{**opts.__dict__, "noise_limit": float(noise_limits)})
    if level_bar is not None:
        opts = Options(**{**opts.__dict__, "level_bar_db": float(level_bar)})
    problem = CompiledProblem(network, catalogs, econ, opts)
    if isinstance(noise_limits, dict):
        for room, lim in noise_limits.items():
            if room not in problem.rooms:
                raise BuildError(f"noise limit given for unknown room {room}")
            problem.limits[problem.rooms.index(room)] = float(lim)
    bigm = compute_bigM(network, catalogs, opts.level_bar_db)
    return DesignModel(problem, bigm, name=network.name)


def _grid_extremes(fn, t, pts=81):
    qq, nn = np.meshgrid(np.linspace(t.q_lo, t.q_hi, pts), np.linspace(t.n_lo, 1.0, pts))
    v = fn(qq, nn, t.diameter_m, t.line)
    return float(np.min(v)), float(np.max(v))


class _Builder:
    def __init__(self, model: DesignModel):
        self.m = model
        self.p = model.problem
        self.alg = _Algebra()
        self.coupled = self.p.coupled
        self.lbar = model.bigM.level_bar
        self.tan = model.tangents
        self.inc_ub = max(10.0 * math.log10(2.0), max(self.tan.intercepts)) + 1e-9

    # ---- primitives
    def var(self, family, idx, domain, lb, ub, rule: Callable):
        name = vname(family, *idx)
        if name in self.alg.variables:
            raise BuildError(f"duplicate variable {name}")
        lb, ub = float(lb), float(ub)
        if not (math.isfinite(lb) and math.isfinite(ub)) or lb > ub:
            raise BuildError(f"variable {name} needs finite bounds lb <= ub, got [{lb}, {ub}]")
        self.alg.variables[name] = VarDecl(name, domain, lb, ub, family)
        self.alg.rules.append((name, rule))
        return name

    def defined(self, family, idx, lb, ub, rhs: Expr, tag: str, cname: str):
        """Continuous variable fixed by an equality ``var == rhs``."""
        name = self.var(family, idx, "C", lb, ub, lambda vals, ctx, e=rhs: evaluate(e, vals))
        self.con(tag, cname, "==", Var(name), rhs)
        return name

    def con(self, tag, cname, sense, lhs, rhs):
        self.alg.constraints.append(Constraint(tag, cname, sense, as_expr(lhs), as_expr(rhs)))

    def two_sided(self, tag, cname, expr, bound_expr):
        """-bound <= expr <= bound."""
        self.con(tag, cname + ".ub", "<=", expr, bound_expr)
        self.con(tag, cname + ".lb", ">=", expr, mul(-1.0, bound_expr))

    # ---- run
    def run(self) -> _Algebra:
        p = self.p
        self.S = p.scen
        self._pressure_vars()
        obj_inv = {"fan_station": [], "vfc": [], "silencer": []}
        for st in p.stations:
            obj_inv["fan_station"].append(self._station(st))
        for v in p.vfcs:
            obj_inv["vfc"].append(self._vfc(v))
        for sl in p.sils:
            obj_inv["silencer"].append(self._silencer(sl))
        self._pressure_links()
        if len(p.stations) == 1:
            self._phyd(p.stations[0])
        if self.coupled:
            self._acoustics()
        terms = []
        for cls, names in obj_inv.items():
            terms += [(p.w_inv[cls], n) for n in names]
        for st in p.stations:
            for si, s in enumerate(self.S):
                terms.append((p.w_energy * float(p.w[si]), vname("po_fs", st.edge, s)))
        self.alg.objective = lin(terms)
        return self.alg

    # ---- system pressures
    def _pressure_vars(self):
        p, g = self.p, self.p.graph
        B = self.m.bigM.p_bound
        self.comp_edges = [e for e in p.edge_ids if p.slot_of_edge.get(e)]
        for nid in g.nodes:
            for si, s in enumerate(self.S):
                self.var("p", (nid, s), "C", -B, B, lambda vals, ctx, n=nid, si=si: ctx.node_p[n][si])
        for eid in self.comp_edges:
            e = g.edges[eid]
            for si, s in enumerate(self.S):
                self.var("pin", (eid, s), "C", -B, B, lambda vals, ctx, n=e.frm, si=si: ctx.node_p[n][si])
                self.var("pout", (eid, s), "C", -B, B,
                         lambda vals, ctx, n=e.to, si=si, eid=eid, s=s: ctx.node_p[n][si] + g.loss(eid, s))

    def _pressure_links(self):
        p, g = self.p, self.p.graph
        src = g.source
        for si, s in enumerate(self.S):
            self.con("eq:energy_conservation1", vname("energy_conservation1", src, s), "==",
                     Var(vname("p", src, s)), Const(float(g.nodes[src].pressure_pa[s])))
            for r in p.rooms:
                self.con("eq:energy_conservation2", vname("energy_conservation2", r, s), "==",
                         Var(vname("p", r, s)), Const(float(g.nodes[r].pressure_pa[s])))
        for eid in p.edge_ids:
            e = g.edges[eid]
            for s in self.S:
                loss = float(g.loss(eid, s))
                if eid in self.comp_edges:
                    self.con("eq:energy_conservation3", vname("energy_conservation3", eid, s), "==",
                             Var(vname("p", e.frm, s)), Var(vname("pin", eid, s)))
                    self.con("eq:energy_conservation4", vname("energy_conservation4", eid, s), "==",
                             Var(vname("p", e.to, s)), lin([(1, vname("pout", eid, s))], -loss))
                else:
                    self.con("eq:duct_loss", vname("duct_loss", eid, s), "==",
                             Var(vname("p", e.to, s)), lin([(1, vname("p", e.frm, s))], -loss))

    def _dp(self, eid, s) -> Expr:
        return lin([(1, vname("pout", eid, s)), (-1, vname("pin", eid, s))])

    # ---- fan station
    def _station(self, st) -> str:
        e = st.edge
        dpb = self.m.bigM.dp_bar[e]
        y_fs = self.var("y_fs", (e,), "B", 0, 1, lambda vals, ctx: 1.0)
        fans = []
        for t in st.types:
            pinned = None if st.pinned is None else st.configs[st.pinned][t.index]
            dlo, dhi = _grid_extremes(fan_pressure, t)
            plo, phi = _grid_extremes(fan_power, t)
            F = 1.01 * max(abs(dlo), abs(dhi)) + 1.0
            G = 1.01 * max(abs(plo), abs(phi)) + 1.0
            D = t.diameter_m
            a, b = t.line.alpha, t.line.beta
            for c in range(t.copies):
                f = (e, t.index, c)
                lb = ub = None
                if pinned is not None:
                    lb = ub = 1.0 if c < pinned else 0.0
                y = self.var("y_fan", f, "B", 0 if lb is None else lb, 1 if ub is None else ub,
                             lambda vals, ctx, st=st, t=t, c=c: float(c < ctx.counts(st)[t.index]))
                cost = self.defined("c_fan", f, min(0.0, t.cost), max(0.0, t.cost), mul(t.cost, y),
                                    "eq:fan_c", vname("fan_c", *f))
                self.con("eq:fan_purchasement2", vname("fan_purchasement2", *f), "<=", Var(y), Var(y_fs))
                fans.append((t, c, y, cost))
                for si, s in enumerate(self.S):
                    fs = f + (s,)
                    op = lambda ctx, st=st, t=t, c=c, si=si: ctx.fan_op(st, t.index, c, si)
                    x = self.var("x_fan", fs, "B", 0, 1, lambda vals, ctx, op=op: float(op(ctx) is not None))
                    q = self.var("q_fan", fs, "C", t.q_lo, t.q_hi,
                                 lambda vals, ctx, op=op, t=t: op(ctx).flow_m3s if op(ctx) else t.q_lo)
                    n = self.var("n_fan", fs, "C", t.n_lo, 1.0,
                                 lambda vals, ctx, op=op: op(ctx).speed if op(ctx) else 1.0)
                    qi = self.var("qi_fan", fs, "C", 0.0, t.q_hi,
                                  lambda vals, ctx, op=op: op(ctx).flow_m3s if op(ctx) else 0.0)
                    dp_rhs = add(mul(a[0] * D ** -4, power(q, 2)), mul(a[1] * D ** -1, q, n),
                                 mul(a[2] * D ** 2, power(n, 2)))
                    dpf = self.defined("dp_fan", fs, -F, F, dp_rhs, "eq:fan_dp", vname("fan_dp", *fs))
                    po_rhs = add(mul(b[0] * D ** -4, power(q, 3)), mul(b[1] * D ** -1, power(q, 2), n),
                                 mul(b[2] * D ** 2, q, power(n, 2)), mul(b[3] * D ** 5, power(n, 3)),
                                 Const(float(b[4])))
                    pom = self.defined("pom_fan", fs, -G, G, po_rhs, "eq:po_model1", vname("po_model1", *fs))
                    po = self.var("po_fan", fs, "C", min(0.0, t.po_lo), t.po_hi,
                                  lambda vals, ctx, x=x, pom=pom: vals[pom] if vals[x] > 0.5 else 0.0)
                    self.two_sided("eq:po_model2", vname("po_model2", *fs), sub(po, pom),
                                   lin([(-(t.po_hi + G), x)], t.po_hi + G))
                    self.con("eq:po_model3", vname("po_model3", *fs), "<=", Var(po), lin([(t.po_hi, x)]))
                    self.con("eq:fan_purchasement", vname("fan_purchasement", *fs), "<=", Var(x), Var(y))
                    self.two_sided("eq:continuity2", vname("continuity2", *fs), sub(qi, q),
                                   lin([(-t.q_hi, x)], t.q_hi))
                    self.con("eq:continuity3", vname("continuity3", *fs), "<=", Var(qi), lin([(t.q_hi, x)]))
                    M = dpb + F
                    self.two_sided("eq:pressure_fan_to_fan_station1", vname("pressure_fan_to_fan_station1", *fs),
                                   sub(self._dp(e, s), dpf), lin([(-M, x)], M))
        n_max = st.spec.n_max
        self.con("eq:limit_N_max", vname("limit_N_max", e), "<=", lin([(1, f[2]) for f in fans]), Const(float(n_max)))
        cmin = sum(self.alg.variables[f[3]].lb for f in fans)
        cmax = sum(self.alg.variables[f[3]].ub for f in fans)
        c_fs = self.defined("c_fs", (e,), cmin, cmax, lin([(1, f[3]) for f in fans]), "eq:fs_sum",
                            vname("fs_sum_c", e))
        polo = sum(min(0.0, t.po_lo) for t, *_ in fans)
        pohi = sum(t.po_hi for t, *_ in fans)
        for si, s in enumerate(self.S):
            Q = float(st.Q[si])
            x_fs = self.var("x_fs", (e, s), "B", 0, 1, lambda vals, ctx, Q=Q: float(Q > 0))
            self.con("eq:activity_and_purchasement", vname("activity_and_purchasement", e, s), "<=",
                     Var(x_fs), Var(y_fs))
            qfs = self.var("q_fs", (e, s), "C", 0.0, max(float(st.Q.max()), 0.0), lambda vals, ctx, Q=Q: Q)
            self.con("eq:sumq", vname("sumq", e, s), "==", Var(qfs), Const(Q))
            self.con("eq:continuity1", vname("continuity1", e, s), "==",
                     lin([(1, vname("qi_fan", e, t.index, c, s)) for t, c, *_ in fans]), Var(qfs))
            self.two_sided("eq:pressure_fan_to_fan_station2", vname("pressure_fan_to_fan_station2", e, s),
                           self._dp(e, s), lin([(dpb, x_fs)]))
            self.defined("po_fs", (e, s), polo, pohi,
                         lin([(1, vname("po_fan", e, t.index, c, s)) for t, c, *_ in fans]), "eq:fs_sum",
                         vname("fs_sum_po", e, s))
        self.fans = getattr(self, "fans", {})
        self.fans[e] = fans
        return c_fs

    def _phyd(self, st):
        bound = self.p.hydraulic_bound()
        for si, s in enumerate(self.S):
            self.con("eq:phyd", vname("phyd", s), "<=", Const(float(bound[si])),
                     lin([(1, vname("po_fan", st.edge, t.index, c, s)) for t, c, *_ in self.fans[st.edge]]))

    # ---- VFC
    def _vfc(self, v) -> str:
        e = v.edge
        lo, hi = v.spec.pressure_pa
        lb = 1.0 if v.spec.must_purchase else 0.0
        ub = 1.0
        if v.pinned is not None:
            lb = ub = float(v.pinned)
            if v.spec.must_purchase and not v.pinned:
                raise BuildError(f"VFC {e} must be purchased but is fixed to not purchased")
        y = self.var("y_vfc", (e,), "B", lb, ub, lambda vals, ctx, k=v.index: float(ctx.ev.vfc_bought[k]))
        c = self.defined("c_vfc", (e,), min(0.0, v.cost), max(0.0, v.cost), mul(v.cost, y), "eq:vfc_cost",
                         vname("vfc_cost", e))
        for si, s in enumerate(self.S):
            x = self.var("x_vfc", (e, s), "B", 0, 1,
                         lambda vals, ctx, k=v.index, si=si: float(ctx.ev.vfc_active[k, si]))
            dp = self.var("dp_vfc", (e, s), "C", 0.0, hi,
                          lambda vals, ctx, k=v.index, si=si: float(ctx.ev.vfc_dp[k, si]))
            self.con("eq:activity_and_purchasement", vname("activity_and_purchasement", e, s), "<=", Var(x), Var(y))
            self.con("eq:vfc_pressure", vname("vfc_pressure", e, s), ">=", Var(dp), lin([(lo, x)]))
            self.con("eq:VFC_pressure2", vname("VFC_pressure2", e, s), "<=", Var(dp), lin([(hi, x)]))
            self.con("eq:VFC_pressure3", vname("VFC_pressure3", e, s), "==", self._dp(e, s), lin([(-1, dp)]))
        return c

    # ---- silencer
    def _silencer(self, sl) -> str:
        e = sl.edge
        spec = sl.spec
        H, B, T = spec.height_m, spec.width_m, spec.splitter_m
        n_lo, n_hi = spec.splitters
        l_lo, l_hi = spec.length_m
        dpb = self.m.bigM.dp_bar[e]
        y = self.var("y_sil", (e,), "B", 0, 1, lambda vals, ctx, k=sl.index: float(ctx.sil(k) is not None))
        n = self.var("n_sil", (e,), "I", n_lo, n_hi,
                     lambda vals, ctx, k=sl.index, n_lo=n_lo: float(ctx.sil(k)[0]) if ctx.sil(k) else float(n_lo))
        l = self.var("l_sil", (e,), "C", l_lo, l_hi,
                     lambda vals, ctx, k=sl.index, l_lo=l_lo: ctx.sil(k)[1] if ctx.sil(k) else float(l_lo))
        s_lo, s_hi = spec.gap_bounds
        s = self.defined("s_sil", (e,), s_lo, s_hi, sub(div(B, n), Const(T)), "eq:sil_gap", vname("sil_gap", e))
        ns = np.arange(n_lo, n_hi + 1)
        g = spec.gamma
        corners = [g[0] * nn + g[1] * ll * B + g[2] * H * B + g[3] for nn in (n_lo, n_hi) for ll in (l_lo, l_hi)]
        cg = self.defined("cg_sil", (e,), min(corners), max(corners),
                          add(mul(float(g[0]), n), mul(float(g[1]) * B, l), Const(float(g[2] * H * B + g[3]))),
                          "eq:sil_costs", vname("sil_costs", e))
        cbar = max(abs(x) for x in corners)
        c = self.var("c_sil", (e,), "C", min(0.0, min(corners)), max(0.0, max(corners)),
                     lambda vals, ctx, y=y, cg=cg: vals[cg] if vals[y] > 0.5 else 0.0)
        self.two_sided("eq:sil_cost1", vname("sil_cost1", e), sub(c, cg), lin([(-cbar, y)], cbar))
        self.con("eq:sil_cost2", vname("sil_cost2", e), "<=", Var(c), lin([(cbar, y)]))
        a = spec.alpha
        for si, sc in enumerate(self.S):
            Q = float(sl.Q[si])
            vs = Q / ((B - T * ns) * H)
            v = self.defined("v_sil", (e, sc), float(vs.min()), float(vs.max()),
                             div(Q / H, sub(B, mul(T, n))), "eq:sil_velocity", vname("sil_velocity", e, sc))
            dp_hi = max(float(o.dp0[si] + o.dp1[si] * l_hi) for o in sl.options)
            dp_rhs = add(mul(float(a[0]), power(v, 2)), mul(float(a[1]), div(power(v, 2), s)),
                         mul(float(a[2]), div(mul(power(v, 2), l), s)))
            dp = self.defined("dp_sil", (e, sc), 0.0, dp_hi, dp_rhs, "eq:sil_dp", vname("sil_dp", e, sc))
            drop = lin([(1, vname("pin", e, sc)), (-1, vname("pout", e, sc))])
            self.two_sided("eq:sil_p_loss1", vname("sil_p_loss1", e, sc), drop, lin([(dpb, y)]))
            self.two_sided("eq:sil_p_loss2", vname("sil_p_loss2", e, sc), sub(drop, dp), lin([(-dpb, y)], dpb))
        return c

    # ---- acoustics
    def _gadget(self, fam, idx, a: Expr, b: Expr, M: float, lo: float, hi: float, tag_prefix: str,
                tag_add: str, gate: Optional[str], l_in: Optional[Expr], out_family: str, out_idx,
                out_rule=None):
        """Linearized level addition max(a, b) + increase, optionally gated.

        ``fam`` maps the part names max/dl/inc/z to families. Returns the
        output variable name.
        """
        mx = self.var(fam["max"], idx, "C", lo, hi,
                      lambda vals, ctx, a=a, b=b: max(evaluate(a, vals), evaluate(b, vals)))
        z = self.var(fam["z"], idx, "B", 0, 1,
                     lambda vals, ctx, a=a, b=b: 0.0 if evaluate(a, vals) >= evaluate(b, vals) else 1.0)
        self.con(tag_prefix + "max", vname(out_family + "_max_a", *idx), ">=", Var(mx), a)
        self.con(tag_prefix + "max", vname(out_family + "_max_b", *idx), ">=", Var(mx), b)
        self.con(tag_prefix + "max", vname(out_family + "_max_za", *idx), "<=", sub(mx, a), lin([(M, z)]))
        self.con(tag_prefix + "max", vname(out_family + "_max_zb", *idx), "<=", sub(mx, b), lin([(-M, z)], M))
        dl = self.defined(fam["dl"], idx, 0.0, M, sub(sub(mul(2.0, mx), a), b), tag_prefix + "delta",
                          vname(out_family + "_delta", *idx))
        inc = self.var(fam["inc"], idx, "C", 0.0, self.inc_ub,
                       lambda vals, ctx, dl=dl: max(0.0, max(m * vals[dl] + c for m, c in
                                                             zip(self.tan.slopes, self.tan.intercepts))))
        for k, (m, c) in enumerate(zip(self.tan.slopes, self.tan.intercepts)):
            self.con(tag_prefix + "tangent", vname(f"{out_family}_tangent{k + 1}", *idx), ">=", Var(inc),
                     lin([(float(m), dl)], float(c)))
        added = lin([(1, mx), (1, inc)])
        if gate is None:
            out = self.defined(out_family, out_idx, lo, hi, added, tag_add, vname(out_family + "_add", *out_idx))
            return out
        rule = out_rule or (lambda vals, ctx, g=gate, ad=added, li=l_in:
                            evaluate(ad, vals) if vals[g] > 0.5 else evaluate(li, vals))
        out = self.var(out_family, out_idx, "C", lo, hi, rule)
        self.two_sided("eq:level_add_gate", vname(out_family + "_gate_on", *out_idx), sub(out, added), lin([(-M, gate)], M))
        self.two_sided("eq:level_add_gate", vname(out_family + "_gate_off", *out_idx), sub(out, l_in), lin([(M, gate)]))
        return out

    def _acoustics(self):
        p = self.p
        top = self.lbar + OFFSET
        edge_fam = {"max": "lmax", "dl": "dl", "inc": "linc", "z": "z"}
        fan_fam = {"max": "fmax", "dl": "fdl", "inc": "finc", "z": "fz"}
        out = {}
        dmax = 0.0
        for k, sl in enumerate(p.sils):
            dmax = max(dmax, max(float(np.max(np.abs(o.d0) + np.abs(o.d1) * sl.spec.length_m[1]))
                                 for o in sl.options))
        dmax = max(dmax, float(np.max(np.abs(p.fixed_D))) if p.E else 0.0)
        M = top + dmax
        self.level_M = M
        for i, eid in enumerate(p.edge_ids):
            par = p.parent[i]
            kind = p.slot_of_edge.get(eid)
            slot = p.graph.edges[eid].slot
            for si, s in enumerate(self.S):
                for b in range(N_BANDS):
                    l_in = Const(0.0) if par < 0 else out[(p.edge_ids[par], s, b)]
                    idx = (eid, s, b)
                    if slot == "none":
                        out[idx] = l_in
                    elif slot == "fixed_chain":
                        a = sub(l_in, Const(float(p.fixed_D[i, si, b])))
                        bb = Const(float(p.fixed_N[i, si, b]) + OFFSET)
                        out[idx] = Var(self._gadget(edge_fam, idx, a, bb, M, 0.0, top, "eq:level_add_",
                                                    "eq:lvl_add_too_simple", None, None, "lw", idx))
                    elif kind[0] == "vfc":
                        v = p.vfcs[kind[1]]
                        lf = self._vfc_flow(v, si, s, b)
                        out[idx] = Var(self._gadget(edge_fam, idx, l_in, Var(lf), M, 0.0, top, "eq:level_add_",
                                                    None, vname("x_vfc", eid, s), l_in, "lw", idx))
                    elif kind[0] == "silencer":
                        sl = p.sils[kind[1]]
                        d = self._sil_damp(sl, b) if si == 0 else vname("d_sil", eid, b)
                        lf = self._sil_flow(sl, si, s, b)
                        out[idx] = Var(self._gadget(edge_fam, idx, sub(l_in, Var(d)), Var(lf), M, 0.0, top,
                                                    "eq:level_add_", None, vname("y_sil", eid), l_in, "lw", idx))
                    else:
                        st = p.stations[kind[1]]
                        out[idx] = Var(self._station_acoustics(st, si, s, b, l_in, M, top, fan_fam))
        self._rooms(out)

    def _vfc_flow(self, v, si, s, b):
        hb = v.spec.area
        ep = v.spec.eps[b]
        Q = float(v.Q[si])
        c0 = float(ep[1] * Q ** 2 / hb ** 2 + ep[2] * Q / hb + ep[3] * hb + ep[4] * math.sqrt(hb) + ep[5]) + OFFSET
        ends = [c0, c0 + float(ep[0]) * v.spec.pressure_pa[1]]
        return self.defined("lflow_vfc", (v.edge, s, b), min(ends), max(ends),
                            lin([(float(ep[0]), vname("dp_vfc", v.edge, s))], c0), "eq:vfc_flownoise",
                            vname("vfc_flownoise", v.edge, s, b))

    def _sil_damp(self, sl, b):
        spec = sl.spec
        dl = spec.delta[b]
        B = spec.width_m
        n, l = vname("n_sil", sl.edge), vname("l_sil", sl.edge)
        rhs = add(mul(float(dl[0]), power(n, 2)), mul(float(dl[1] * B ** 2), n), mul(float(dl[2]), l, n),
                  mul(float(dl[3] * B), l), mul(float(dl[4]), n), mul(float(dl[5]), l),
                  Const(float(dl[6] * B + dl[7])))
        vals = [float(o.d0[b] + o.d1[b] * ll) for o in sl.options for ll in spec.length_m]
        return self.defined("d_sil", (sl.edge, b), min(vals), max(vals), rhs, "eq:sil_damp",
                            vname("sil_damp", sl.edge, b))

    def _sil_flow(self, sl, si, s, b):
        spec = sl.spec
        ep = spec.eps[b]
        hb = spec.height_m * spec.width_m
        v = vname("v_sil", sl.edge, s)
        c0 = float(ep[2] * hb + ep[3] * hb ** 2 + ep[4]) + OFFSET
        vals = [float(o.noise[si, b]) + OFFSET for o in sl.options]
        return self.defined("lflow_sil", (sl.edge, s, b), min(vals), max(vals),
                            add(mul(float(ep[0]), power(v, 2)), mul(float(ep[1]), v), Const(c0)),
                            "eq:sil_flow", vname("sil_flow", sl.edge, s, b))

    def _station_acoustics(self, st, si, s, b, l_in, M, top, fam):
        e = st.edge
        outs = []
        for t, c, *_ in self.fans[e]:
            f = (e, t.index, c, s, b)
            ep = t.line.eps[b]
            q, n, dp = (vname(k, e, t.index, c, s) for k in ("q_fan", "n_fan", "dp_fan"))
            lf = self.defined("lflow_fan", f, 0.0, top,
                              add(mul(10.0, log10(q)), mul(20.0, log10(dp)), mul(float(ep[0]), n),
                                  mul(float(ep[1]), power(n, 2)), Const(float(ep[2] * t.diameter_m + ep[3]) + OFFSET)),
                              "eq:fan_lws", vname("fan_lws", *f))
            lwi = self.defined("lwin_fan", f, 0.0, top, l_in, "eq:fan_spl1", vname("fan_spl1", *f))
            o = self._gadget(fam, f, Var(lwi), Var(lf), M, 0.0, top, "eq:level_add_", None,
                             vname("x_fan", e, t.index, c, s), Var(lwi), "lwout_fan", f)
            outs.append((o, f))
        idx = (e, s, b)
        x_fs = vname("x_fs", e, s)
        lw = self.var("lw", idx, "C", 0.0, top,
                      lambda vals, ctx, outs=outs, x=x_fs, li=l_in:
                      max(vals[o] for o, _ in outs) if vals[x] > 0.5 else evaluate(li, vals))
        for o, f in outs:
            self.con("eq:fan_spl2", vname("fan_spl2", *f), ">=", Var(lw), Var(o))
        self.two_sided("eq:fs_fan_spl_off", vname("fs_fan_spl_off", *idx), sub(lw, l_in), lin([(M, x_fs)]))
        return lw

    def _rooms(self, out):
        p = self.p
        lo, hi = ROOM_LO, self.lbar
        M = hi - lo
        fam = {"max": "rmax", "dl": "rdl", "inc": "rinc", "z": "rz"}
        for r, room in enumerate(p.rooms):
            ep = p.room_edge[r]
            for si, s in enumerate(self.S):
                terms = []
                for b in range(N_BANDS):
                    terms.append((out[(p.edge_ids[ep], s, b)], float(p.conv_air[r] + A_WEIGHTS[b])))
                    for epos, conv in p.rad[r]:
                        terms.append((out[(p.edge_ids[epos], s, b)], float(conv + A_WEIGHTS[b])))
                    if p.background[r] is not None:
                        terms.append((None, float(p.background[r][b] + A_WEIGHTS[b])))
                names = []
                for k, (lw, add_c) in enumerate(terms):
                    rhs = Const(add_c) if lw is None else add(lw, Const(add_c - OFFSET))
                    names.append(self.defined("lp", (room, s, k), lo, hi, rhs, "eq:spl_conversion",
                                              vname("spl_term", room, s, k)))
                acc = names[0]
                for k in range(1, len(names)):
                    idx = (room, s, k)
                    acc = self._gadget(fam, idx, Var(acc), Var(names[k]), M, lo, hi, "eq:seven_level_additions_",
                                       "eq:seven_level_additions", None, None, "racc", idx)
                if math.isfinite(p.limits[r]):
                    self.con("eq:spl_conversion", vname("spl_limit", room, s), "<=", Var(acc),
                             Const(float(p.limits[r])))
