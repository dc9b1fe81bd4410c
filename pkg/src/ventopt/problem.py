"""A network plus catalog compiled into arrays the search and the model
builder share, and the exact evaluator for complete designs."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import economics as eco
from .acoustics import (A_WEIGHTS, FLOOR, N_BANDS, conversion_airborne, conversion_radiation,
                        level_add, level_sum)
from .components import (Catalog, CatalogError, combine_fixed_chain, fan_cost,
                         silencer_cost, silencer_damping, silencer_flow_noise, silencer_geometry,
                         silencer_pressure_loss, vfc_cost, vfc_flow_noise)
from .dispatch import Dispatch, FanType, StationDispatcher
from .network import NetworkGraph, validate_network, NetworkError

NOISE_TOL = 1e-6


class CompileError(ValueError):
    pass


@dataclass
class Options:
    """Build and search settings shared by the model builder and the solver."""

    mode: str = "coupled"              # coupled | airflow_only
    noise_limit: Optional[float] = None  # uniform limit; None keeps per-room limits
    fan_noise_rule: str = "max"        # max | sum
    length_step_m: float = 0.01
    level_bar_db: float = 150.0
    eta_bar: float = 1.0
    tangent_count: int = 3
    tangent_d_max: float = 25.0
    sequential_fixings: Optional[dict] = None  # {"stations": {edge: [[line, D], ...]}, "vfcs": {edge: bool}}

    def __post_init__(self):
        if self.mode not in ("coupled", "airflow_only"):
            raise CompileError(f"unknown mode {self.mode!r}")
        if self.fan_noise_rule not in ("max", "sum"):
            raise CompileError(f"unknown fan noise rule {self.fan_noise_rule!r}")
        if self.length_step_m <= 0:
            raise CompileError("length step must be positive")


@dataclass
class StationSlot:
    index: int
    edge: str
    spec: object
    Q: np.ndarray
    types: list
    configs: list          # tuples of counts per type
    config_costs: np.ndarray
    rooms: list
    dispatcher: StationDispatcher
    pinned: Optional[int] = None


@dataclass
class VfcSlot:
    index: int
    edge: str
    spec: object
    Q: np.ndarray
    rooms: list
    cost: float
    pinned: Optional[bool] = None
    noise0: np.ndarray = None   # (S, 8) noise at zero pressure drop
    slope: np.ndarray = None    # (8,) d noise / d dp


@dataclass
class SilOption:
    n: int
    gap: float
    v: np.ndarray        # (S,)
    dp0: np.ndarray      # (S,) pressure loss = dp0 + dp1 * l
    dp1: np.ndarray
    d0: np.ndarray       # (8,) damping = d0 + d1 * l
    d1: np.ndarray
    noise: np.ndarray    # (S, 8)
    c0: float            # cost = c0 + c1 * l
    c1: float


@dataclass
class SilencerSlot:
    index: int
    edge: str
    spec: object
    Q: np.ndarray
    rooms: list
    options: list
    lengths: np.ndarray


@dataclass
class Design:
    """Complete purchase decisions: fan config per station, silencer choices.

    ``silencers[k]`` is ``None`` (not bought) or ``(option index, length index)``.
    """

    configs: tuple
    silencers: tuple

    def key(self):
        return (self.configs, self.silencers)


@dataclass
class Evaluation:
    feasible: bool
    reason: str = ""
    objective: float = math.inf
    invest: dict = field(default_factory=dict)
    energy: float = 0.0
    P: np.ndarray = None            # (stations, S)
    dispatch: list = None           # [station][s] -> Dispatch | None
    vfc_dp: np.ndarray = None       # (vfcs, S)
    vfc_active: np.ndarray = None
    vfc_bought: np.ndarray = None
    sil_dp: np.ndarray = None       # (sils, S)
    levels: np.ndarray = None       # (E, S, 8) sound power at edge outputs
    room_dba: np.ndarray = None     # (rooms, S)
    max_excess: float = math.inf
    power: np.ndarray = None        # (stations, S)


class CompiledProblem:
    def __init__(self, graph: NetworkGraph, catalog: Catalog, econ: eco.EconomicParams,
                 options: Optional[Options] = None):
        self.graph = graph
        self.catalog = catalog
        self.econ = econ
        self.options = options or Options()
        coupled = self.options.mode == "coupled"
        rep = validate_network(graph, coupled=coupled and self.options.noise_limit is None)
        if coupled and self.options.noise_limit is not None:
            rep.errors = [e for e in rep.errors if "noise_limit_dba is required" not in e[1]]
        if not rep.ok:
            raise NetworkError(str(rep))
        catalog.validate()
        self.scen = graph.scenario_ids
        self.S = len(self.scen)
        self.w = graph.weights
        self.rooms = graph.rooms
        self.R = len(self.rooms)
        self.edge_ids = graph.edge_order()
        self.E = len(self.edge_ids)
        self.epos = {e: i for i, e in enumerate(self.edge_ids)}
        self.parent = np.array([
            -1 if graph.edges[e].frm == graph.source else self.epos[graph.parent_edge(graph.edges[e].frm)]
            for e in self.edge_ids])
        self.w_inv = {c: eco.invest_weight(econ, c) for c in ("fan_station", "vfc", "silencer")}
        self.w_energy = eco.energy_weight(econ)
        self._compile_slots()
        self._compile_rooms()
        self._compile_fixed()
        self._apply_fixings()

    # ------------------------------------------------------------ compile
    def _flows(self, eid):
        return np.array([self.graph.edges[eid].flow_m3s[s] for s in self.scen])

    def _compile_slots(self):
        g, cat = self.graph, self.catalog
        self.stations, self.vfcs, self.sils = [], [], []
        self.slot_of_edge = {}
        for eid in self.edge_ids:
            e = g.edges[eid]
            if e.slot == "fan_station":
                spec = cat.stations.get(e.component)
                if spec is None:
                    raise CatalogError(f"edge {eid}: unknown fan station {e.component!r}")
                types = []
                for c in spec.candidates:
                    line = cat.fan_lines[c.line]
                    sz = line.size(c.diameter_m)
                    types.append(FanType(len(types), line, c.diameter_m, c.copies, sz.flow_m3s[0],
                                         sz.flow_m3s[1], sz.pressure_pa[0], sz.pressure_pa[1],
                                         sz.power_w[0], sz.power_w[1],
                                         fan_cost(c.diameter_m, line, spec.clad)))
                configs = [a for a in itertools.product(*[range(t.copies + 1) for t in types])
                           if 1 <= sum(a) <= spec.n_max]
                configs.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
                costs = np.array([sum(a_t * t.cost for a_t, t in zip(a, types)) for a in configs])
                st = StationSlot(len(self.stations), eid, spec, self._flows(eid), types, configs, costs,
                                 [], StationDispatcher(types, self.options.fan_noise_rule))
                self.stations.append(st)
                self.slot_of_edge[eid] = ("fan_station", st.index)
            elif e.slot == "vfc":
                spec = cat.vfcs.get(e.component)
                if spec is None:
                    raise CatalogError(f"edge {eid}: unknown VFC {e.component!r}")
                Q = self._flows(eid)
                noise0 = np.array([vfc_flow_noise(q, 0.0, spec, check=False) for q in Q])
                vs = VfcSlot(len(self.vfcs), eid, spec, Q, [], vfc_cost(spec),
                             noise0=noise0, slope=spec.eps[:, 0].copy())
                self.vfcs.append(vs)
                self.slot_of_edge[eid] = ("vfc", vs.index)
            elif e.slot == "silencer":
                spec = cat.silencers.get(e.component)
                if spec is None:
                    raise CatalogError(f"edge {eid}: unknown silencer {e.component!r}")
                Q = self._flows(eid)
                opts = []
                for n in range(spec.splitters[0], spec.splitters[1] + 1):
                    geo = [silencer_geometry(spec, n, q) for q in Q]
                    s = geo[0]["s"]
                    v = np.array([gm["v"] for gm in geo])
                    dp0 = np.array([silencer_pressure_loss(vv, s, 0.0, spec) for vv in v])
                    dp1 = np.array([silencer_pressure_loss(vv, s, 1.0, spec) for vv in v]) - dp0
                    d0 = silencer_damping(n, 0.0, spec)
                    d1 = silencer_damping(n, 1.0, spec) - d0
                    noise = np.array([silencer_flow_noise(vv, spec) for vv in v])
                    c0 = silencer_cost(n, 0.0, spec)
                    c1 = silencer_cost(n, 1.0, spec) - c0
                    opts.append(SilOption(n, s, v, dp0, dp1, d0, d1, noise, c0, c1))
                lo, hi = spec.length_m
                step = self.options.length_step_m
                k = int(math.floor((hi - lo) / step + 1e-9))
                lengths = np.round(lo + step * np.arange(k + 1), 10)
                if hi - lengths[-1] > 1e-9:
                    lengths = np.append(lengths, hi)
                ss = SilencerSlot(len(self.sils), eid, spec, Q, [], opts, lengths)
                self.sils.append(ss)
                self.slot_of_edge[eid] = ("silencer", ss.index)

    def _compile_rooms(self):
        g = self.graph
        R, S = self.R, self.S
        self.R0 = np.zeros((R, S))
        self.room_station = np.zeros(R, dtype=int)
        self.room_vfc = np.full(R, -1)
        self.room_sil = np.zeros((R, len(self.sils)))
        self.room_edge = np.zeros(R, dtype=int)
        self.paths = []
        for r, room in enumerate(self.rooms):
            path = g.path_to_room(room)
            self.paths.append(path)
            self.room_edge[r] = self.epos[path[-1]]
            node = g.nodes[room]
            src = g.nodes[g.source]
            for si, s in enumerate(self.scen):
                self.R0[r, si] = node.pressure_pa[s] - src.pressure_pa[s] + sum(g.loss(e, s) for e in path)
            sts = [self.slot_of_edge[e][1] for e in path if self.slot_of_edge.get(e, ("",))[0] == "fan_station"]
            vfs = [self.slot_of_edge[e][1] for e in path if self.slot_of_edge.get(e, ("",))[0] == "vfc"]
            if len(sts) != 1:
                raise CompileError(f"room {room}: the search needs exactly one fan station on its path")
            if len(vfs) > 1:
                raise CompileError(f"room {room}: the search supports at most one VFC per path")
            self.room_station[r] = sts[0]
            self.stations[sts[0]].rooms.append(r)
            if vfs:
                self.room_vfc[r] = vfs[0]
                self.vfcs[vfs[0]].rooms.append(r)
            for e in path:
                kind = self.slot_of_edge.get(e, ("",))
                if kind[0] == "silencer":
                    self.room_sil[r, kind[1]] = 1.0
                    self.sils[kind[1]].rooms.append(r)
        for st in self.stations:
            if not st.rooms:
                raise CompileError(f"fan station {st.edge} supplies no room")
        # acoustics
        self.limits = np.full(R, np.inf)
        self.conv_air = np.zeros(R)
        self.rad = [[] for _ in range(R)]
        self.background = [None] * R
        if self.options.mode == "coupled":
            for r, room in enumerate(self.rooms):
                node = g.nodes[room]
                lim = self.options.noise_limit if self.options.noise_limit is not None else node.noise_limit_dba
                self.limits[r] = np.inf if lim is None else float(lim)
                self.conv_air[r] = conversion_airborne(node.acoustics)
                self.rad[r] = [(self.epos[seg.edge], conversion_radiation(seg)) for seg in node.radiation]
                self.background[r] = node.background_db

    def _compile_fixed(self):
        E, S = self.E, self.S
        self.fixed_D = np.zeros((E, S, N_BANDS))
        self.fixed_N = np.full((E, S, N_BANDS), FLOOR)
        for i, eid in enumerate(self.edge_ids):
            e = self.graph.edges[eid]
            if e.slot == "fixed_chain":
                for si, s in enumerate(self.scen):
                    comb = combine_fixed_chain(e.fixed_chain(s))
                    self.fixed_D[i, si] = comb["total_damping"]
                    self.fixed_N[i, si] = comb["total_flow_noise"]

    def _apply_fixings(self):
        fx = self.options.sequential_fixings or {}
        for eid, fans in (fx.get("stations") or {}).items():
            kind = self.slot_of_edge.get(eid)
            if kind is None or kind[0] != "fan_station":
                raise CompileError(f"fixing refers to unknown fan station {eid}")
            st = self.stations[kind[1]]
            counts = [0] * len(st.types)
            for line, D in fans:
                idx = [t.index for t in st.types if t.line.id == line and abs(t.diameter_m - D) < 1e-12]
                if not idx:
                    raise CompileError(f"fixing names unknown fan {line}/{D} at {eid}")
                counts[idx[0]] += 1
            counts = tuple(counts)
            if counts not in st.configs:
                raise CompileError(f"fixing at {eid} is not an admissible fan set")
            st.pinned = st.configs.index(counts)
        for eid, bought in (fx.get("vfcs") or {}).items():
            kind = self.slot_of_edge.get(eid)
            if kind is None or kind[0] != "vfc":
                raise CompileError(f"fixing refers to unknown VFC {eid}")
            self.vfcs[kind[1]].pinned = bool(bought)

    # ------------------------------------------------------------ helpers
    @property
    def coupled(self):
        return self.options.mode == "coupled"

    def sil_length(self, k, li):
        return float(self.sils[k].lengths[li])

    def propagate(self, D, N):
        """Sound power at every edge output given per-edge damping and noise."""
        L = np.empty((self.E, self.S, N_BANDS))
        fl = np.full((self.S, N_BANDS), FLOOR)
        for i in range(self.E):
            p = self.parent[i]
            lin = fl if p < 0 else L[p]
            damped = np.where(lin <= FLOOR, FLOOR, np.maximum(lin - D[i], FLOOR))
            L[i] = level_add(damped, N[i])
        return L

    def room_levels(self, L):
        out = np.empty((self.R, self.S))
        for r in range(self.R):
            terms = [L[self.room_edge[r]] + self.conv_air[r] + A_WEIGHTS]
            for epos, conv in self.rad[r]:
                terms.append(L[epos] + conv + A_WEIGHTS)
            if self.background[r] is not None:
                terms.append(np.broadcast_to(self.background[r] + A_WEIGHTS, (self.S, N_BANDS)))
            stacked = np.concatenate(terms, axis=1)
            out[r] = level_sum(stacked, axis=1)
        return out

    def hydraulic_bound(self) -> np.ndarray:
        """eta_bar * (max target pressure above the source) * total room flow."""
        return hydraulic_lower_bound(self.graph, self.options.eta_bar)

    # ------------------------------------------------------------ evaluation
    def evaluate(self, design: Design, with_acoustics: Optional[bool] = None,
                 vfc_pins: Optional[dict] = None, limits=None) -> Evaluation:
        S = self.S
        vfc_pins = vfc_pins or {}
        limits = self.limits if limits is None else np.asarray(limits, dtype=float)
        acoustic = self.coupled if with_acoustics is None else with_acoustics
        ev = Evaluation(feasible=False)
        sil_dp = np.zeros((len(self.sils), S))
        for k, choice in enumerate(design.silencers):
            if choice is not None:
                o = self.sils[k].options[choice[0]]
                sil_dp[k] = o.dp0 + o.dp1 * self.sil_length(k, choice[1])
        ev.sil_dp = sil_dp
        Rq = self.R0 + self.room_sil @ sil_dp
        P = np.zeros((len(self.stations), S))
        for st in self.stations:
            P[st.index] = np.max(Rq[st.rooms], axis=0)
            P[st.index] = np.where(st.Q > 0, P[st.index], 0.0)
        ev.P = P
        slack = P[self.room_station] - Rq
        vfc_dp = np.zeros((len(self.vfcs), S))
        vfc_active = np.zeros((len(self.vfcs), S), dtype=bool)
        for r in range(self.R):
            tol = 1e-9 * max(1.0, abs(P[self.room_station[r]]).max())
            if np.any(slack[r] < -tol):
                ev.reason = f"room {self.rooms[r]} needs more pressure than an idle station gives"
                return ev
            if self.room_vfc[r] < 0 and np.any(slack[r] > tol):
                ev.reason = f"room {self.rooms[r]} has surplus pressure and no VFC"
                return ev
        for v in self.vfcs:
            sl = slack[v.rooms]
            tol = 1e-9 * max(1.0, float(np.abs(P).max()))
            if np.any(np.ptp(sl, axis=0) > tol):
                ev.reason = f"VFC {v.edge} cannot balance the rooms it serves"
                return ev
            dp = np.clip(sl[0], 0.0, None)
            act = dp > tol
            dp = np.where(act, dp, 0.0)
            lo, hi = v.spec.pressure_pa
            if np.any(act & ((dp < lo - tol) | (dp > hi + tol))):
                ev.reason = f"VFC {v.edge} pressure drop outside its range"
                return ev
            vfc_dp[v.index] = dp
            vfc_active[v.index] = act
        pins = [vfc_pins.get(v.index, v.pinned) for v in self.vfcs]
        bought = np.array([bool(vfc_active[v.index].any() or v.spec.must_purchase or pins[v.index])
                           for v in self.vfcs], dtype=bool)
        for v in self.vfcs:
            if pins[v.index] is False and vfc_active[v.index].any():
                ev.reason = f"VFC {v.edge} is fixed to not purchased but needed"
                return ev
        ev.vfc_dp, ev.vfc_active, ev.vfc_bought = vfc_dp, vfc_active, bought
        disp = []
        power = np.zeros((len(self.stations), S))
        for st in self.stations:
            cfg = st.configs[design.configs[st.index]]
            row = []
            for si in range(S):
                if st.Q[si] <= 0:
                    row.append(Dispatch(0.0))
                    continue
                d = st.dispatcher.dispatch(cfg, float(st.Q[si]), float(P[st.index, si]))
                if d is None:
                    ev.reason = (f"fan station {st.edge} cannot deliver {P[st.index, si]:.6g} Pa "
                                 f"at {st.Q[si]:.6g} m3/s in scenario {self.scen[si]}")
                    return ev
                row.append(d)
                power[st.index, si] = d.power
            disp.append(row)
        ev.dispatch = disp
        ev.power = power
        inv_fan = sum(st.config_costs[design.configs[st.index]] for st in self.stations)
        inv_vfc = sum(v.cost for v in self.vfcs if bought[v.index])
        inv_sil = 0.0
        for k, choice in enumerate(design.silencers):
            if choice is not None:
                o = self.sils[k].options[choice[0]]
                inv_sil += o.c0 + o.c1 * self.sil_length(k, choice[1])
        ev.invest = {"fan_station": self.w_inv["fan_station"] * inv_fan,
                     "vfc": self.w_inv["vfc"] * inv_vfc,
                     "silencer": self.w_inv["silencer"] * inv_sil}
        ev.energy = self.w_energy * float(power.sum(axis=0) @ self.w)
        ev.objective = math.fsum(ev.invest.values()) + ev.energy
        if acoustic:
            D, N = self.edge_acoustics(design, ev)
            L = self.propagate(D, N)
            ev.levels = L
            ev.room_dba = self.room_levels(L)
            excess = ev.room_dba - limits[:, None]
            ev.max_excess = float(np.max(excess))
            if ev.max_excess > NOISE_TOL:
                r, si = np.unravel_index(int(np.argmax(excess)), excess.shape)
                ev.reason = (f"room {self.rooms[r]} reaches {ev.room_dba[r, si]:.4f} dB(A) "
                             f"in scenario {self.scen[si]}")
                return ev
        ev.feasible = True
        return ev

    def edge_acoustics(self, design: Design, ev: Evaluation):
        D = self.fixed_D.copy()
        N = self.fixed_N.copy()
        for st in self.stations:
            i = self.epos[st.edge]
            for si in range(self.S):
                d = ev.dispatch[st.index][si]
                if d is not None and d.fans:
                    N[i, si] = d.noise
        for v in self.vfcs:
            i = self.epos[v.edge]
            for si in range(self.S):
                if ev.vfc_active[v.index, si]:
                    N[i, si] = v.noise0[si] + v.slope * ev.vfc_dp[v.index, si]
        for k, choice in enumerate(design.silencers):
            if choice is not None:
                i = self.epos[self.sils[k].edge]
                o = self.sils[k].options[choice[0]]
                D[i] = o.d0 + o.d1 * self.sil_length(k, choice[1])
                N[i] = o.noise
        return D, N

    def count_purchases(self, design: Design, ev: Evaluation) -> int:
        fans = sum(sum(st.configs[design.configs[st.index]]) for st in self.stations)
        return fans + int(ev.vfc_bought.sum()) + sum(1 for c in design.silencers if c is not None)

    def total_length(self, design: Design) -> float:
        return sum(self.sil_length(k, c[1]) for k, c in enumerate(design.silencers) if c is not None)


def hydraulic_lower_bound(graph: NetworkGraph, eta_bar: float = 1.0) -> np.ndarray:
    """Per scenario: eta_bar * max room pressure above the source * total room flow (W)."""
    src = graph.nodes[graph.source]
    out = []
    for s in graph.scenario_ids:
        rooms = graph.rooms
        if not rooms:
            out.append(0.0)
            continue
        p = max(graph.nodes[r].pressure_pa[s] for r in rooms) - src.pressure_pa[s]
        q = sum(graph.room_flow(r, s) for r in rooms)
        out.append(eta_bar * max(p, 0.0) * q)
    return np.array(out)
