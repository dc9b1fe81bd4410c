"""Tree-shaped duct network with load cases, component slots and boundary
pressures."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .acoustics import N_BANDS, AirborneParams, RadiationParams
from .components import FixedElement

FORMAT_VERSION = 1
SLOTS = ("fan_station", "vfc", "silencer", "fixed_chain", "none")
KINDS = ("source", "room", "junction")
CONTINUITY_TOL = 1e-9
_ID = re.compile(r"^[A-Za-z][A-Za-z0-9_.:-]*$")


class NetworkError(ValueError):
    pass


class NetworkLookupError(KeyError):
    pass


@dataclass
class Scenario:
    id: str
    weight: float


@dataclass
class Node:
    id: str
    kind: str
    pressure_pa: dict = field(default_factory=dict)
    noise_limit_dba: Optional[float] = None
    acoustics: Optional[AirborneParams] = None
    radiation: list = field(default_factory=list)
    background_db: Optional[np.ndarray] = None


@dataclass
class Edge:
    id: str
    frm: str
    to: str
    slot: str = "none"
    component: Optional[str] = None
    flow_m3s: dict = field(default_factory=dict)
    pressure_loss_pa: dict = field(default_factory=dict)
    loss_coefficient: Optional[float] = None
    elements: list = field(default_factory=list)  # raw element dicts

    def fixed_chain(self, scenario: str) -> list:
        out = []
        for el in self.elements:
            noise = el.get("flow_noise_db", [-300.0] * N_BANDS)
            if isinstance(noise, dict):
                noise = noise[scenario]
            out.append(FixedElement(np.asarray(el.get("damping_db", [0.0] * N_BANDS), float),
                                    np.asarray(noise, float)))
        return out


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)  # (category, message)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, category, message):
        self.errors.append((category, message))

    def categories(self):
        return {c for c, _ in self.errors}

    def __str__(self):
        if self.ok:
            return "network valid"
        return "\n".join(f"[{c}] {m}" for c, m in self.errors)


@dataclass
class ContinuityReport:
    passed: bool
    residuals: dict


class NetworkGraph:
    def __init__(self, nodes, edges, scenarios, name: str = "network"):
        self.name = name
        self.nodes = {n.id: n for n in nodes}
        self.edges = {e.id: e for e in edges}
        self.scenarios = list(scenarios)
        if len(self.nodes) != len(nodes) or len(self.edges) != len(edges):
            raise NetworkError("duplicate node or edge id")
        self._in = {}
        self._out = {nid: [] for nid in self.nodes}
        for e in edges:
            self._in.setdefault(e.to, []).append(e.id)
            if e.frm in self._out:
                self._out[e.frm].append(e.id)

    # ---- structure
    @property
    def scenario_ids(self):
        return [s.id for s in self.scenarios]

    @property
    def weights(self):
        return np.array([s.weight for s in self.scenarios])

    @property
    def source(self) -> str:
        src = [n.id for n in self.nodes.values() if n.kind == "source"]
        if len(src) != 1:
            raise NetworkError("network needs exactly one source")
        return src[0]

    @property
    def rooms(self):
        return [n.id for n in self.nodes.values() if n.kind == "room"]

    def parent_edge(self, node: str) -> Optional[str]:
        ins = self._in.get(node, [])
        return ins[0] if ins else None

    def out_edges(self, node: str):
        return list(self._out.get(node, []))

    def path_to_room(self, room: str) -> list:
        if room not in self.nodes:
            raise NetworkLookupError(room)
        if self.nodes[room].kind != "room":
            raise NetworkError(f"{room} is not a room")
        path = []
        node = room
        seen = set()
        while True:
            eid = self.parent_edge(node)
            if eid is None:
                break
            if eid in seen:
                raise NetworkError("cycle on path to room")
            seen.add(eid)
            path.append(eid)
            node = self.edges[eid].frm
        if node != self.source:
            raise NetworkError(f"room {room} has no path from the source")
        return path[::-1]

    def edge_order(self) -> list:
        """Edges in breadth-first order from the source."""
        order = []
        frontier = [self.source]
        while frontier:
            nxt = []
            for nid in frontier:
                for eid in self._out.get(nid, []):
                    order.append(eid)
                    nxt.append(self.edges[eid].to)
            frontier = nxt
        return order

    def rooms_below(self, edge_id: str) -> list:
        out = []
        stack = [self.edges[edge_id].to]
        seen = set()
        while stack:
            nid = stack.pop()
            if nid in seen or nid not in self.nodes:
                continue
            seen.add(nid)
            if self.nodes[nid].kind == "room":
                out.append(nid)
            for eid in self._out.get(nid, []):
                stack.append(self.edges[eid].to)
        return sorted(out, key=self.rooms.index)

    def flow(self, edge_id: str, scenario: str) -> float:
        return self.edges[edge_id].flow_m3s[scenario]

    def loss(self, edge_id: str, scenario: str) -> float:
        e = self.edges[edge_id]
        if scenario in e.pressure_loss_pa:
            return e.pressure_loss_pa[scenario]
        if e.loss_coefficient is not None:
            return e.loss_coefficient * e.flow_m3s[scenario] ** 2
        return 0.0

    def room_flow(self, room: str, scenario: str) -> float:
        return self.edges[self.parent_edge(room)].flow_m3s[scenario]

    # ---- serialization
    @classmethod
    def from_dict(cls, data: dict) -> "NetworkGraph":
        if data.get("format_version") != FORMAT_VERSION:
            raise NetworkError(f"network format_version must be {FORMAT_VERSION}")
        try:
            scen_raw = data["scenarios"]
            scenarios = [Scenario(str(s["id"]), float(s["weight"])) for s in scen_raw]
            room_flows = {s["id"]: s.get("room_flows_m3s", {}) for s in scen_raw}
            source_p = {s["id"]: float(s.get("source_pressure_pa", 0.0)) for s in scen_raw}
            nodes = []
            for n in data["nodes"]:
                kind = n["kind"]
                if kind == "target":
                    kind = "room"
                node = Node(id=str(n["id"]), kind=kind)
                p = n.get("pressure_pa")
                if kind in ("source", "room"):
                    default = source_p if kind == "source" else {s.id: 0.0 for s in scenarios}
                    node.pressure_pa = _per_scenario(p, scenarios, default)
                if kind == "room":
                    node.noise_limit_dba = n.get("noise_limit_dba")
                    ac = n.get("acoustics")
                    if ac is not None:
                        node.acoustics = AirborneParams(float(ac["directivity"]), float(ac["r_min_m"]),
                                                        float(ac["absorption_area_m2"]),
                                                        int(ac.get("n_outlets", 1)))
                    node.radiation = [RadiationParams(str(r["edge"]), float(r["R_ia_db"]), float(r["S_k_m2"]),
                                                      float(r["S_1_m2"]), float(r["A_2_m2"]),
                                                      float(r.get("K_db", 0.0)))
                                      for r in n.get("radiation", [])]
                    bg = n.get("background_db")
                    if bg is not None:
                        node.background_db = np.asarray(bg, dtype=float)
                nodes.append(node)
            edges = []
            for e in data["edges"]:
                edge = Edge(id=str(e["id"]), frm=str(e["from"]), to=str(e["to"]),
                            slot=e.get("slot", "none"), component=e.get("component"),
                            loss_coefficient=e.get("loss_coefficient_pa_s2_m6"),
                            elements=list(e.get("elements", [])))
                if "flow_m3s" in e:
                    edge.flow_m3s = _per_scenario(e["flow_m3s"], scenarios, None)
                if "pressure_loss_pa" in e:
                    edge.pressure_loss_pa = _per_scenario(e["pressure_loss_pa"], scenarios, None)
                edges.append(edge)
        except KeyError as exc:
            raise NetworkError(f"missing field {exc}") from None
        g = cls(nodes, edges, scenarios, name=data.get("name", "network"))
        g._derive_flows(room_flows)
        return g

    def _derive_flows(self, room_flows):
        """Fill edge flows from room flows where not given explicitly."""
        missing = [e for e in self.edges.values() if not e.flow_m3s]
        if not missing:
            return
        for e in missing:
            try:
                below = self.rooms_below(e.id)
            except (KeyError, RecursionError):
                continue
            flows = {}
            for s in self.scenarios:
                rf = room_flows.get(s.id, {})
                if all(r in rf for r in below):
                    flows[s.id] = float(sum(rf[r] for r in below))
            if len(flows) == len(self.scenarios):
                e.flow_m3s = flows

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes.values():
            d = {"id": n.id, "kind": n.kind}
            if n.kind in ("source", "room"):
                d["pressure_pa"] = dict(n.pressure_pa)
            if n.kind == "room":
                if n.noise_limit_dba is not None:
                    d["noise_limit_dba"] = n.noise_limit_dba
                if n.acoustics is not None:
                    a = n.acoustics
                    d["acoustics"] = {"directivity": a.directivity, "r_min_m": a.r_min_m,
                                      "absorption_area_m2": a.absorption_area_m2, "n_outlets": a.n_outlets}
                if n.radiation:
                    d["radiation"] = [{"edge": r.edge, "R_ia_db": r.R_ia_db, "S_k_m2": r.S_k_m2,
                                       "S_1_m2": r.S_1_m2, "A_2_m2": r.A_2_m2, "K_db": r.K_db}
                                      for r in n.radiation]
                if n.background_db is not None:
                    d["background_db"] = n.background_db.tolist()
            nodes.append(d)
        edges = []
        for e in self.edges.values():
            d = {"id": e.id, "from": e.frm, "to": e.to, "slot": e.slot,
                 "flow_m3s": dict(e.flow_m3s)}
            if e.component is not None:
                d["component"] = e.component
            if e.pressure_loss_pa:
                d["pressure_loss_pa"] = dict(e.pressure_loss_pa)
            if e.loss_coefficient is not None:
                d["loss_coefficient_pa_s2_m6"] = e.loss_coefficient
            if e.elements:
                d["elements"] = e.elements
            edges.append(d)
        return {"format_version": FORMAT_VERSION, "name": self.name,
                "scenarios": [{"id": s.id, "weight": s.weight} for s in self.scenarios],
                "nodes": nodes, "edges": edges}

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path, validate: bool = True, coupled: bool = False) -> "NetworkGraph":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise NetworkError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        g = cls.from_dict(data)
        if validate:
            rep = validate_network(g, coupled=coupled)
            if not rep.ok:
                raise NetworkError(str(rep))
        return g

    def with_scenarios(self, loadcases: dict) -> "NetworkGraph":
        """Copy of the network with scenarios and room flows from a load-case file."""
        data = self.to_dict()
        data["scenarios"] = [{"id": s["id"], "weight": s["weight"],
                              "room_flows_m3s": s["room_flows_m3s"]} for s in loadcases["scenarios"]]
        sids = [s["id"] for s in loadcases["scenarios"]]
        for e in data["edges"]:
            e.pop("flow_m3s", None)
            if "pressure_loss_pa" in e and set(e["pressure_loss_pa"]) != set(sids):
                raise NetworkError(f"edge {e['id']}: explicit losses do not cover the new scenarios")
        for n in data["nodes"]:
            if "pressure_pa" in n:
                vals = set(n["pressure_pa"].values())
                if len(vals) > 1:
                    raise NetworkError(f"node {n['id']}: scenario-specific pressures cannot be remapped")
                n["pressure_pa"] = {s: (vals.pop() if vals else 0.0) for s in sids}
        return NetworkGraph.from_dict(data)


def _per_scenario(value, scenarios, default):
    if value is None:
        if default is None:
            return {}
        return dict(default)
    if isinstance(value, dict):
        return {str(k): float(v) for k, v in value.items()}
    return {s.id: float(value) for s in scenarios}


def validate_network(graph: NetworkGraph, coupled: bool = False) -> ValidationReport:
    rep = ValidationReport()
    sids = graph.scenario_ids
    for nid in list(graph.nodes) + list(graph.edges):
        if not _ID.match(nid):
            rep.add("format", f"identifier {nid!r} must start with a letter and use [A-Za-z0-9_.:-]")
    kinds = [n.kind for n in graph.nodes.values()]
    for n in graph.nodes.values():
        if n.kind not in KINDS:
            rep.add("format", f"node {n.id}: unknown kind {n.kind!r}")
    if kinds.count("source") != 1:
        rep.add("structure", f"expected exactly one source, found {kinds.count('source')}")
    for e in graph.edges.values():
        if e.frm not in graph.nodes or e.to not in graph.nodes:
            rep.add("structure", f"edge {e.id} references an unknown node")
        if e.slot not in SLOTS:
            rep.add("format", f"edge {e.id}: unknown slot {e.slot!r}")
    if rep.errors:
        return rep
    for nid, ins in graph._in.items():
        if len(ins) > 1:
            rep.add("structure", f"node {nid} has {len(ins)} incoming edges")
    src = graph.source
    if graph._in.get(src):
        rep.add("structure", "source has an incoming edge")
    if len(graph.edges) != len(graph.nodes) - 1:
        rep.add("structure", f"tree needs |E| = |N| - 1 ({len(graph.edges)} edges, {len(graph.nodes)} nodes)")
    # reachability and cycles
    seen = {src}
    stack = [src]
    while stack:
        nid = stack.pop()
        for eid in graph._out[nid]:
            to = graph.edges[eid].to
            if to in seen:
                rep.add("structure", f"cycle through node {to}")
                continue
            seen.add(to)
            stack.append(to)
    for nid in graph.nodes:
        if nid not in seen:
            cat = "connectivity" if graph.nodes[nid].kind == "room" else "structure"
            rep.add(cat, f"node {nid} is not reachable from the source")
    if rep.errors:
        return rep
    for n in graph.nodes.values():
        if n.kind == "room":
            if graph._out[n.id]:
                rep.add("structure", f"room {n.id} is not a leaf")
            if n.noise_limit_dba is not None and not n.noise_limit_dba > 0:
                rep.add("data", f"room {n.id}: noise limit must be positive")
            if coupled:
                if n.noise_limit_dba is None:
                    rep.add("data", f"room {n.id}: noise_limit_dba is required in coupled mode")
                if n.acoustics is None:
                    rep.add("data", f"room {n.id}: acoustics block is required in coupled mode")
            on_path = set(graph.path_to_room(n.id))
            for r in n.radiation:
                if r.edge not in on_path:
                    rep.add("data", f"room {n.id}: radiation edge {r.edge} is not on its supply path")
            if n.background_db is not None and n.background_db.shape != (N_BANDS,):
                rep.add("data", f"room {n.id}: background spectrum needs 8 bands")
        if n.kind in ("source", "room"):
            for s in sids:
                if s not in n.pressure_pa:
                    rep.add("data", f"node {n.id}: no boundary pressure for scenario {s}")
        elif n.kind == "junction" and not graph._out[n.id]:
            rep.add("structure", f"junction {n.id} is a dead end")
    if not graph.scenarios:
        rep.add("data", "no scenarios")
    elif abs(sum(s.weight for s in graph.scenarios) - 1.0) > 1e-9:
        rep.add("data", "scenario weights must sum to 1")
    if any(s.weight < 0 for s in graph.scenarios):
        rep.add("data", "scenario weights must be nonnegative")
    if len(set(sids)) != len(sids):
        rep.add("data", "duplicate scenario id")
    for e in graph.edges.values():
        for s in sids:
            if s not in e.flow_m3s:
                rep.add("data", f"edge {e.id}: no flow for scenario {s}")
            elif e.flow_m3s[s] < 0 or not math.isfinite(e.flow_m3s[s]):
                rep.add("data", f"edge {e.id}: flow must be finite and nonnegative")
        if e.pressure_loss_pa and set(e.pressure_loss_pa) != set(sids):
            rep.add("data", f"edge {e.id}: pressure losses must cover every scenario")
        if e.slot in ("fan_station", "vfc", "silencer") and not e.component:
            rep.add("orphan", f"edge {e.id}: {e.slot} slot without a component")
        if e.slot in ("fixed_chain", "none") and e.component:
            rep.add("orphan", f"edge {e.id}: component {e.component} on a {e.slot} slot")
        if e.slot != "fixed_chain" and e.elements:
            rep.add("orphan", f"edge {e.id}: fixed elements on a {e.slot} slot")
        for el in e.elements:
            d = np.asarray(el.get("damping_db", [0.0] * N_BANDS), float)
            if d.shape != (N_BANDS,) or np.any(d < 0):
                rep.add("data", f"edge {e.id}: element damping needs 8 nonnegative bands")
            noise = el.get("flow_noise_db")
            if isinstance(noise, dict) and set(noise) != set(sids):
                rep.add("data", f"edge {e.id}: element noise must cover every scenario")
    if not rep.errors:
        for s in sids:
            cr = check_continuity(graph, s)
            if not cr.passed:
                bad = {k: v for k, v in cr.residuals.items() if abs(v) > CONTINUITY_TOL}
                rep.add("continuity", f"scenario {s}: flow imbalance at {bad}")
    return rep


def check_continuity(graph: NetworkGraph, scenario: str) -> ContinuityReport:
    res = {}
    for n in graph.nodes.values():
        if n.kind != "junction":
            continue
        inflow = sum(graph.edges[e].flow_m3s.get(scenario, 0.0) for e in graph._in.get(n.id, []))
        outflow = sum(graph.edges[e].flow_m3s.get(scenario, 0.0) for e in graph._out.get(n.id, []))
        res[n.id] = inflow - outflow
    passed = all(abs(v) <= CONTINUITY_TOL for v in res.values())
    return ContinuityReport(passed, res)


def path_to_room(graph: NetworkGraph, room: str) -> list:
    return graph.path_to_room(room)
