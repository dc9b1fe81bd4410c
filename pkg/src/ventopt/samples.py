"""Synthetic sample catalog and reproducible fixture networks.

All coefficients here are made up to look physically plausible; they are
not manufacturer data.
"""
from __future__ import annotations

import math

import numpy as np

from .acoustics import N_BANDS
from .components import Catalog
from .economics import EconomicParams
from .loadgen import RoomDemand, cluster_load_cases, hourly_matrix
from .network import NetworkGraph

SAMPLE_NOTE = "synthetic sample coefficients, not manufacturer data"

_FAN_SHAPE = np.array([6.0, 5.0, 3.0, 0.0, -3.0, -6.0, -10.0, -15.0])
_VFC_SHAPE = np.array([2.0, 2.0, 1.0, 0.0, -2.0, -4.0, -7.0, -11.0])
_SIL_SHAPE = np.array([3.0, 2.0, 0.0, -2.0, -4.0, -7.0, -10.0, -13.0])
_SIL_DAMP_LN = np.array([0.6, 1.2, 2.6, 3.6, 4.2, 3.4, 2.4, 1.8])
_SIL_DAMP_L = np.array([0.4, 0.8, 1.8, 2.6, 3.0, 2.4, 1.8, 1.2])


def fan_line(alpha, eta, beta3=0.0, beta4=0.0, cost=(1500.0, 300.0, 200.0, 50.0),
             level=33.0, eps_speed=(2.0, 1.0), eps_d=-4.0, speed_min=0.25,
             sizes=((0.5, 0.3, 3.0),)):
    """Fan line whose electric power is hydraulic power / eta plus losses."""
    a = np.asarray(alpha, dtype=float)
    beta = [a[0] / eta, a[1] / eta, a[2] / eta, beta3, beta4]
    eps = np.column_stack([np.full(N_BANDS, eps_speed[0]), np.full(N_BANDS, eps_speed[1]),
                           np.full(N_BANDS, eps_d), level + _FAN_SHAPE])
    return {"pressure": a.tolist(), "power": beta, "cost": list(cost), "noise": eps.tolist(),
            "speed_min": speed_min,
            "sizes": [{"diameter_m": D, "flow_m3s": [qlo, qhi]} for D, qlo, qhi in sizes]}


def vfc(height=0.3, width=0.3, cost=(800.0, 250.0, 60.0), level=24.0, slope=0.06,
        dp=(0.0, 400.0), clad=False, must_purchase=False):
    eps = np.column_stack([np.full(N_BANDS, slope), np.full(N_BANDS, 0.05), np.full(N_BANDS, 1.0),
                           np.full(N_BANDS, 2.0), np.zeros(N_BANDS), level + _VFC_SHAPE])
    return {"height_m": height, "width_m": width, "cost": list(cost), "noise": eps.tolist(),
            "pressure_pa": list(dp), "clad": clad, "must_purchase": must_purchase}


def silencer(height=0.6, width=0.6, splitter=0.1, length=(0.5, 2.0), splitters=(2, 4),
             pressure=(0.3, 0.02, 0.03), cost=(40.0, 300.0, 200.0, 150.0), level=22.0,
             damp_scale=1.0):
    delta = np.zeros((N_BANDS, 8))
    delta[:, 2] = damp_scale * _SIL_DAMP_LN
    delta[:, 5] = damp_scale * _SIL_DAMP_L
    delta[:, 7] = 0.5
    eps = np.column_stack([np.full(N_BANDS, 0.1), np.full(N_BANDS, 1.5), np.full(N_BANDS, 3.0),
                           np.zeros(N_BANDS), level + _SIL_SHAPE])
    return {"height_m": height, "width_m": width, "splitter_m": splitter, "length_m": list(length),
            "splitters": list(splitters), "pressure": list(pressure), "cost": list(cost),
            "damping": delta.tolist(), "noise": eps.tolist()}


def station(candidates, n_max=1, clad=False):
    return {"n_max": n_max, "clad": clad,
            "candidates": [{"line": l, "diameter_m": D, "copies": c} for l, D, c in candidates]}


def catalog(fan_lines, stations, vfcs=None, silencers=None) -> Catalog:
    return Catalog.from_dict({"format_version": 1, "note": SAMPLE_NOTE, "fan_lines": fan_lines,
                              "fan_stations": stations, "vfcs": vfcs or {}, "silencers": silencers or {}})


def sample_catalog() -> Catalog:
    """Two fan lines in three sizes, one VFC and two silencer sizes."""
    sizes = ((0.4, 0.15, 1.6), (0.5, 0.3, 3.0), (0.63, 0.6, 6.0))
    lines = {
        "EC-A": fan_line((-6.0, 40.0, 3200.0), eta=0.72, beta3=120.0, beta4=15.0,
                         cost=(3400.0, 600.0, 300.0, 80.0), level=34.0, sizes=sizes),
        "BC-B": fan_line((-5.0, 30.0, 3000.0), eta=0.5, beta3=80.0, beta4=10.0,
                         cost=(2200.0, 350.0, 250.0, 60.0), level=29.0, sizes=sizes),
    }
    stations = {"central": station([(l, D, 2) for l in ("EC-A", "BC-B") for D, _, _ in sizes], n_max=3)}
    return catalog(lines, stations, {"vfc-300": vfc()},
                   {"sil-600": silencer(), "sil-900": silencer(height=0.9, width=0.9, splitters=(3, 6),
                                                               cost=(50.0, 320.0, 220.0, 200.0))})


def default_econ() -> EconomicParams:
    return EconomicParams()


# ------------------------------------------------------------------ helpers

def _acoustics(r_min=1.0, area=20.0, outlets=1, q=2.0):
    return {"directivity": q, "r_min_m": r_min, "absorption_area_m2": area, "n_outlets": outlets}


def _element(damping, noise):
    return {"damping_db": list(np.broadcast_to(np.asarray(damping, float), (N_BANDS,))),
            "flow_noise_db": noise if isinstance(noise, dict)
            else list(np.broadcast_to(np.asarray(noise, float), (N_BANDS,)))}


_DUCT_DAMP = np.array([1.0, 1.5, 2.0, 2.5, 3.0, 3.0, 3.0, 3.0])
_END_DAMP = np.array([14.0, 9.0, 5.0, 2.0, 0.5, 0.0, 0.0, 0.0])
_DUCT_NOISE = np.array([30.0, 29.0, 27.0, 24.0, 21.0, 17.0, 12.0, 6.0])


def duct_element(flows: dict, scale=1.0, q_ref=1.0, base=0.0):
    """Duct run: mild broadband damping, flow noise growing with 50 log Q."""
    noise = {s: (_DUCT_NOISE + base + 50.0 * math.log10(max(q, 1e-6) / q_ref)).tolist()
             for s, q in flows.items()}
    return _element(scale * _DUCT_DAMP, noise)


def outlet_element(flows: dict, base=-4.0, q_ref=0.3):
    """Air outlet with end reflection (strong low-frequency damping)."""
    noise = {s: (_DUCT_NOISE + base + 50.0 * math.log10(max(q, 1e-6) / q_ref)).tolist()
             for s, q in flows.items()}
    return _element(_END_DAMP, noise)


class NetBuilder:
    """Small helper to assemble network dictionaries."""

    def __init__(self, scenarios, name="network", source_pressure=0.0):
        self.scenarios = scenarios  # list of (id, weight)
        self.name = name
        self.nodes = [{"id": "src", "kind": "source", "pressure_pa": source_pressure}]
        self.edges = []
        self.room_flows = {}

    def junction(self, nid):
        self.nodes.append({"id": nid, "kind": "junction"})
        return nid

    def room(self, nid, flows, limit=None, pressure=0.0, acoustics=None, radiation=None, background=None):
        d = {"id": nid, "kind": "room", "pressure_pa": pressure,
             "acoustics": acoustics or _acoustics()}
        if limit is not None:
            d["noise_limit_dba"] = limit
        if radiation:
            d["radiation"] = radiation
        if background is not None:
            d["background_db"] = list(background)
        self.nodes.append(d)
        self.room_flows[nid] = flows
        return nid

    def edge(self, eid, frm, to, slot="none", component=None, loss=None, k=None, elements=None):
        d = {"id": eid, "from": frm, "to": to, "slot": slot}
        if component is not None:
            d["component"] = component
        if loss is not None:
            d["pressure_loss_pa"] = loss
        if k is not None:
            d["loss_coefficient_pa_s2_m6"] = k
        if elements is not None:
            d["elements"] = elements
        self.edges.append(d)
        return eid

    def flows_below(self, node):
        """Per-scenario flow through ``node`` (sum over rooms beneath)."""
        children = {}
        for e in self.edges:
            children.setdefault(e["from"], []).append(e["to"])
        tot = {s: 0.0 for s, _ in self.scenarios}
        stack = [node]
        while stack:
            n = stack.pop()
            if n in self.room_flows:
                for s in tot:
                    tot[s] += self.room_flows[n][s]
            stack.extend(children.get(n, []))
        return tot

    def graph(self) -> NetworkGraph:
        data = {"format_version": 1, "name": self.name,
                "scenarios": [{"id": s, "weight": w,
                               "room_flows_m3s": {r: f[s] for r, f in self.room_flows.items()}}
                              for s, w in self.scenarios],
                "nodes": self.nodes, "edges": self.edges}
        return NetworkGraph.from_dict(data)


# ------------------------------------------------------------------ fixtures

def chain_fixture():
    """source -> fan station -> fixed duct -> room; one scenario."""
    nb = NetBuilder([("s1", 1.0)], name="chain")
    nb.junction("j1")
    nb.room("r1", {"s1": 1.0}, limit=45.0)
    nb.edge("fs", "src", "j1", "fan_station", "st")
    nb.edge("duct", "j1", "r1", "fixed_chain", loss=200.0,
            elements=[_element(_DUCT_DAMP * 6, _DUCT_NOISE - 10), _element(_END_DAMP, _DUCT_NOISE - 20)])
    lines = {"F": fan_line((-100.0, 0.0, 500.0), eta=0.7, beta4=5.0, cost=(1000.0, 200.0, 0.0, 0.0),
                           level=20.0, speed_min=0.2, sizes=((1.0, 0.2, 2.0),))}
    cat = catalog(lines, {"st": station([("F", 1.0, 1)])})
    return nb.graph(), cat, default_econ()


def mini_fixture():
    """One station with two candidate fans, one VFC, one silencer, one room, two scenarios."""
    nb = NetBuilder([("s1", 0.6), ("s2", 0.4)], name="mini")
    for j in ("a", "b", "c"):
        nb.junction(j)
    nb.room("r1", {"s1": 0.8, "s2": 0.5}, limit=45.0)
    nb.edge("fs", "src", "a", "fan_station", "st")
    nb.edge("sil", "a", "b", "silencer", "sil")
    nb.edge("vfc", "b", "c", "vfc", "vfc")
    nb.edge("duct", "c", "r1", "fixed_chain", k=300.0,
            elements=[duct_element({"s1": 0.8, "s2": 0.5}, scale=3.0, base=-6.0),
                      outlet_element({"s1": 0.8, "s2": 0.5})])
    lines = {
        "LOUD": fan_line((-6.0, 40.0, 3200.0), eta=0.75, beta3=40.0, beta4=10.0,
                         cost=(2600.0, 500.0, 0.0, 0.0), level=38.0, sizes=((0.4, 0.1, 1.6),)),
        "QUIET": fan_line((-5.0, 30.0, 3000.0), eta=0.5, beta3=40.0, beta4=10.0,
                          cost=(2400.0, 400.0, 0.0, 0.0), level=28.0, sizes=((0.4, 0.1, 1.6),)),
    }
    cat = catalog(lines, {"st": station([("LOUD", 0.4, 1), ("QUIET", 0.4, 1)], n_max=2)},
                  {"vfc": vfc()}, {"sil": silencer(splitters=(2, 3), length=(0.5, 1.5))})
    return nb.graph(), cat, default_econ()


def _case_demands():
    rng = np.random.default_rng(7)
    spec = [("P1", 0.08, 0.011, 30), ("P2", 0.08, 0.011, 24), ("P3", 0.08, 0.011, 30),
            ("H1", 0.12, 0.011, 60), ("P4", 0.08, 0.011, 24), ("H2", 0.12, 0.011, 40),
            ("O1", 0.05, 0.011, 12)]
    base = np.array([0.1, 0.6, 0.9, 0.9, 0.7, 0.3, 0.8, 0.9, 0.9, 0.6, 0.4, 0.2, 0.1, 0.05])
    rooms = []
    for rid, qb, qp, amax in spec:
        occ = np.clip(base + rng.normal(0, 0.08, base.size), 0, 1)
        rooms.append(RoomDemand(rid, Q_build=qb, Q_person=qp, a_max=amax, occupancy=occ.tolist()))
    return rooms


def case_study_fixture(limit=40.0, scenarios=3, seed=0):
    """Seven rooms on two floors; 19 variable slots and 19 fixed chains."""
    rooms = _case_demands()
    lc = cluster_load_cases(hourly_matrix(rooms), scenarios, seed=seed, room_ids=[r.id for r in rooms])
    scen = [(f"s{j + 1}", float(w)) for j, w in enumerate(lc.weights)]
    nb = NetBuilder(scen, name="case-study")
    flows = {r: {f"s{j + 1}": float(lc.flows[j, i]) for j in range(len(scen))}
             for i, r in enumerate(lc.room_ids)}
    floor_a = ["P1", "P2", "P3", "H1"]
    floor_b = ["P4", "H2", "O1"]
    for j in ("a0", "a1", "a2", "a4", "fa0", "fa1", "fa2", "fa4", "fb0", "fb2"):
        nb.junction(j)
    limits = {"P1": limit, "P2": limit, "P3": limit + 2, "H1": limit + 5,
              "P4": limit, "H2": limit + 5, "O1": limit - 2}
    for r in floor_a + floor_b:
        rad = None
        if r == "P3":
            rad = [{"edge": "A-duct2", "R_ia_db": -20.0, "S_k_m2": 2.0, "S_1_m2": 0.36, "A_2_m2": 20.0,
                    "K_db": 0.0}]
        if r == "H2":
            rad = [{"edge": "B-duct", "R_ia_db": -18.0, "S_k_m2": 3.0, "S_1_m2": 0.36, "A_2_m2": 40.0,
                    "K_db": 0.0}]
        nb.room(r, flows[r], limit=limits[r],
                acoustics=_acoustics(r_min=1.5 if r.startswith("H") else 1.0,
                                     area=40.0 if r.startswith("H") else 20.0,
                                     outlets=2 if r.startswith("H") else 1),
                radiation=rad)
    nb.edge("AHU", "src", "a0", "fixed_chain", loss=None, k=4.0,
            elements=[_element(np.full(8, 0.5), np.full(8, -300.0))])
    nb.edge("FS", "a0", "a1", "fan_station", "central")
    nb.edge("S-central", "a1", "a2", "silencer", "sil-900")
    tot = nb.flows_below("src")
    nb.edge("trunk", "a2", "a4", "fixed_chain", k=8.0,
            elements=[duct_element(tot, scale=2.0, q_ref=2.0, base=4.0),
                      duct_element(tot, scale=1.0, q_ref=2.0, base=2.0)])
    fa = {s: sum(flows[r][s] for r in floor_a) for s, _ in scen}
    fb = {s: sum(flows[r][s] for r in floor_b) for s, _ in scen}
    nb.edge("A-duct1", "a4", "fa0", "fixed_chain", k=12.0, elements=[duct_element(fa, 2.0, 1.0)])
    nb.edge("S-A1", "fa0", "fa1", "silencer", "sil-600")
    nb.edge("A-duct2", "fa1", "fa2", "fixed_chain", k=18.0,
            elements=[duct_element(fa, 2.0, 1.0), duct_element(fa, 1.0, 1.0)])
    nb.edge("S-A2", "fa2", "fa4", "silencer", "sil-600")
    nb.edge("B-duct", "a4", "fb0", "fixed_chain", k=30.0,
            elements=[duct_element(fb, 2.0, 0.8), duct_element(fb, 1.0, 0.8)])
    nb.edge("S-B", "fb0", "fb2", "silencer", "sil-600")
    ks = {"P1": 600.0, "P2": 900.0, "P3": 400.0, "H1": 250.0, "P4": 700.0, "H2": 300.0, "O1": 1500.0}
    for r in floor_a + floor_b:
        up = "fa4" if r in floor_a else "fb2"
        for j in (f"{r}-b", f"{r}-v", f"{r}-s"):
            nb.junction(j)
        nb.edge(f"{r}-branch", up, f"{r}-b", "fixed_chain", k=ks[r],
                elements=[duct_element(flows[r], 2.0, 0.3, base=-4.0)])
        nb.edge(f"{r}-VFC", f"{r}-b", f"{r}-v", "vfc", "vfc-300")
        nb.edge(f"{r}-S", f"{r}-v", f"{r}-s", "silencer", "sil-600")
        nb.edge(f"{r}-outlet", f"{r}-s", r, "fixed_chain", k=ks[r] / 3,
                elements=[outlet_element(flows[r])])
    return nb.graph(), sample_catalog(), default_econ()


def tradeoff_fixture(limit=70.0):
    """An efficient but loud fan against a cheaper, less efficient quiet one,
    with a central silencer slot in front of a single room."""
    nb = NetBuilder([("s1", 0.7), ("s2", 0.3)], name="tradeoff")
    for j in ("a", "b"):
        nb.junction(j)
    flows = {"s1": 1.0, "s2": 0.7}
    nb.room("r1", flows, limit=limit)
    nb.edge("FS", "src", "a", "fan_station", "st")
    nb.edge("S-central", "a", "b", "silencer", "sil")
    nb.edge("duct", "b", "r1", "fixed_chain", k=450.0,
            elements=[duct_element(flows, scale=3.0, base=-10.0), outlet_element(flows, base=-10.0)])
    lines = {
        "EFF": fan_line((-6.0, 40.0, 3200.0), eta=0.8, beta3=20.0, beta4=5.0,
                        cost=(2000.0, 0.0, 0.0, 0.0), level=36.0, sizes=((0.5, 0.2, 2.0),)),
        "QUIET": fan_line((-6.0, 40.0, 3200.0), eta=0.55, beta3=20.0, beta4=5.0,
                          cost=(1800.0, 0.0, 0.0, 0.0), level=26.0, sizes=((0.5, 0.2, 2.0),)),
    }
    cat = catalog(lines, {"st": station([("EFF", 0.5, 1), ("QUIET", 0.5, 1)])},
                  silencers={"sil": silencer(splitters=(2, 3), length=(0.5, 1.5))})
    return nb.graph(), cat, default_econ()
