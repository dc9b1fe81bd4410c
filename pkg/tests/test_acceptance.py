"""Acceptance suite: one group of tests per numbered criterion."""
import itertools
import math
import time

import mpmath as mp
import numpy as np
import pytest

from instances import random_instance
from oracle import Oracle, _fan_power
from ventopt.acoustics import (A_WEIGHTS_DB, EdgeAcoustics, a_weighted_total, component_transfer,
                               conversion_airborne, fit_tangents, level_increase, linearized_increase,
                               propagate_path)
from ventopt.cli import trace_rows
from ventopt.components import fan_cost
from ventopt.economics import annuity_factor, present_value_factor, replacement_investment, residual_value
from ventopt.modelbuild import assignment_from_solution, build_model, check_solution
from ventopt.problem import Options
from ventopt.samples import (NetBuilder, case_study_fixture, chain_fixture, default_econ, mini_fixture,
                             tradeoff_fixture)
from ventopt.solver import pareto_sweep, solve_airflow, solve_coupled, solve_sequential

mp.mp.dps = 60
REL = 1e-9

# fixture -> strictly decreasing limits spanning the acoustically active range
SWEEPS = {
    "chain": (chain_fixture, [70.0, 60.0, 50.0]),
    "mini": (mini_fixture, [66.0, 62.0, 58.0, 54.0, 50.0]),
    "tradeoff": (tradeoff_fixture, [76.0, 72.0, 70.0, 68.0]),
    "case_study": (case_study_fixture, [44.0, 40.0, 38.5]),
}


def _model(name, **kw):
    g, cat, eco = SWEEPS[name][0]()
    return build_model(g, cat, eco, **kw)


_MODELS = {}


def _checker(name, sol):
    """Model matching the limit (or mode) a fixture solution was computed for."""
    lim = sol.noise_limit
    if sol.mode == "airflow":
        key = (name, "airflow")
    else:
        key = (name, "own" if lim is None else 1000.0 if math.isinf(lim) else float(lim))
    if key not in _MODELS:
        if key[1] == "airflow":
            _MODELS[key] = _model(name, options=Options(mode="airflow_only"))
        elif key[1] == "own":
            _MODELS[key] = _model(name)
        else:
            _MODELS[key] = _model(name, noise_limits=key[1])
    return _MODELS[key]


def _verify(model, sol):
    """Residual check of the model assignment plus exact re-propagation of every room level.

    ``model`` is a built model or a fixture name."""
    if isinstance(model, str):
        model = _checker(model, sol)
    rep = check_solution(model, assignment_from_solution(model, sol))
    assert rep.feasible and rep.max_residual <= 1e-6, rep.summary()
    assert rep.objective == pytest.approx(sol.objective, rel=1e-9)
    if sol.room_levels_dba is not None:
        for room, row in sol.room_levels_dba.items():
            for s, lvl in row.items():
                assert abs(trace_rows(model, sol, room, s).room_dba - lvl) <= 1e-6


@pytest.fixture(scope="module")
def sweeps():
    """Per fixture: the model, the airflow optimum, cold coupled solves and the chained sweep."""
    out = {}
    for name, (_, limits) in SWEEPS.items():
        m = _model(name)
        air = solve_airflow(m)
        cold = {lim: solve_coupled(m, lim) for lim in limits}
        out[name] = (m, air, cold, pareto_sweep(m, limits))
    return out


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1)
def test_three_tangents_gap_on_dense_grid():
    t0 = time.perf_counter()
    ts = fit_tangents(25.0, 3)
    d = np.linspace(0.0, 25.0, 100_000)
    gap = np.max(level_increase(d) - linearized_increase(d, ts))
    elapsed = time.perf_counter() - t0
    assert len(ts) == 3
    assert np.all(level_increase(d) - linearized_increase(d, ts) >= -1e-12)   # tangents never overshoot
    assert gap <= 0.11
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2

@pytest.mark.criterion(2)
def test_solver_matches_exhaustive_oracle():
    t0 = time.perf_counter()
    eco = default_econ()
    feasible, checked = 0, 0
    for seed in itertools.count():
        if feasible >= 20:
            break
        assert seed < 200, "instance generator produced too few feasible instances"
        g, cat, opts = random_instance(seed)
        slots = sum(e.slot in ("fan_station", "vfc", "silencer") for e in g.edges.values())
        assert slots <= 8 and len(g.scenario_ids) <= 2
        free = solve_coupled(build_model(g, cat, eco, noise_limits=1000.0, options=opts), math.inf, tol=1e-4)
        lim = 40.0 if free.design is None else free.max_room_dba - float(np.random.default_rng(seed).uniform(0, 2.5))
        m = build_model(g, cat, eco, noise_limits=lim, options=opts)
        sol = solve_coupled(m, tol=1e-4)
        ref, _ = Oracle(g, cat, eco, opts, {r: lim for r in g.rooms}).run()
        checked += 1
        if math.isinf(ref):
            assert sol.design is None and sol.status == "infeasible", f"seed {seed}"
            continue
        assert sol.status == "optimal", f"seed {seed}"
        assert abs(sol.objective - ref) <= 5e-3 * ref, f"seed {seed}: {sol.objective} vs {ref}"
        _verify(m, sol)
        feasible += 1
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------- 3

@pytest.mark.criterion(3)
@pytest.mark.parametrize("name", list(SWEEPS))
def test_airflow_is_never_dearer_than_coupled(sweeps, name):
    m, air, cold, _ = sweeps[name]
    _verify(name, air)
    for lim, sol in cold.items():
        if sol.design is not None:
            _verify(name, sol)
            assert air.objective <= sol.objective * (1 + REL)


@pytest.mark.criterion(3)
@pytest.mark.parametrize("name", list(SWEEPS))
def test_looser_limit_is_never_dearer(sweeps, name):
    _, _, cold, _ = sweeps[name]
    feas = [(lim, s.objective) for lim, s in cold.items() if s.design is not None]
    assert len(feas) >= 2
    for (l1, c1), (l2, c2) in itertools.combinations(feas, 2):
        assert l1 > l2
        assert c1 <= c2 * (1 + REL)
    # infeasibility propagates to tighter limits
    lims = list(cold)
    for a, b in zip(lims, lims[1:]):
        if cold[a].design is None:
            assert cold[b].design is None


@pytest.mark.criterion(3)
@pytest.mark.parametrize("name", list(SWEEPS))
def test_holistic_is_never_dearer_than_sequential(sweeps, name):
    m, _, cold, _ = sweeps[name]
    for lim, hol in cold.items():
        seq = solve_sequential(m, lim)
        if seq.design is None:
            assert seq.status in ("infeasible_pinned", "infeasible")
            continue
        _verify(name, seq)
        assert hol.design is not None
        assert hol.objective <= seq.objective * (1 + REL)


# ---------------------------------------------------------------- 4

@pytest.mark.criterion(4)
@pytest.mark.parametrize("name", list(SWEEPS))
def test_warm_start_equals_cold(sweeps, name):
    m, _, cold, front = sweeps[name]
    by_limit = {pt["limit"]: pt for pt in front.points}
    for lim, c in cold.items():
        if c.design is None:
            assert front.infeasible is not None and front.infeasible["limit"] >= lim
            continue
        warm = by_limit.get(lim)
        if warm is None:
            # the chained sweep reused a looser optimum that already met this limit
            warm = next(pt for pt in front.points if pt["limit"] >= lim and pt["abscissa_dba"] <= lim + 1e-6)
        assert warm["objective"] == pytest.approx(c.objective, rel=1e-6)
        prev = solve_coupled(m, lim + 4.0)
        chained = solve_coupled(m, lim, lower_bound=prev.objective)
        assert chained.objective == pytest.approx(c.objective, rel=1e-6)


# ---------------------------------------------------------------- 5

@pytest.mark.criterion(5)
def test_case_study_model_size_ratio():
    g, cat, eco = case_study_fixture()
    assert len(g.rooms) == 7
    slots = [e.slot for e in g.edges.values()]
    assert slots.count("fixed_chain") == 19
    assert sum(s in ("fan_station", "vfc", "silencer") for s in slots) == 19
    coupled = build_model(g, cat, eco).counts()
    air = build_model(g, cat, eco, options=Options(mode="airflow_only")).counts()
    assert coupled["variables"] >= 10 * air["variables"]
    assert coupled["constraints"] >= 10 * air["constraints"]


# ---------------------------------------------------------------- 6

@pytest.mark.criterion(6)
def test_holistic_prefers_cheaper_quiet_fan_without_silencer():
    g, cat, eco = tradeoff_fixture()
    m = build_model(g, cat, eco)
    hol, seq = solve_coupled(m), solve_sequential(m)
    for s in (hol, seq):
        assert s.status == "optimal"
        _verify("tradeoff", s)
    (hf,), (sf,) = hol.purchases["fan_stations"]["FS"], seq.purchases["fan_stations"]["FS"]
    line = lambda f: cat.fan_lines[f["line"]]
    cost = lambda f: fan_cost(f["diameter_m"], line(f), cat.stations["st"].clad)
    assert cost(hf) < cost(sf)

    def power(f, q, P):
        sz = line(f).size(f["diameter_m"])
        kind = {"line": line(f), "D": f["diameter_m"], "qlo": sz.flow_m3s[0], "qhi": sz.flow_m3s[1],
                "dplo": sz.pressure_pa[0], "dphi": sz.pressure_pa[1], "pohi": sz.power_w[1]}
        return float(_fan_power(kind, np.array([q]), P)[0][0])

    # less efficient: more shaft power at the same duty points
    for q, P in ((1.0, 450.0), (0.7, 220.0)):
        assert power(hf, q, P) > power(sf, q, P)
    assert hol.purchases["silencers"]["S-central"] is None
    assert seq.purchases["silencers"]["S-central"] is not None
    assert hol.energy > seq.energy
    assert hol.objective <= 0.95 * seq.objective


@pytest.mark.criterion(6)
def test_silencer_bought_only_below_threshold_limit():
    g, cat, eco = mini_fixture()
    m = build_model(g, cat, eco)
    bought = {}
    for lim in (72.0, 66.0, 62.0, 60.0, 56.0, 52.0, 50.0):
        sol = solve_coupled(m, lim)
        assert sol.status == "optimal"
        _verify("mini", sol)
        bought[lim] = sol.purchases["silencers"]["sil"] is not None
    flags = list(bought.values())
    assert not flags[0] and flags[-1]
    k = flags.index(True)
    assert all(flags[k:]) and not any(flags[:k])


# ---------------------------------------------------------------- 7

def _power_total(spec, conv):
    return float(10 * mp.log10(mp.fsum(mp.power(10, (mp.mpf(s) + mp.mpf(c) + mp.mpf(w)) / 10)
                                      for s, c, w in zip(spec, conv, A_WEIGHTS_DB))))


@pytest.mark.criterion(7)
def test_a_weighted_total_against_power_sum():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        spec = rng.uniform(-20.0, 130.0, 8)
        conv = rng.uniform(-15.0, 10.0, 8)
        worst = max(worst, abs(a_weighted_total(spec, conv) - _power_total(spec, conv)))
    assert worst <= 1e-9


class _Table:
    def __init__(self, table):
        self.table = table

    def edge_acoustics(self, eid, scenario):
        return self.table[eid]


@pytest.mark.criterion(7)
def test_propagate_path_against_manual_composition():
    rng = np.random.default_rng(7)
    for k in range(1, 6):
        nb = NetBuilder([("s1", 1.0)], name="p")
        nb.junction("a")
        nb.edge("fs", "src", "a", "fan_station", "st")
        prev = "a"
        nb.room("r", {"s1": 1.0}, limit=40.0)
        for i in range(k):
            nxt = "r" if i == k - 1 else f"j{i}"
            if nxt != "r":
                nb.junction(nxt)
            nb.edge(f"e{i}", prev, nxt, "fixed_chain", loss=1.0)
            prev = nxt
        g = nb.graph()
        fan = rng.uniform(60, 95, 8)
        table = {"fs": EdgeAcoustics("fan_station", fan_noises=(fan,), active=True)}
        manual = fan.copy()
        for i in range(k):
            d, n = rng.uniform(0, 8, 8), rng.uniform(10, 70, 8)
            table[f"e{i}"] = EdgeAcoustics("fixed_chain", d, n, active=True)
            manual = component_transfer(manual, d, n)
        tr = propagate_path(g, "r", "s1", _Table(table))
        assert np.max(np.abs(tr.rows[-1].level_out - manual)) <= 1e-9
        conv = conversion_airborne(g.nodes["r"].acoustics)
        assert abs(tr.room_dba - _power_total(manual, [conv] * 8)) <= 1e-9


@pytest.mark.criterion(7)
def test_a_weights_match_table():
    assert A_WEIGHTS_DB == (-25.2, -15.6, -8.4, -3.1, 0.0, 1.2, 0.9, -1.1)
    assert repr(A_WEIGHTS_DB).encode() == b"(-25.2, -15.6, -8.4, -3.1, 0.0, 1.2, 0.9, -1.1)"


# ---------------------------------------------------------------- 8

def _close(x, ref):
    return abs(x - ref) <= 1e-12 * max(1.0, abs(ref))


def _mp_annuity(Z, T):
    Z = mp.mpf(Z)
    return (Z - 1) / (1 - Z ** (-T))


def _mp_pv(R, Z):
    R, Z = mp.mpf(R), mp.mpf(Z)
    return (1 - R / Z) / (Z - R)


def _mp_replacement(T_use, T_dep, R, Z):
    q = mp.mpf(R) / mp.mpf(Z)
    n = T_use // T_dep - (1 if T_use % T_dep == 0 else 0)
    return mp.fsum(q ** (T_dep * i) for i in range(1, n + 1))


def _mp_residual(T_use, T_dep, R, Z):
    return mp.mpf(T_use % T_dep) / T_dep * mp.mpf(R) ** (T_dep * (T_use // T_dep)) / mp.mpf(Z) ** T_use


@pytest.mark.criterion(8)
def test_economics_against_arbitrary_precision():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        Z = float(rng.uniform(1.005, 1.25))
        R = float(rng.uniform(0.95, 1.1))
        if abs(R - Z) < 1e-3:
            R = Z - 0.01
        T = int(rng.integers(1, 60))
        T_use, T_dep = int(rng.integers(1, 50)), int(rng.integers(1, 30))
        assert _close(annuity_factor(Z, T), float(_mp_annuity(Z, T)))
        assert _close(present_value_factor(R, Z), float(_mp_pv(R, Z)))
        assert _close(replacement_investment(T_use, T_dep, R, Z), float(_mp_replacement(T_use, T_dep, R, Z)))
        assert _close(residual_value(T_use, T_dep, R, Z), float(_mp_residual(T_use, T_dep, R, Z)))


@pytest.mark.criterion(8)
def test_economics_degenerate_cases_are_exact():
    for T_dep in range(12, 40):
        assert replacement_investment(12, T_dep, 1.03, 1.07) == 0.0
    for T_use, T_dep in [(12, 12), (12, 6), (12, 4), (30, 10), (30, 15), (20, 1)]:
        assert residual_value(T_use, T_dep, 1.03, 1.07) == 0.0


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9)
@pytest.mark.parametrize("name", list(SWEEPS))
def test_every_solution_verifies(sweeps, name):
    m, air, cold, front = sweeps[name]
    _verify(name, air)
    for sol in list(cold.values()) + [pt["solution"] for pt in front.points]:
        if sol.design is not None:
            _verify(name, sol)
        else:
            assert sol.certificate


@pytest.mark.criterion(9)
def test_airflow_only_builds_verify():
    for name in SWEEPS:
        m = _model(name, options=Options(mode="airflow_only"))
        sol = solve_airflow(m)
        assert sol.status == "optimal"
        _verify(name, sol)


# ---------------------------------------------------------------- 10

@pytest.mark.criterion(10)
def test_case_study_solves_within_budget():
    g, cat, eco = case_study_fixture()
    m = build_model(g, cat, eco)
    t0 = time.perf_counter()
    sol = solve_coupled(m, tol=1e-3, time_budget=600.0)
    elapsed = time.perf_counter() - t0
    assert sol.status == "optimal"
    assert sol.gap <= 1e-3
    assert elapsed <= 600.0
    _verify(m, sol)
