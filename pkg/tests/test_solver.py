import json
import math

import numpy as np
import pytest

from ventopt.modelbuild import build_model
from ventopt.network import NetworkGraph
from ventopt.problem import Options
from ventopt.samples import (NetBuilder, catalog, chain_fixture, default_econ, fan_line, mini_fixture, station,
                             tradeoff_fixture)
from ventopt.solver import (Solution, SolutionError, continuous_subproblem, hydraulic_lower_bound, pareto_sweep,
                            solve_airflow, solve_coupled, solve_sequential)


def _two_fan_chain(loss=200.0):
    nb = NetBuilder([("s1", 1.0)], name="pick")
    nb.junction("j1")
    nb.room("r1", {"s1": 1.0}, limit=80.0)
    nb.edge("fs", "src", "j1", "fan_station", "st")
    nb.edge("duct", "j1", "r1", "fixed_chain", loss=loss)
    lines = {
        "GOOD": fan_line((-100.0, 0.0, 500.0), eta=0.8, beta4=5.0, cost=(900.0, 100.0, 0.0, 0.0),
                         level=20.0, speed_min=0.2, sizes=((1.0, 0.2, 2.0),)),
        "BAD": fan_line((-100.0, 0.0, 500.0), eta=0.5, beta4=5.0, cost=(1500.0, 300.0, 0.0, 0.0),
                        level=20.0, speed_min=0.2, sizes=((1.0, 0.2, 2.0),)),
    }
    cat = catalog(lines, {"st": station([("GOOD", 1.0, 1), ("BAD", 1.0, 1)], n_max=1)})
    return nb.graph(), cat, default_econ()


@pytest.fixture(scope="module")
def mini():
    g, cat, eco = mini_fixture()
    return build_model(g, cat, eco, noise_limits=55.0)


def test_dominant_fan_is_chosen():
    g, cat, eco = _two_fan_chain()
    sol = solve_airflow(build_model(g, cat, eco, options=Options(mode="airflow_only")))
    assert sol.status == "optimal"
    assert sol.purchases["fan_stations"]["fs"] == [{"line": "GOOD", "diameter_m": 1.0}]


def test_pressure_beyond_fan_curves_is_infeasible():
    g, cat, eco = _two_fan_chain(loss=5000.0)
    sol = solve_airflow(build_model(g, cat, eco, options=Options(mode="airflow_only")))
    assert sol.status == "infeasible"
    assert sol.design is None and sol.certificate
    assert not sol.feasible


def test_unlimited_coupled_equals_airflow(mini):
    air = solve_airflow(mini, tol=1e-6)
    free = solve_coupled(mini, math.inf, tol=1e-6)
    assert free.objective == pytest.approx(air.objective, rel=1e-9)
    assert free.purchases["silencers"]["sil"] is None


def test_warm_start_matches_cold(mini):
    cold = solve_coupled(mini, 52.0, tol=1e-6)
    loose = solve_coupled(mini, 58.0, tol=1e-6)
    warm = solve_coupled(mini, 52.0, lower_bound=loose.objective, tol=1e-6)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-6)
    assert warm.purchases == cold.purchases


def test_pareto_cost_never_rises_as_limit_loosens(mini):
    front = pareto_sweep(mini, [62.0, 58.0, 54.0, 50.0])
    obj = [pt["objective"] for pt in front.points]
    assert len(obj) >= 4
    assert all(a <= b * (1 + 1e-9) for a, b in zip(obj, obj[1:]))
    ab = [pt["abscissa_dba"] for pt in front.points]
    assert all(a >= b - 1e-9 for a, b in zip(ab, ab[1:]))
    d = front.to_dict()
    assert d["format_version"] == 1 and len(d["points"]) == len(obj)
    assert front.to_csv().splitlines()[0] == "limit_dba,invest_eur,energy_eur,total_eur"


def test_pareto_rejects_increasing_limits(mini):
    with pytest.raises(ValueError):
        pareto_sweep(mini, [50.0, 55.0])


@pytest.mark.parametrize("limit", [75.0, 70.0, 68.0])
def test_sequential_never_beats_holistic(limit):
    g, cat, eco = tradeoff_fixture(limit)
    m = build_model(g, cat, eco)
    hol = solve_coupled(m)
    seq = solve_sequential(m)
    assert hol.design is not None
    if seq.design is not None:
        assert hol.objective <= seq.objective * (1 + 1e-9)
    else:
        assert seq.status == "infeasible_pinned"


def test_hydraulic_lower_bound_examples():
    g = NetworkGraph.from_dict({
        "format_version": 1,
        "scenarios": [{"id": "s1", "weight": 0.5, "room_flows_m3s": {"a": 0.2, "b": 0.3}},
                      {"id": "s2", "weight": 0.5, "room_flows_m3s": {"a": 0.0, "b": 0.1}}],
        "nodes": [{"id": "src", "kind": "source"}, {"id": "j", "kind": "junction"},
                  {"id": "a", "kind": "room", "pressure_pa": {"s1": 30.0, "s2": 30.0}},
                  {"id": "b", "kind": "room", "pressure_pa": {"s1": 10.0, "s2": -5.0}}],
        "edges": [{"id": "in", "from": "src", "to": "j"}, {"id": "ea", "from": "j", "to": "a"},
                  {"id": "eb", "from": "j", "to": "b"}],
    })
    assert hydraulic_lower_bound(g) == pytest.approx([30.0 * 0.5, 30.0 * 0.1])
    assert hydraulic_lower_bound(g, eta_bar=0.5) == pytest.approx([7.5, 1.5])
    g0, _, _ = chain_fixture()
    assert hydraulic_lower_bound(g0) == pytest.approx([0.0])


def test_continuous_subproblem_reproduces_solution(mini):
    sol = solve_coupled(mini, tol=1e-6)
    sub = continuous_subproblem(sol.purchases, mini)
    assert sub["feasible"]
    assert sub["energy_eur"] == pytest.approx(sol.energy, rel=1e-9)
    assert sub["operations"] == sol.operations
    one = continuous_subproblem(sol.purchases, mini, scenarios=["s2"])
    assert list(one["operations"]) == ["s2"]


def test_continuous_subproblem_free_length(mini):
    sol = solve_coupled(mini, 50.0, tol=1e-6)
    top = json.loads(json.dumps(sol.purchases))
    top["silencers"]["sil"]["length_m"] = None
    sub = continuous_subproblem(top, mini, tol=1e-6)
    assert sub["feasible"]
    assert sub["silencer_lengths_m"]["sil"] <= sol.purchases["silencers"]["sil"]["length_m"] + 1e-9
    assert sub["error_bound"] <= 1e-6


def test_continuous_subproblem_rejects_bad_fans(mini):
    with pytest.raises(SolutionError):
        continuous_subproblem({"fan_stations": {"fs": [{"line": "NOPE", "diameter_m": 0.4}]}}, mini)


def _strip(sol):
    d = sol.to_dict()
    d["metadata"].pop("timestamp")
    return d


def test_repeat_solves_are_identical(mini):
    a = solve_coupled(mini, 52.0)
    b = solve_coupled(mini, 52.0)
    assert _strip(a) == _strip(b)


def test_solution_json_roundtrip(mini, tmp_path):
    sol = solve_coupled(mini, 52.0)
    sol.dump(tmp_path / "s.json")
    back = Solution.load(tmp_path / "s.json")
    assert back.to_json() == sol.to_json()
    assert back.max_room_dba == pytest.approx(sol.max_room_dba)
    (tmp_path / "bad.json").write_text('{"format_version": 1,\n "status": }')
    with pytest.raises(SolutionError, match="line 2"):
        Solution.load(tmp_path / "bad.json")


def test_infeasible_limit_has_certificate(mini):
    sol = solve_coupled(mini, 20.0)
    assert sol.status == "infeasible"
    assert sol.certificate
    assert math.isinf(sol.objective)


def test_tolerance_outside_range_is_rejected(mini):
    for tol in (0.0, 0.5):
        with pytest.raises(ValueError):
            solve_coupled(mini, 50.0, tol=tol)


def test_time_budget_returns_budget_or_optimal(mini):
    sol = solve_coupled(mini, 50.0, time_budget=1e-9, tol=1e-6)
    assert sol.status in ("budget", "optimal", "infeasible")
    if sol.design is not None:
        assert sol.objective >= sol.lower_bound - 1e-9
    assert np.isfinite(sol.lower_bound) or sol.status == "infeasible"
