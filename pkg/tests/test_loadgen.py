import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ventopt.loadgen import (DemandError, LoadCaseClusterer, RoomDemand, cluster_load_cases, hourly_matrix,
                             load_demands, required_flow)


def test_required_flow_examples():
    r = RoomDemand("a", Q_build=100, Q_person=30, a_max=10, occupancy=[0.5], Q_plan=400)
    assert required_flow(r, 0) == 200
    assert required_flow(RoomDemand("b", 100, 30, 10, [0.0], 400), 0) == 100
    assert required_flow(RoomDemand("c", 100, 60, 2, [1.0]), 0) == 120
    with pytest.raises(DemandError):
        required_flow(r, 1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_required_flow_monotone(a, da, qb, qp, qpl, bump):
    lo = RoomDemand("x", qb, qp, 3.0, [a], qpl)
    hi_a = RoomDemand("x", qb, qp, 3.0, [min(1.0, a + da)], qpl)
    assert required_flow(hi_a, 0) >= required_flow(lo, 0)
    for kw in ({"Q_build": qb + bump}, {"Q_person": qp + bump}, {"Q_plan": qpl + bump}):
        args = dict(id="x", Q_build=qb, Q_person=qp, a_max=3.0, occupancy=[a], Q_plan=qpl)
        args.update(kw)
        assert required_flow(RoomDemand(**args), 0) >= required_flow(lo, 0)


def test_perfect_split():
    lc = cluster_load_cases(np.array([0, 0, 0, 1, 1, 1.0]), 2, seed=0)
    assert sorted(lc.flows[:, 0].tolist()) == [0.0, 1.0]
    assert lc.weights.tolist() == [0.5, 0.5]


def test_single_cluster_is_mean():
    X = np.random.default_rng(1).uniform(size=(14, 3))
    lc = cluster_load_cases(X, 1)
    assert np.allclose(lc.flows[0], X.mean(axis=0), atol=1e-15)
    assert lc.weights.tolist() == [1.0]


def _sse(X, labels, k):
    return sum(((X[labels == j] - X[labels == j].mean(axis=0)) ** 2).sum() for j in range(k) if np.any(labels == j))


def test_beats_random_assignments():
    rng = np.random.default_rng(5)
    X = rng.uniform(0.05, 0.4, size=(14, 7))
    est = LoadCaseClusterer(n_clusters=3, random_state=0).fit(X)
    best = _sse(X, est.labels_, 3)
    assert best == pytest.approx(est.inertia_, rel=1e-12)
    for _ in range(1000):
        lab = rng.integers(0, 3, size=14)
        assert best <= _sse(X, lab, 3) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_fixed_point_and_conservation(seed, k):
    X = np.random.default_rng(seed).uniform(0, 1, size=(14, 3))
    lc = cluster_load_cases(X, k, seed=seed, n_init=10)
    for j in range(k):
        assert np.allclose(lc.flows[j], X[lc.labels == j].mean(axis=0), atol=1e-12)
    assert np.allclose((lc.weights[:, None] * lc.flows).sum(axis=0), X.mean(axis=0), atol=1e-9)


def test_deterministic_serialization(tmp_path):
    X = np.random.default_rng(3).uniform(size=(14, 4))
    a = cluster_load_cases(X, 3, seed=11)
    b = cluster_load_cases(X, 3, seed=11)
    a.dump(tmp_path / "a.json")
    b.dump(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_ceil_to_max():
    X = np.array([[0.1], [0.2], [0.9], [1.0]])
    lc = cluster_load_cases(X, 2, ceil_to_max=True)
    assert sorted(lc.flows[:, 0].tolist()) == [0.2, 1.0]


def test_bad_k():
    with pytest.raises(DemandError):
        cluster_load_cases(np.ones((3, 2)), 4)


def test_demand_file(tmp_path):
    d = {"format_version": 1, "operating_hours": 2,
         "rooms": [{"id": "a", "Q_build_m3s": 0.1, "Q_person_m3s": 0.01, "a_max": 20, "occupancy": [0.2, 1.0]}]}
    p = tmp_path / "d.json"
    p.write_text(json.dumps(d))
    rooms = load_demands(p)
    assert hourly_matrix(rooms).tolist() == [[0.1], [0.2]]
    d["rooms"][0]["occupancy"] = [0.5]
    p.write_text(json.dumps(d))
    with pytest.raises(DemandError):
        load_demands(p)
