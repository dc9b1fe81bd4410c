"""Per-room required flows and k-means reduction of hourly demand to a few
weighted load cases."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

FORMAT_VERSION = 1


class DemandError(ValueError):
    pass


@dataclass
class RoomDemand:
    id: str
    Q_build: float
    Q_person: float
    a_max: float
    occupancy: Sequence[float]
    Q_plan: Optional[float] = None

    def __post_init__(self):
        for name in ("Q_build", "Q_person", "a_max"):
            if getattr(self, name) < 0:
                raise DemandError(f"{self.id}: {name} must be nonnegative")
        if self.Q_plan is not None and self.Q_plan < 0:
            raise DemandError(f"{self.id}: Q_plan must be nonnegative")
        occ = np.asarray(self.occupancy, dtype=float)
        if np.any(occ < 0) or np.any(occ > 1):
            raise DemandError(f"{self.id}: occupancy fractions must lie in [0, 1]")


def required_flow(demand: RoomDemand, hour: int) -> float:
    """max(Q_build, a * a_max * Q_person, a * Q_plan) for the given hour."""
    if not 0 <= hour < len(demand.occupancy):
        raise DemandError(f"hour {hour} outside the occupancy profile")
    a = float(demand.occupancy[hour])
    q_plan = demand.Q_plan or 0.0
    return max(demand.Q_build, a * demand.a_max * demand.Q_person, a * q_plan)


def hourly_matrix(rooms: Sequence[RoomDemand]) -> np.ndarray:
    """Hours x rooms matrix of required flows."""
    hours = {len(r.occupancy) for r in rooms}
    if len(hours) != 1:
        raise DemandError("all occupancy profiles need the same length")
    h = hours.pop()
    return np.array([[required_flow(r, t) for r in rooms] for t in range(h)])


def _assign(X, C):
    d = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1), d


def _lloyd(X, k, rng, max_iter=300):
    n = X.shape[0]
    C = X[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    for _ in range(max_iter):
        new, d = _assign(X, C)
        # refill empty clusters from the worst-served points
        counts = np.bincount(new, minlength=k)
        if np.any(counts == 0):
            own = d[np.arange(n), new]
            order = np.argsort(-own, kind="stable")
            used = set()
            for j in np.flatnonzero(counts == 0):
                for i in order:
                    if i not in used and counts[new[i]] > 1:
                        used.add(i)
                        counts[new[i]] -= 1
                        new[i] = j
                        counts[j] += 1
                        break
        C = np.array([X[new == j].mean(axis=0) for j in range(k)])
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    sse = float(((X - C[labels]) ** 2).sum())
    return C, labels, sse


class LoadCaseClusterer(ClusterMixin, BaseEstimator):
    """k-means over hourly demand vectors with seeded restarts.

    After ``fit``: ``cluster_centers_`` (k x rooms), ``labels_``, ``weights_``
    (fraction of hours per cluster) and ``inertia_``.
    """

    def __init__(self, n_clusters=3, n_init=100, random_state=0, ceil_to_max=False, max_iter=300):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.random_state = random_state
        self.ceil_to_max = ceil_to_max
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=1)
        k = self.n_clusters
        if k < 1 or k > X.shape[0]:
            raise DemandError(f"need 1 <= k <= {X.shape[0]} clusters, got {k}")
        rng = np.random.default_rng(self.random_state)
        best = None
        for _ in range(self.n_init):
            C, labels, sse = _lloyd(X, k, rng, self.max_iter)
            if best is None or sse < best[2]:
                best = (C, labels, sse)
        C, labels, sse = best
        # canonical order: lexicographic on the centroids
        order = sorted(range(k), key=lambda j: tuple(C[j]))
        remap = np.empty(k, dtype=int)
        remap[order] = np.arange(k)
        labels = remap[labels]
        C = C[order]
        counts = np.bincount(labels, minlength=k)
        self.inertia_ = sse
        self.labels_ = labels
        self.means_ = C.copy()
        if self.ceil_to_max:
            C = np.array([X[labels == j].max(axis=0) for j in range(k)])
        self.cluster_centers_ = C
        self.weights_ = counts / X.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        return _assign(X, self.means_)[0]


@dataclass
class LoadCaseSet:
    room_ids: list
    flows: np.ndarray      # k x rooms
    weights: np.ndarray    # k
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "scenarios": [
                {"id": f"s{j + 1}", "weight": float(self.weights[j]),
                 "room_flows_m3s": {r: float(self.flows[j, i]) for i, r in enumerate(self.room_ids)}}
                for j in range(len(self.weights))],
            "hour_labels": [f"s{int(c) + 1}" for c in self.labels],
        }

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def cluster_load_cases(hourly_vectors, k: int, seed: int = 0, room_ids=None,
                       ceil_to_max: bool = False, n_init: int = 100) -> LoadCaseSet:
    X = np.asarray(hourly_vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    est = LoadCaseClusterer(n_clusters=k, n_init=n_init, random_state=seed, ceil_to_max=ceil_to_max).fit(X)
    ids = list(room_ids) if room_ids is not None else [f"r{i + 1}" for i in range(X.shape[1])]
    return LoadCaseSet(ids, est.cluster_centers_, est.weights_, est.labels_)


def load_demands(path) -> list:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DemandError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if data.get("format_version") != FORMAT_VERSION:
        raise DemandError(f"demand format_version must be {FORMAT_VERSION}")
    hours = int(data.get("operating_hours", 14))
    rooms = []
    try:
        for r in data["rooms"]:
            rd = RoomDemand(id=r["id"], Q_build=float(r["Q_build_m3s"]), Q_person=float(r["Q_person_m3s"]),
                            a_max=float(r["a_max"]), occupancy=list(r["occupancy"]),
                            Q_plan=r.get("Q_plan_m3s"))
            if len(rd.occupancy) != hours:
                raise DemandError(f"{rd.id}: profile has {len(rd.occupancy)} entries, expected {hours}")
            rooms.append(rd)
    except KeyError as exc:
        raise DemandError(f"missing field {exc}") from None
    return rooms
