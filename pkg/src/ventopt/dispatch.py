"""Operating a purchased fan set: choose active fans and flow split for the
least electric power at a given station pressure."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .acoustics import N_BANDS, floor_spectrum, level_sum
from .components import FanLine, fan_flow_noise, fan_power, fan_speed_array

_BIG = 1e30


@dataclass
class FanType:
    """One purchasable (product line, diameter) pair at a station."""

    index: int
    line: FanLine
    diameter_m: float
    copies: int
    q_lo: float
    q_hi: float
    dp_lo: float
    dp_hi: float
    po_lo: float
    po_hi: float
    cost: float

    @property
    def key(self):
        return (self.line.id, self.diameter_m)

    @property
    def n_lo(self):
        return self.line.speed_min

    @property
    def monotone(self) -> bool:
        """Pressure rises and power grows with speed for q, n >= 0."""
        a, b = self.line.alpha, self.line.beta
        return a[0] <= 0 and a[1] >= 0 and a[2] > 0 and b[1] >= 0 and b[2] >= 0 and b[3] >= 0

    @property
    def hydraulic_ok(self) -> bool:
        """Electric power never falls below the hydraulic power dp * q when dp >= 0.

        Sufficient condition: some c >= 0 with beta_m >= (1 + c) alpha_m for the
        three pressure terms, so po - dp q = c dp q + (nonnegative terms).
        """
        a, b = self.line.alpha, self.line.beta
        if b[3] < 0 or b[4] < 0:
            return False
        lo, hi = 0.0, np.inf
        for m in range(3):
            if a[m] > 0:
                hi = min(hi, b[m] / a[m] - 1.0)
            elif a[m] < 0:
                lo = max(lo, b[m] / a[m] - 1.0)
            elif b[m] < 0:
                return False
        return lo <= hi

    def noise_floor_terms(self) -> np.ndarray:
        """Per band min over n in [0, 1] of eps0 n + eps1 n^2, plus eps2 D + eps3."""
        e = self.line.eps
        cands = [np.zeros(N_BANDS), e[:, 0] + e[:, 1]]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(e[:, 1] > 0, -e[:, 0] / (2 * e[:, 1]), -1.0)
        inside = (v > 0) & (v < 1)
        cands.append(np.where(inside, e[:, 0] * v + e[:, 1] * v ** 2, np.inf))
        return np.min(cands, axis=0) + e[:, 2] * self.diameter_m + e[:, 3]

    def noise_speed_monotone(self) -> bool:
        e = self.line.eps
        return bool(np.all(e[:, 0] >= 0) and np.all(e[:, 0] + 2 * e[:, 1] >= 0))


@dataclass
class FanOp:
    type_index: int
    copy: int
    flow_m3s: float
    speed: float
    pressure_pa: float
    power_w: float
    noise_db: np.ndarray


@dataclass
class Dispatch:
    power: float
    fans: list = field(default_factory=list)
    noise: np.ndarray = field(default_factory=floor_spectrum)


class StationDispatcher:
    """Caches dispatch results for one station's fan types."""

    def __init__(self, types, rule: str = "max", grid: int = 201):
        self.types = list(types)
        self.rule = rule
        self.grid = grid
        self._subset_cache = {}
        self._cache = {}

    # ---- single fan, vectorized over q
    def _power(self, t: FanType, q, P, relaxed):
        q = np.asarray(q, dtype=float)
        n = fan_speed_array(q, P, t.diameter_m, t.line, 0.0 if relaxed else t.n_lo)
        tol = 1e-12 * max(1.0, t.q_hi)
        ok = ~np.isnan(n) & (q >= t.q_lo - tol) & (q <= t.q_hi + tol)
        if P > t.dp_hi * (1 + 1e-12) or (not relaxed and P < t.dp_lo * (1 - 1e-12)):
            ok &= False
        n = np.where(ok, n, 0.0)
        po = fan_power(q, n, t.diameter_m, t.line)
        ok &= po <= t.po_hi + 1e-9 * max(1.0, abs(t.po_hi))
        return np.where(ok, po, np.inf), n

    def _total(self, active, qs, Q, P, relaxed):
        """Power of a split given all but the last flow (columns of qs)."""
        last = Q - qs.sum(axis=1)
        cols = [qs[:, i] for i in range(qs.shape[1])] + [last]
        tot = np.zeros(qs.shape[0])
        for ti, q in zip(active, cols):
            tot = tot + self._power(self.types[ti], q, P, relaxed)[0]
        return tot

    def _subset(self, active, Q, P, relaxed):
        key = (active, Q, P, relaxed)
        if key in self._subset_cache:
            return self._subset_cache[key]
        res = self._solve_subset(active, Q, P, relaxed)
        self._subset_cache[key] = res
        return res

    def _solve_subset(self, active, Q, P, relaxed):
        m = len(active)
        ts = [self.types[i] for i in active]
        if sum(t.q_lo for t in ts) > Q * (1 + 1e-12) or sum(t.q_hi for t in ts) < Q * (1 - 1e-12):
            return None
        if m == 1:
            po, _ = self._power(ts[0], Q, P, relaxed)
            return None if not np.isfinite(po) else (float(po), (Q,))
        lo = [max(t.q_lo, Q - sum(u.q_hi for j, u in enumerate(ts) if j != i)) for i, t in enumerate(ts)]
        hi = [min(t.q_hi, Q - sum(u.q_lo for j, u in enumerate(ts) if j != i)) for i, t in enumerate(ts)]
        if m == 2:
            a, b = lo[0], hi[0]
            if a > b:
                return None
            g = np.linspace(a, b, self.grid)
            f = self._total(active, g[:, None], Q, P, relaxed)
            k = int(np.argmin(f))
            if not np.isfinite(f[k]):
                return None
            best_q, best_f = float(g[k]), float(f[k])
            left, right = g[max(k - 1, 0)], g[min(k + 1, len(g) - 1)]
            if right > left:
                obj = lambda x: min(float(self._total(active, np.array([[x]]), Q, P, relaxed)[0]), _BIG)
                r = minimize_scalar(obj, bounds=(left, right), method="bounded",
                                    options={"xatol": 1e-12 * max(1.0, Q)})
                if r.fun < best_f:
                    best_q, best_f = float(r.x), float(r.fun)
            return best_f, (best_q, Q - best_q)
        # three or more fans: grid over all but the last flow, then a local polish
        pts = max(5, int(round(20000 ** (1.0 / (m - 1)))))
        axes = [np.linspace(lo[i], hi[i], pts) for i in range(m - 1)]
        mesh = np.array(list(itertools.product(*axes)))
        f = self._total(active, mesh, Q, P, relaxed)
        k = int(np.argmin(f))
        if not np.isfinite(f[k]):
            return None
        x0 = mesh[k]
        best_x, best_f = x0, float(f[k])

        def obj(x):
            v = float(self._total(active, np.asarray(x)[None, :], Q, P, relaxed)[0])
            return v if np.isfinite(v) else _BIG

        r = minimize(obj, x0, method="Nelder-Mead",
                     options={"xatol": 1e-12 * max(1.0, Q), "fatol": 1e-12, "maxiter": 400 * m})
        if r.fun < best_f:
            best_x, best_f = r.x, float(r.fun)
        qs = tuple(float(v) for v in best_x) + (float(Q - np.sum(best_x)),)
        return best_f, qs

    def subsets(self, counts):
        ranges = [range(c + 1) for c in counts]
        subs = [a for a in itertools.product(*ranges) if sum(a) > 0]
        subs.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
        return subs

    def dispatch(self, counts, Q, P, relaxed=False):
        """Least-power operation of the purchased fan multiset ``counts``."""
        key = (tuple(counts), Q, P, relaxed)
        if key in self._cache:
            return self._cache[key]
        best = None
        if Q > 0:
            for sub in self.subsets(counts):
                active = tuple(i for i, a in enumerate(sub) for _ in range(a))
                r = self._subset(active, Q, P, relaxed)
                if r is None:
                    continue
                if best is None or r[0] < best[0][0] - 1e-12 * max(1.0, abs(best[0][0])):
                    best = (r, active)
        out = None
        if best is not None:
            (power, qs), active = best
            fans = []
            used = {}
            for ti, q in zip(active, qs):
                t = self.types[ti]
                copy = used.get(ti, 0)
                used[ti] = copy + 1
                n = float(fan_speed_array(q, P, t.diameter_m, t.line, 0.0 if relaxed else t.n_lo))
                po = float(fan_power(q, n, t.diameter_m, t.line))
                noise = fan_flow_noise(q, P, n, t.diameter_m, t.line) if (q > 0 and P > 0) \
                    else floor_spectrum()
                fans.append(FanOp(ti, copy, float(q), n, float(P), po, noise))
            noises = np.array([f.noise_db for f in fans])
            if self.rule == "sum":
                noise = np.asarray(level_sum(noises, axis=0))
            else:
                noise = np.max(noises, axis=0)
            out = Dispatch(float(sum(f.power_w for f in fans)), fans, noise)
        self._cache[key] = out
        return out

    def energy_lower(self, counts, Q, P_lo) -> float:
        """Power lower bound valid for every station pressure >= P_lo.

        Needs the monotonicity certificate of all fan types involved; returns
        ``inf`` when even the relaxed problem is infeasible.
        """
        if Q <= 0:
            return 0.0
        if P_lo <= 0 or not all(self.types[i].monotone for i, c in enumerate(counts) if c):
            return 0.0
        d = self.dispatch(counts, Q, P_lo, relaxed=True)
        return np.inf if d is None else d.power

    def noise_lower(self, counts, Q, P_lo) -> np.ndarray:
        """Per band lower bound on the station's noise for pressures >= P_lo."""
        if Q <= 0:
            return floor_spectrum()
        if P_lo <= 0:
            return floor_spectrum()
        used = [i for i, c in enumerate(counts) if c]
        total = sum(counts)
        if total == 1:
            t = self.types[used[0]]
            if t.monotone and t.noise_speed_monotone():
                n = float(fan_speed_array(Q, P_lo, t.diameter_m, t.line, 0.0))
                if np.isfinite(n):
                    return fan_flow_noise(Q, P_lo, n, t.diameter_m, t.line)
        base = 10.0 * np.log10(Q / total) + 20.0 * np.log10(P_lo)
        return base + np.min([self.types[i].noise_floor_terms() for i in used], axis=0)
