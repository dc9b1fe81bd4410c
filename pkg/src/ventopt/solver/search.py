"""Best-first branch and bound over fan sets, silencer choices and silencer
length intervals, with exact evaluation of complete designs."""
from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..acoustics import FLOOR, N_BANDS
from ..problem import NOISE_TOL, CompiledProblem, Design, Evaluation

OFF = (-1,)
_PQ_RATIO = math.log1p(1e-3)
_SAFE = 1.0 - 1e-9


@dataclass
class SearchResult:
    status: str                  # optimal | budget | infeasible
    design: Optional[Design]
    evaluation: Optional[Evaluation]
    objective: float
    lower_bound: float
    gap: float
    nodes: int
    leaves: int
    elapsed_s: float
    certificate: Optional[dict] = None
    stats: dict = field(default_factory=dict)


def _quantize(P):
    """Largest point of a fine geometric grid not above P (P > 0)."""
    k = math.floor(math.log(P) / _PQ_RATIO)
    q = math.exp(k * _PQ_RATIO)
    while q > P:
        k -= 1
        q = math.exp(k * _PQ_RATIO)
    return q


class BranchAndBound:
    """One search over a compiled problem.

    ``limits`` overrides the per-room noise limits (``inf`` disables a room);
    ``airflow`` fixes every silencer off and skips acoustics.
    """

    def __init__(self, problem: CompiledProblem, limits=None, airflow=False, tol=1e-3,
                 time_budget=None, lower_bound=None, station_pins=None, vfc_pins=None,
                 sil_fixings=None):
        self.p = problem
        self.airflow = airflow or not problem.coupled
        lim = problem.limits if limits is None else np.broadcast_to(np.asarray(limits, float), (problem.R,))
        self.limits = np.array(lim, dtype=float)
        self.acoustic = not self.airflow and bool(np.any(np.isfinite(self.limits)))
        self.tol = float(tol)
        self.time_budget = time_budget
        self.warm_lb = lower_bound
        self.station_pins = dict(station_pins or {})
        for st in problem.stations:
            if st.pinned is not None:
                self.station_pins.setdefault(st.index, st.pinned)
        self.vfc_pins = {v.index: v.pinned for v in problem.vfcs if v.pinned is not None}
        self.vfc_pins.update(vfc_pins or {})
        # k -> OFF or (option, lo index, hi index) forced at the root
        self.sil_fixings = dict(sil_fixings or {})
        self._e_cache = {}
        self._n_cache = {}
        self._eval_cache = {}
        self._prepare()

    # ------------------------------------------------------------ static data
    def _prepare(self):
        p = self.p
        K = len(p.sils)
        self.K = K
        self.sil_order = sorted(range(K), key=lambda k: (-len(p.sils[k].rooms), p.epos[p.sils[k].edge]))
        self.sil_rank = {k: i for i, k in enumerate(self.sil_order)}
        # pairwise path differences per station: slack(r) = max_r' R_r' - R_r
        self.st_rooms = [np.array(st.rooms, dtype=int) for st in p.stations]
        self.st_diff = []
        for rooms in self.st_rooms:
            A = p.room_sil[rooms]                       # (n, K)
            M = A[None, :, :] - A[:, None, :]           # M[r, r', k] = a_r'k - a_rk
            R0 = p.R0[rooms]                            # (n, S)
            base = R0[None, :, :] - R0[:, None, :]      # (n, n, S)
            self.st_diff.append((np.maximum(M, 0.0), np.maximum(-M, 0.0), base))
        self.has_vfc = p.room_vfc >= 0
        self.hyd_ok = [[t.hydraulic_ok for t in st.types] for st in p.stations]
        self.mono = [[t.monotone for t in st.types] for st in p.stations]
        # silencer option data at length-grid endpoints
        self.sil_cost_min = []
        for k, sl in enumerate(p.sils):
            l0 = sl.lengths[0]
            self.sil_cost_min.append(min(o.c0 + o.c1 * l0 for o in sl.options))
        self.sil_dp_max = [np.max([o.dp0 + o.dp1 * sl.lengths[-1] for o in sl.options] +
                                  [o.dp0 + o.dp1 * sl.lengths[0] for o in sl.options], axis=0)
                           for sl in p.sils]
        self.sil_damp_max = [np.max([np.maximum(o.d0 + o.d1 * sl.lengths[0], o.d0 + o.d1 * sl.lengths[-1])
                                     for o in sl.options], axis=0) for sl in p.sils]
        self.sil_damp_max = [np.maximum(d, 0.0) for d in self.sil_damp_max]
        self.sil_strong = []
        for sl in p.sils:
            tot = [float(np.sum(np.maximum(o.d0 + o.d1 * sl.lengths[-1], 0.0))) for o in sl.options]
            self.sil_strong.append(int(np.argmax(tot)))

    # ------------------------------------------------------------ bound pieces
    def _sil_ranges(self, sil):
        p = self.p
        S = p.S
        dplo = np.zeros((self.K, S))
        dphi = np.zeros((self.K, S))
        for k, c in enumerate(sil):
            if self.airflow or c == OFF:
                continue
            sl = p.sils[k]
            if c is None:
                dphi[k] = self.sil_dp_max[k]
                continue
            o = sl.options[c[0]]
            a = o.dp0 + o.dp1 * sl.lengths[c[1]]
            b = o.dp0 + o.dp1 * sl.lengths[c[2]]
            dplo[k] = np.minimum(a, b)
            dphi[k] = np.maximum(a, b)
        return dplo, dphi

    def _energy_lower(self, st, ci, si, P):
        """w-free electric power lower bound for config ci at pressure >= P."""
        if st.Q[si] <= 0 or P <= 0:
            return 0.0
        Pq = _quantize(P)
        key = (st.index, ci, si, Pq)
        v = self._e_cache.get(key)
        if v is not None:
            return v
        cfg = st.configs[ci]
        used = [i for i, c in enumerate(cfg) if c]
        val = 0.0
        if all(self.mono[st.index][i] for i in used):
            val = st.dispatcher.energy_lower(cfg, float(st.Q[si]), Pq) * _SAFE
        if all(self.hyd_ok[st.index][i] for i in used):
            val = max(val, Pq * float(st.Q[si]) * _SAFE)
        self._e_cache[key] = val
        return val

    def _noise_lower(self, st, ci, si, P):
        if st.Q[si] <= 0 or P <= 0:
            return np.full(N_BANDS, FLOOR)
        Pq = _quantize(P)
        key = (st.index, ci, si, Pq)
        v = self._n_cache.get(key)
        if v is None:
            v = st.dispatcher.noise_lower(st.configs[ci], float(st.Q[si]), Pq)
            v = np.where(v <= FLOOR, FLOOR, v - 1e-9)
            self._n_cache[key] = v
        return v

    def _station_choices(self, st, configs):
        pin = self.station_pins.get(st.index)
        if pin is not None:
            return [pin]
        return list(range(len(st.configs)))

    def bound(self, node):
        """Lower bound on the objective below ``node``; ``inf`` when pruned."""
        cfgs, sil = node
        p = self.p
        S = p.S
        dplo, dphi = self._sil_ranges(sil)
        Rlo = p.R0 + p.room_sil @ dplo
        Rhi = p.R0 + p.room_sil @ dphi
        Plo = np.zeros((len(p.stations), S))
        sig_lo = np.zeros((p.R, S))
        sig_hi = np.zeros((p.R, S))
        for st in p.stations:
            rooms = self.st_rooms[st.index]
            Plo[st.index] = np.where(st.Q > 0, np.max(Rlo[rooms], axis=0), 0.0)
            Mp, Mn, base = self.st_diff[st.index]
            lo = base + np.einsum("abk,ks->abs", Mp, dplo) - np.einsum("abk,ks->abs", Mn, dphi)
            hi = base + np.einsum("abk,ks->abs", Mp, dphi) - np.einsum("abk,ks->abs", Mn, dplo)
            sig_lo[rooms] = np.where(st.Q > 0, lo.max(axis=1), 0.0)
            sig_hi[rooms] = np.where(st.Q > 0, hi.max(axis=1), 0.0)
        tolp = 1e-9 * max(1.0, float(np.abs(Rhi).max()) if Rhi.size else 1.0)
        # pressure feasibility
        if np.any(sig_hi < -tolp):
            return math.inf, None
        bad = (~self.has_vfc)[:, None] & (sig_lo > tolp)
        if np.any(bad):
            return math.inf, None
        vfc_rng = []
        vfc_forced = np.zeros(len(p.vfcs), dtype=bool)
        for v in p.vfcs:
            lo = np.max(sig_lo[v.rooms], axis=0)
            hi = np.min(sig_hi[v.rooms], axis=0)
            dlo, dhi = v.spec.pressure_pa
            if np.any(lo > hi + tolp) or np.any(lo > dhi + tolp):
                return math.inf, None
            act = lo > tolp
            if np.any(act & (hi < dlo - tolp)):
                return math.inf, None
            if act.any():
                if self.vfc_pins.get(v.index) is False:
                    return math.inf, None
                vfc_forced[v.index] = True
            vfc_rng.append((act, np.maximum(lo, dlo), np.minimum(hi, dhi)))
        # costs
        cost = 0.0
        for st in p.stations:
            c = cfgs[st.index]
            choices = [c] if c is not None else self._station_choices(st, None)
            best = math.inf
            for ci in choices:
                val = p.w_inv["fan_station"] * st.config_costs[ci]
                e = 0.0
                for si in range(S):
                    e += p.w[si] * self._energy_lower(st, ci, si, Plo[st.index, si])
                val += p.w_energy * e
                best = min(best, val)
            if not math.isfinite(best):
                return math.inf, None
            cost += best
        vcost = sum(v.cost for v in p.vfcs
                    if vfc_forced[v.index] or v.spec.must_purchase or self.vfc_pins.get(v.index))
        cost += p.w_inv["vfc"] * vcost
        scost = 0.0
        for k, c in enumerate(sil):
            if c is None or c == OFF:
                continue
            sl = p.sils[k]
            o = sl.options[c[0]]
            scost += min(o.c0 + o.c1 * sl.lengths[c[1]], o.c0 + o.c1 * sl.lengths[c[2]])
        cost += p.w_inv["silencer"] * scost
        info = {"Plo": Plo, "vfc_rng": vfc_rng}
        if not self.acoustic:
            return cost, info
        # optimistic acoustics
        D, N = self._optimistic_edges(cfgs, sil, Plo, vfc_rng, undecided_on=True)
        excess = self._excess(D, N)
        if np.any(excess > NOISE_TOL + 1e-9):
            return math.inf, None
        if any(c is None for c in sil):
            cost += p.w_inv["silencer"] * self._needed_silencer_cost(cfgs, sil, Plo, vfc_rng)
        return cost, info

    def _optimistic_edges(self, cfgs, sil, Plo, vfc_rng, undecided_on):
        p = self.p
        D = p.fixed_D.copy()
        N = p.fixed_N.copy()
        for st in p.stations:
            i = p.epos[st.edge]
            c = cfgs[st.index]
            choices = [c] if c is not None else self._station_choices(st, None)
            for si in range(p.S):
                N[i, si] = np.min([self._noise_lower(st, ci, si, Plo[st.index, si]) for ci in choices], axis=0)
        for v, (act, lo, hi) in zip(p.vfcs, vfc_rng):
            i = p.epos[v.edge]
            for si in np.flatnonzero(act):
                at_lo = v.noise0[si] + v.slope * lo[si]
                at_hi = v.noise0[si] + v.slope * hi[si]
                N[i, si] = np.minimum(at_lo, at_hi)
        for k, c in enumerate(sil):
            if c == OFF:
                continue
            i = p.epos[p.sils[k].edge]
            if c is None:
                if undecided_on:
                    D[i] = self.sil_damp_max[k]
                continue
            sl = p.sils[k]
            o = sl.options[c[0]]
            D[i] = np.maximum(np.maximum(o.d0 + o.d1 * sl.lengths[c[1]], o.d0 + o.d1 * sl.lengths[c[2]]), 0.0)
            N[i] = o.noise
        return D, N

    def _excess(self, D, N):
        L = self.p.propagate(D, N)
        return self.p.room_levels(L) - self.limits[:, None]

    def _needed_silencer_cost(self, cfgs, sil, Plo, vfc_rng):
        """Rooms that stay too loud with every undecided silencer off need a
        purchase among their undecided path silencers; disjoint such rooms
        add up."""
        D, N = self._optimistic_edges(cfgs, sil, Plo, vfc_rng, undecided_on=False)
        excess = self._excess(D, N)
        loud = np.flatnonzero(np.max(excess, axis=1) > NOISE_TOL + 1e-9)
        needs = []
        for r in loud:
            ks = [k for k in np.flatnonzero(self.p.room_sil[r]) if sil[k] is None]
            if not ks:
                continue
            needs.append((min(self.sil_cost_min[k] for k in ks), frozenset(ks)))
        needs.sort(key=lambda t: -t[0])
        used = set()
        total = 0.0
        for c, ks in needs:
            if used.isdisjoint(ks):
                used |= ks
                total += c
        return total * _SAFE

    # ------------------------------------------------------------ evaluation
    def evaluate(self, design: Design) -> Evaluation:
        key = design.key()
        ev = self._eval_cache.get(key)
        if ev is None:
            ev = self.p.evaluate(design, with_acoustics=self.acoustic, vfc_pins=self.vfc_pins,
                                 limits=self.limits)
            self._eval_cache[key] = ev
        return ev

    def _tiebreak(self, design, ev):
        return (self.p.count_purchases(design, ev), round(self.p.total_length(design), 9),
                design.configs, tuple((-1, -1) if c is None else c for c in design.silencers))

    def _offer(self, design):
        ev = self.evaluate(design)
        self.leaves += 1
        if not ev.feasible:
            if self.acoustic and ev.room_dba is not None:
                self.best_level = min(self.best_level, float(np.max(ev.room_dba)))
            return False
        obj = ev.objective
        if self.inc is None:
            better = True
        else:
            scale = 1e-9 * max(1.0, abs(self.inc_obj))
            better = obj < self.inc_obj - scale or (
                abs(obj - self.inc_obj) <= scale and self._tiebreak(design, ev) < self._tiebreak(self.inc, self.inc_ev))
        if better:
            self.inc, self.inc_ev, self.inc_obj = design, ev, obj
        return better

    def _improve(self, design):
        """Shorten purchased silencers one at a time while the design stays feasible."""
        cur = design
        for _ in range(2):
            changed = False
            for k in self.sil_order:
                c = cur.silencers[k]
                if c is None:
                    continue
                off = Design(cur.configs, cur.silencers[:k] + (None,) + cur.silencers[k + 1:])
                self._offer(off)
                if self.evaluate(off).feasible:
                    cur, changed = off, True
                    continue
                lo, hi = 0, c[1]
                while lo < hi:
                    mid = (lo + hi) // 2
                    cand = Design(cur.configs, cur.silencers[:k] + ((c[0], mid),) + cur.silencers[k + 1:])
                    if self.evaluate(cand).feasible:
                        hi = mid
                    else:
                        lo = mid + 1
                if lo < c[1]:
                    cand = Design(cur.configs, cur.silencers[:k] + ((c[0], lo),) + cur.silencers[k + 1:])
                    self._offer(cand)
                    if self.evaluate(cand).feasible:
                        cur, changed = cand, True
            if not changed:
                break

    def _complete(self, node):
        cfgs, sil = node
        if any(c is None for c in cfgs):
            return
        decided = tuple(None if (c is None or c == OFF) else (c[0], c[2]) for c in sil)
        cands = [Design(cfgs, decided)]
        if self.acoustic:
            cands.append(Design(cfgs, tuple(
                (self.sil_strong[k], len(self.p.sils[k].lengths) - 1) if c is None else decided[k]
                for k, c in enumerate(sil))))
        for d in cands:
            prev = self.inc
            self._offer(d)
            if self.inc is d and self.inc is not prev and self.acoustic:
                self._improve(d)

    # ------------------------------------------------------------ branching
    def _children(self, node):
        cfgs, sil = node
        p = self.p
        for st in p.stations:
            if cfgs[st.index] is None:
                out = []
                for ci in self._station_choices(st, None):
                    out.append((cfgs[:st.index] + (ci,) + cfgs[st.index + 1:], sil))
                return out
        for k in self.sil_order:
            if sil[k] is None:
                n_len = len(p.sils[k].lengths)
                opts = [OFF] + [(j, 0, n_len - 1) for j in range(len(p.sils[k].options))]
                return [(cfgs, sil[:k] + (o,) + sil[k + 1:]) for o in opts]
        widest, width = None, 0
        for k in self.sil_order:
            c = sil[k]
            if c != OFF and c[2] - c[1] > width:
                widest, width = k, c[2] - c[1]
        if widest is None:
            return []
        j, lo, hi = sil[widest]
        mid = (lo + hi) // 2
        return [(cfgs, sil[:widest] + ((j, lo, mid),) + sil[widest + 1:]),
                (cfgs, sil[:widest] + ((j, mid + 1, hi),) + sil[widest + 1:])]

    def _root(self):
        p = self.p
        return (tuple(None for _ in p.stations),
                tuple(OFF if self.airflow else self.sil_fixings.get(k) for k in range(len(p.sils))))

    @staticmethod
    def _is_leaf(node):
        cfgs, sil = node
        return all(c is not None for c in cfgs) and all(c == OFF or (c is not None and c[1] == c[2]) for c in sil)

    @staticmethod
    def _design(node):
        cfgs, sil = node
        return Design(cfgs, tuple(None if c == OFF else (c[0], c[1]) for c in sil))

    # ------------------------------------------------------------ main loop
    def run(self) -> SearchResult:
        t0 = time.perf_counter()
        self.inc, self.inc_ev, self.inc_obj = None, None, math.inf
        self.best_level = math.inf
        self.leaves = 0
        nodes = 0
        root = self._root()
        pruned_lb = math.inf
        counter = itertools.count()
        heap = []
        b, _ = self.bound(root)
        if math.isfinite(b):
            heapq.heappush(heap, (b, 0, next(counter), root))
        status = "optimal"
        warm = self.warm_lb if self.warm_lb is not None else -math.inf
        while heap:
            if self.time_budget is not None and time.perf_counter() - t0 > self.time_budget:
                status = "budget"
                break
            b, negdepth, _, node = heapq.heappop(heap)
            if self.inc is not None:
                if self.inc_obj <= max(warm, b) * (1 + 1e-9) + 1e-12:
                    # nothing left can beat the incumbent by more than round-off
                    pruned_lb = min(pruned_lb, b)
                    heap.clear()
                    break
                if b >= self.inc_obj * (1 - self.tol) - 1e-12 * abs(self.inc_obj):
                    pruned_lb = min(pruned_lb, b)
                    heap.clear()
                    break
            nodes += 1
            if self._is_leaf(node):
                self._offer(self._design(node))
                continue
            self._complete(node)
            for child in self._children(node):
                cb, _ = self.bound(child)
                if not math.isfinite(cb):
                    continue
                if self.inc is not None and cb >= self.inc_obj * (1 - self.tol) - 1e-12 * abs(self.inc_obj):
                    pruned_lb = min(pruned_lb, cb)
                    continue
                heapq.heappush(heap, (cb, negdepth - 1, next(counter), child))
        open_lb = min((h[0] for h in heap), default=math.inf)
        elapsed = time.perf_counter() - t0
        if self.inc is None:
            st = "budget" if status == "budget" else "infeasible"
            cert = None
            if st == "infeasible":
                cert = self._certificate() if self.acoustic else self._airflow_certificate()
            return SearchResult(st, None, None, math.inf, min(open_lb, pruned_lb), math.inf, nodes,
                                self.leaves, elapsed, cert)
        lb = min(open_lb, pruned_lb, self.inc_obj)
        if warm > lb:
            lb = min(warm, self.inc_obj)
        gap = max(0.0, (self.inc_obj - lb) / max(abs(self.inc_obj), 1e-12))
        if status == "budget" and gap <= self.tol:
            status = "optimal"
        return SearchResult(status, self.inc, self.inc_ev, self.inc_obj, lb, gap, nodes, self.leaves, elapsed)

    def _certificate(self):
        """Best max room level seen on any hydraulically feasible design plus a
        proven lower bound from the optimistic root propagation."""
        p = self.p
        best = self.best_level
        choices = [self._station_choices(st, None) for st in p.stations]
        for frac in (1.0, 0.75, 0.5, 0.25, 0.0):
            sils = tuple(
                self.sil_fixings.get(k) if k in self.sil_fixings else
                (self.sil_strong[k], int(round(frac * (len(sl.lengths) - 1))))
                for k, sl in enumerate(p.sils))
            sils = tuple(None if c == OFF else (c if len(c) == 2 else (c[0], c[2])) for c in sils)
            for cfgs in itertools.product(*choices):
                ev = self.evaluate(Design(tuple(cfgs), sils))
                if ev.room_dba is not None:
                    best = min(best, float(np.max(ev.room_dba)))
        root = self._root()
        dplo, _ = self._sil_ranges(root[1])
        Plo = np.zeros((len(p.stations), p.S))
        Rlo = p.R0 + p.room_sil @ dplo
        for st in p.stations:
            Plo[st.index] = np.where(st.Q > 0, np.max(Rlo[self.st_rooms[st.index]], axis=0), 0.0)
        D, N = self._optimistic_edges(root[0], root[1], Plo, [(np.zeros(p.S, bool), 0, 0)] * len(p.vfcs),
                                      undecided_on=True)
        lower = float(np.max(p.room_levels(p.propagate(D, N))))
        return {"best_found_max_room_dba": None if not math.isfinite(best) else best,
                "max_room_dba_lower_bound": lower}

    def _airflow_certificate(self):
        p = self.p
        reasons = []
        choices = [self._station_choices(st, None) for st in p.stations]
        for cfgs in itertools.product(*choices):
            ev = self.evaluate(Design(tuple(cfgs), tuple(None for _ in p.sils)))
            if not ev.feasible:
                reasons.append(ev.reason)
        binding = [r for r in reasons if "scenario" in r]
        return {"reason": (binding or reasons or ["no admissible design"])[0], "designs_checked": len(reasons)}
