"""Octave-band level arithmetic and the source-path-receiver room model.

Levels are plain dB values in numpy arrays of length 8.  Silence is the
finite floor ``FLOOR`` (-300 dB); anything at or below it carries no power.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import fsolve, minimize

FLOOR = -300.0
N_BANDS = 8

# octave bands in Hz (lower, upper) and their A-weighting in dB
BAND_EDGES_HZ = (
    (45, 88),
    (88, 177),
    (177, 354),
    (354, 707),
    (707, 1414),
    (1414, 2828),
    (2828, 5657),
    (5657, 11314),
)
A_WEIGHTS_DB = (-25.2, -15.6, -8.4, -3.1, 0.0, 1.2, 0.9, -1.1)
A_WEIGHTS = np.array(A_WEIGHTS_DB)
BAND_LABELS = ("63", "125", "250", "500", "1k", "2k", "4k", "8k")

LOG2_DB = 10.0 * math.log10(2.0)


class AcousticsError(ValueError):
    pass


class ConsistencyError(AcousticsError):
    """Raised when a design operates a component it did not purchase."""


def spectrum(values) -> np.ndarray:
    """Coerce to an 8-band float array, clipping at the floor."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(N_BANDS, float(arr))
    if arr.shape[-1] != N_BANDS:
        raise AcousticsError(f"expected {N_BANDS} octave bands, got {arr.shape[-1]}")
    return np.maximum(arr, FLOOR)


def floor_spectrum() -> np.ndarray:
    return np.full(N_BANDS, FLOOR)


def level_add(a, b):
    """Energetic sum of two levels; works elementwise on arrays.

    Values at or below the floor are treated as silence, so ``a ⊕ FLOOR == a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    out = hi + 10.0 * np.log10(1.0 + 10.0 ** ((lo - hi) / 10.0))
    out = np.where(lo <= FLOOR, hi, out)
    out = np.maximum(out, FLOOR)
    if out.ndim == 0:
        return float(out)
    return out


def level_sum(levels, axis=0):
    """Energetic sum along ``axis`` with floor handling."""
    arr = np.asarray(levels, dtype=float)
    if arr.shape[axis] == 0:
        shape = list(arr.shape)
        del shape[axis]
        return np.full(shape, FLOOR) if shape else FLOOR
    hi = np.max(arr, axis=axis, keepdims=True)
    safe_hi = np.where(hi <= FLOOR, 0.0, hi)
    pw = np.where(arr <= FLOOR, 0.0, 10.0 ** ((arr - safe_hi) / 10.0))
    tot = np.sum(pw, axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(tot > 0, safe_hi + 10.0 * np.log10(np.where(tot > 0, tot, 1.0)), FLOOR)
    out = np.squeeze(np.maximum(out, FLOOR), axis=axis)
    if out.ndim == 0:
        return float(out)
    return out


def level_increase(d):
    """g(d) = 10 log10(1 + 10^(-d/10)), the gain of adding a level d dB below."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise AcousticsError("level difference must be nonnegative")
    out = 10.0 * np.log10(1.0 + 10.0 ** (-d / 10.0))
    return float(out) if out.ndim == 0 else out


def _g(d):
    return 10.0 * np.log10(1.0 + 10.0 ** (-np.asarray(d, dtype=float) / 10.0))


def _gprime(d):
    t = 10.0 ** (-np.asarray(d, dtype=float) / 10.0)
    return -t / (1.0 + t)


@dataclass(frozen=True)
class TangentSet:
    """Tangent lines ``m*d + b`` that under-approximate g on [0, d_max]."""

    points: tuple
    slopes: tuple
    intercepts: tuple
    d_max: float
    gap: float

    def __len__(self):
        return len(self.slopes)

    def evaluate(self, d):
        d = np.asarray(d, dtype=float)
        vals = np.max([m * d + b for m, b in zip(self.slopes, self.intercepts)], axis=0)
        out = np.maximum(vals, 0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {
            "points_db": list(self.points),
            "slopes": list(self.slopes),
            "intercepts_db": list(self.intercepts),
            "d_max_db": self.d_max,
            "max_gap_db": self.gap,
        }


def tangent_at(d0: float):
    m = float(_gprime(d0))
    return m, float(_g(d0) - m * d0)


def linearized_increase(d, tangents: TangentSet):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise AcousticsError("level difference must be nonnegative")
    return tangents.evaluate(d)


def _tangent_gap_dense(points, d_max, n=4001):
    grid = np.linspace(0.0, d_max, n)
    lines = [tangent_at(p) for p in points]
    approx = np.maximum(np.max([m * grid + b for m, b in lines], axis=0), 0.0)
    return float(np.max(_g(grid) - approx))


def _peak_gaps(points, d_max):
    """Local maxima of the gap: left end, tangent crossings, right end."""
    lines = [tangent_at(p) for p in points]
    peaks = []
    m0, b0 = lines[0]
    peaks.append(float(_g(0.0) - max(b0, 0.0)))
    for (m1, b1), (m2, b2) in zip(lines, lines[1:]):
        x = (b2 - b1) / (m1 - m2)
        peaks.append(float(_g(x) - max(m1 * x + b1, 0.0)))
    ml, bl = lines[-1]
    zero = -bl / ml
    x_end = min(zero, d_max)
    peaks.append(float(_g(x_end) - max(ml * x_end + bl, 0.0)))
    return np.array(peaks)


def fit_tangents(d_max: float = 25.0, count: int = 3) -> TangentSet:
    """Pick tangency points minimizing the worst under-approximation gap.

    A coarse minimax search is polished by solving for equal peak gaps
    (equioscillation); the reported gap comes from a 10^5-point grid.
    """
    if count < 2:
        raise AcousticsError("need at least two tangents")
    if d_max <= 0:
        raise AcousticsError("d_max must be positive")

    def worst(x):
        pts = np.sort(np.clip(x, 0.0, d_max))
        if np.any(np.diff(pts) < 1e-6):
            return 10.0
        return _tangent_gap_dense(pts, d_max)

    # geometric-ish spread gives a sane starting point
    x0 = np.linspace(0.0, 1.0, count + 2)[1:-1] ** 1.3 * d_max * 0.6
    res = minimize(worst, x0, method="Nelder-Mead",
                   options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 4000 * count})
    pts = np.sort(res.x)

    def eqs(v):
        p, e = v[:-1], v[-1]
        if np.any(np.diff(p) <= 0) or p[0] <= 0:
            return np.full(count + 1, 1e3)
        return _peak_gaps(p, d_max) - e

    sol, info, ier, _ = fsolve(eqs, np.append(pts, worst(pts)), full_output=True, xtol=1e-13)
    cand = np.sort(sol[:-1])
    if ier == 1 and worst(cand) <= worst(pts) + 1e-12:
        pts = cand
    grid = np.linspace(0.0, d_max, 100001)
    lines = [tangent_at(p) for p in pts]
    approx = np.maximum(np.max([m * grid + b for m, b in lines], axis=0), 0.0)
    gap = float(np.max(_g(grid) - approx))
    return TangentSet(
        points=tuple(float(p) for p in pts),
        slopes=tuple(m for m, _ in lines),
        intercepts=tuple(b for _, b in lines),
        d_max=float(d_max),
        gap=gap,
    )


def a_weighted_total(spec, conversion=0.0) -> float:
    """A-weighted total 10 log10 sum_f 10^(0.1 (l_f + conv_f + A_f))."""
    spec = np.asarray(spec, dtype=float)
    conv = np.broadcast_to(np.asarray(conversion, dtype=float), spec.shape)
    terms = np.where(spec <= FLOOR, FLOOR, spec + conv + A_WEIGHTS)
    return float(level_sum(terms))


@dataclass
class AirborneParams:
    directivity: float
    r_min_m: float
    absorption_area_m2: float
    n_outlets: int = 1


@dataclass
class RadiationParams:
    edge: str
    R_ia_db: float
    S_k_m2: float
    S_1_m2: float
    A_2_m2: float
    K_db: float = 0.0


def conversion_airborne(room: AirborneParams, r_ref: float = 1.0, a_ref: float = 1.0) -> float:
    """Sound power to pressure offset at the nearest seat."""
    if room.r_min_m <= 0 or room.absorption_area_m2 <= 0 or room.n_outlets < 1:
        raise AcousticsError("invalid room acoustics parameters")
    arg = (room.directivity * r_ref ** 2 / (4.0 * math.pi * room.r_min_m ** 2)
           + 4.0 * room.n_outlets * a_ref / room.absorption_area_m2)
    if arg <= 0:
        raise AcousticsError("nonpositive airborne conversion argument")
    return 10.0 * math.log10(arg)


def conversion_radiation(seg: RadiationParams, s_ref: float = 1.0) -> float:
    """Offset for sound radiated from a duct segment into the room."""
    if seg.S_k_m2 <= 0 or seg.S_1_m2 <= 0 or seg.A_2_m2 <= 0:
        raise AcousticsError("radiation areas must be positive")
    return seg.R_ia_db + 10.0 * math.log10(seg.S_k_m2 * s_ref / (seg.S_1_m2 * seg.A_2_m2)) + seg.K_db + 6.0


def component_transfer(l_in, damping, flow_noise):
    """Damp the incoming spectrum, then add the component's own noise."""
    l_in = np.asarray(l_in, dtype=float)
    damped = np.where(l_in <= FLOOR, FLOOR, np.maximum(l_in - np.asarray(damping, dtype=float), FLOOR))
    return level_add(damped, flow_noise)


def station_transfer(l_in, fan_noises: Sequence, rule: str = "max"):
    """Fan station output: max over active fans of l_in ⊕ fan noise.

    ``rule="sum"`` level-adds all fans instead (not the reference model).
    """
    l_in = np.asarray(l_in, dtype=float)
    if len(fan_noises) == 0:
        return l_in.copy()
    if rule == "max":
        return np.max([level_add(l_in, n) for n in fan_noises], axis=0)
    if rule == "sum":
        return level_add(l_in, level_sum(np.asarray(fan_noises, dtype=float), axis=0))
    raise AcousticsError(f"unknown fan noise rule {rule!r}")


def room_level(airborne_spec, airborne_conv, radiation=(), background=None) -> float:
    """Room dB(A): airborne path, radiation paths and background, power-summed.

    ``radiation`` is an iterable of ``(spectrum, conversion)`` pairs and
    ``background`` an optional pressure-level spectrum already in the room.
    """
    terms = [np.where(np.asarray(airborne_spec) <= FLOOR, FLOOR,
                      np.asarray(airborne_spec) + airborne_conv + A_WEIGHTS)]
    for spec_r, conv in radiation:
        spec_r = np.asarray(spec_r, dtype=float)
        terms.append(np.where(spec_r <= FLOOR, FLOOR, spec_r + conv + A_WEIGHTS))
    if background is not None:
        bg = np.asarray(background, dtype=float)
        terms.append(np.where(bg <= FLOOR, FLOOR, bg + A_WEIGHTS))
    return float(level_sum(np.concatenate(terms)))


@dataclass
class EdgeAcoustics:
    """What a design does to sound on one edge in one scenario."""

    kind: str
    damping: np.ndarray = field(default_factory=lambda: np.zeros(N_BANDS))
    flow_noise: np.ndarray = field(default_factory=floor_spectrum)
    fan_noises: tuple = ()
    active: bool = False
    purchased: bool = True


@dataclass
class TraceRow:
    edge: str
    kind: str
    level_in: np.ndarray
    damping: np.ndarray
    flow_noise: np.ndarray
    level_out: np.ndarray


@dataclass
class PathTrace:
    room: str
    scenario: str
    rows: list
    room_dba: float
    airborne_conversion_db: float


def apply_edge(l_in, ea: EdgeAcoustics, rule: str = "max"):
    if ea.active and not ea.purchased:
        raise ConsistencyError(f"{ea.kind} is active but not purchased")
    if not ea.active:
        return l_in.copy()
    if ea.kind == "fan_station":
        return station_transfer(l_in, ea.fan_noises, rule)
    return component_transfer(l_in, ea.damping, ea.flow_noise)


def propagate_path(graph, room: str, scenario: str, design, rule: str = "max") -> PathTrace:
    """Walk source -> room applying each edge's transfer and report the trace.

    ``design`` must provide ``edge_acoustics(edge_id, scenario) -> EdgeAcoustics``.
    """
    path = graph.path_to_room(room)
    level = floor_spectrum()
    rows = []
    out_at = {}
    for eid in path:
        ea = design.edge_acoustics(eid, scenario)
        new = apply_edge(level, ea, rule)
        if ea.kind == "fan_station" and ea.active:
            noise = (level_sum(np.asarray(ea.fan_noises), axis=0) if rule == "sum"
                     else np.max(np.asarray(ea.fan_noises), axis=0))
        else:
            noise = ea.flow_noise if ea.active else floor_spectrum()
        damp = ea.damping if ea.active else np.zeros(N_BANDS)
        rows.append(TraceRow(eid, ea.kind, level.copy(), np.asarray(damp, float).copy(),
                             np.asarray(noise, float).copy(), new.copy()))
        out_at[eid] = new
        level = new
    node = graph.nodes[room]
    conv = conversion_airborne(node.acoustics)
    rad = []
    for seg in node.radiation:
        if seg.edge not in out_at:
            raise AcousticsError(f"radiation edge {seg.edge} is not on the path to {room}")
        rad.append((out_at[seg.edge], conversion_radiation(seg)))
    total = room_level(level, conv, rad, node.background_db)
    return PathTrace(room, scenario, rows, total, conv)


def chain_levels(levels: Iterable[float]) -> float:
    """Left fold of exact level addition."""
    acc = FLOOR
    for v in levels:
        acc = level_add(acc, v)
    return acc
