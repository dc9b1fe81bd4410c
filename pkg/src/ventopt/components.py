"""Characteristic equations of fans, volume-flow controllers, silencers and
fixed duct elements, and the catalog that holds their coefficients."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .acoustics import FLOOR, N_BANDS, floor_spectrum, level_sum

FORMAT_VERSION = 1


class CatalogError(ValueError):
    pass


class RangeError(ValueError):
    """Operating point outside the component's validated range."""


class InfeasibleOperatingPoint(ValueError):
    pass


class GeometryError(ValueError):
    pass


def _arr(x, shape, name):
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise CatalogError(f"{name}: expected shape {shape}, got {a.shape}")
    return a


# ---------------------------------------------------------------- fans

@dataclass
class FanSize:
    diameter_m: float
    flow_m3s: tuple
    pressure_pa: tuple
    power_w: tuple


@dataclass
class FanLine:
    id: str
    alpha: np.ndarray   # (3,)
    beta: np.ndarray    # (5,)
    gamma: np.ndarray   # (4,)
    eps: np.ndarray     # (8, 4)
    speed_min: float
    sizes: list

    def size(self, D: float) -> FanSize:
        for s in self.sizes:
            if abs(s.diameter_m - D) <= 1e-12:
                return s
        raise CatalogError(f"fan line {self.id} has no diameter {D}")


def fan_pressure(q, n, D, line: FanLine, check: bool = False):
    """Pressure rise sum_m alpha_m q^(2-m) n^m D^(3m-4)."""
    if check:
        _check_fan_range(q, n, D, line)
    a = line.alpha
    q = np.asarray(q, dtype=float)
    n = np.asarray(n, dtype=float)
    out = a[0] * q ** 2 * D ** -4 + a[1] * q * n * D ** -1 + a[2] * n ** 2 * D ** 2
    return float(out) if out.ndim == 0 else out


def fan_power(q, n, D, line: FanLine, check: bool = False):
    """Electric power sum_m beta_m q^(3-m) n^m D^(3m-4) + beta_4."""
    if check:
        _check_fan_range(q, n, D, line)
    b = line.beta
    q = np.asarray(q, dtype=float)
    n = np.asarray(n, dtype=float)
    out = (b[0] * q ** 3 * D ** -4 + b[1] * q ** 2 * n * D ** -1
           + b[2] * q * n ** 2 * D ** 2 + b[3] * n ** 3 * D ** 5 + b[4])
    return float(out) if out.ndim == 0 else out


def fan_cost(D, line: FanLine, clad: bool) -> float:
    g = line.gamma
    return float(g[0] * D + g[1] + (1.0 if clad else 0.0) * (g[2] * D + g[3]))


def fan_flow_noise(q, dp, n, D, line: FanLine) -> np.ndarray:
    """Octave sound power of a fan at flow q, pressure rise dp and speed n."""
    if q <= 0 or dp <= 0:
        raise RangeError("fan noise needs positive flow and pressure")
    e = line.eps
    return (10.0 * math.log10(q) + 20.0 * math.log10(dp)
            + e[:, 0] * n + e[:, 1] * n ** 2 + e[:, 2] * D + e[:, 3])


def _check_fan_range(q, n, D, line):
    sz = line.size(D)
    tol = 1e-9
    q = np.asarray(q, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(q < sz.flow_m3s[0] - tol) or np.any(q > sz.flow_m3s[1] + tol):
        raise RangeError(f"flow outside [{sz.flow_m3s[0]}, {sz.flow_m3s[1]}] for {line.id}/{D}")
    if np.any(n < line.speed_min - tol) or np.any(n > 1.0 + tol):
        raise RangeError(f"speed outside [{line.speed_min}, 1] for {line.id}")


def _quadratic_roots(a, b, c):
    if a == 0:
        if b == 0:
            return []
        return [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    # numerically stable pair
    qv = -0.5 * (b + math.copysign(sq, b)) if b != 0 else -0.5 * sq
    r = [qv / a]
    if qv != 0:
        r.append(c / qv)
    else:
        r.append(-r[0])
    return sorted(r)


def fan_speed_for(q, dp_target, D, line: FanLine, speed_min: Optional[float] = None) -> float:
    """Smallest speed in [speed_min, 1] giving the target pressure rise."""
    lo = line.speed_min if speed_min is None else speed_min
    al = line.alpha
    a = al[2] * D ** 2
    b = al[1] * q / D
    c = al[0] * q ** 2 * D ** -4 - dp_target
    tol = 1e-12
    for r in _quadratic_roots(a, b, c):
        if lo - tol <= r <= 1.0 + tol:
            return min(max(r, lo), 1.0)
    raise InfeasibleOperatingPoint(
        f"no speed in [{lo}, 1] reaches {dp_target} Pa at q={q} for {line.id}/{D}")


def fan_speed_array(q, dp_target, D, line: FanLine, speed_min: float):
    """Vectorized speed inversion; NaN where no admissible root exists."""
    q = np.asarray(q, dtype=float)
    al = line.alpha
    a = al[2] * D ** 2
    b = al[1] * q / D
    c = al[0] * q ** 2 * D ** -4 - dp_target
    tol = 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        if a == 0:
            r1 = np.where(b != 0, -c / np.where(b != 0, b, 1.0), np.nan)
            r2 = np.full_like(r1, np.nan)
        else:
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            sgn = np.where(b >= 0, 1.0, -1.0)
            qv = -0.5 * (b + sgn * sq)
            ra = qv / a
            rb = np.where(qv != 0, c / np.where(qv != 0, qv, 1.0), -ra)
            r1 = np.minimum(ra, rb)
            r2 = np.maximum(ra, rb)
    ok1 = (r1 >= speed_min - tol) & (r1 <= 1.0 + tol)
    ok2 = (r2 >= speed_min - tol) & (r2 <= 1.0 + tol)
    out = np.where(ok1, r1, np.where(ok2, r2, np.nan))
    return np.clip(out, speed_min, 1.0)


# ---------------------------------------------------------------- stations

@dataclass
class FanCandidate:
    line: str
    diameter_m: float
    copies: int = 1


@dataclass
class FanStationSpec:
    id: str
    n_max: int
    candidates: list
    clad: bool = False


# ---------------------------------------------------------------- VFC

@dataclass
class VfcSpec:
    id: str
    height_m: float
    width_m: float
    gamma: np.ndarray   # (3,)
    eps: np.ndarray     # (8, 6)
    pressure_pa: tuple
    clad: bool = False
    must_purchase: bool = False

    @property
    def area(self):
        return self.height_m * self.width_m


def vfc_flow_noise(Q, dp, spec: VfcSpec, check: bool = True) -> np.ndarray:
    if check and dp != 0 and not (spec.pressure_pa[0] - 1e-9 <= dp <= spec.pressure_pa[1] + 1e-9):
        raise RangeError(f"VFC pressure {dp} outside {spec.pressure_pa}")
    hb = spec.area
    e = spec.eps
    return (e[:, 0] * dp + e[:, 1] * Q ** 2 / hb ** 2 + e[:, 2] * Q / hb
            + e[:, 3] * hb + e[:, 4] * math.sqrt(hb) + e[:, 5])


def vfc_cost(spec: VfcSpec) -> float:
    g = spec.gamma
    return float(g[0] * spec.area + g[1] + (1.0 if spec.clad else 0.0) * g[2])


# ---------------------------------------------------------------- silencers

@dataclass
class SilencerSpec:
    id: str
    height_m: float
    width_m: float
    splitter_m: float
    length_m: tuple
    splitters: tuple
    alpha: np.ndarray   # (3,)
    gamma: np.ndarray   # (4,)
    delta: np.ndarray   # (8, 8)
    eps: np.ndarray     # (8, 5)

    def __post_init__(self):
        if self.width_m - self.splitter_m * self.splitters[1] <= 0:
            raise CatalogError(f"silencer {self.id}: no open area at maximum splitter count")
        if self.length_m[0] <= 0 or self.length_m[0] > self.length_m[1]:
            raise CatalogError(f"silencer {self.id}: bad length bounds")
        if self.splitters[0] < 1 or self.splitters[0] > self.splitters[1]:
            raise CatalogError(f"silencer {self.id}: bad splitter bounds")

    @property
    def gap_bounds(self):
        n_lo, n_hi = self.splitters
        return (self.width_m / n_hi - self.splitter_m, self.width_m / n_lo - self.splitter_m)


def silencer_geometry(spec: SilencerSpec, n: int, Q: float) -> dict:
    open_w = spec.width_m - spec.splitter_m * n
    if n < 1 or open_w <= 0:
        raise GeometryError(f"silencer {spec.id}: no open area with {n} splitters")
    s = spec.width_m / n - spec.splitter_m
    v = Q / (open_w * spec.height_m)
    return {"s": s, "v": v}


def silencer_pressure_loss(v, s, l, spec: SilencerSpec) -> float:
    if s <= 0:
        raise GeometryError("gap width must be positive")
    a = spec.alpha
    return a[0] * v ** 2 + a[1] * v ** 2 / s + a[2] * v ** 2 * l / s


def silencer_cost(n, l, spec: SilencerSpec) -> float:
    g = spec.gamma
    return float(g[0] * n + g[1] * l * spec.width_m + g[2] * spec.height_m * spec.width_m + g[3])


def silencer_damping(n, l, spec: SilencerSpec) -> np.ndarray:
    d = spec.delta
    B = spec.width_m
    return (d[:, 0] * n ** 2 + d[:, 1] * B ** 2 * n + d[:, 2] * l * n + d[:, 3] * l * B
            + d[:, 4] * n + d[:, 5] * l + d[:, 6] * B + d[:, 7])


def silencer_flow_noise(v, spec: SilencerSpec) -> np.ndarray:
    e = spec.eps
    hb = spec.height_m * spec.width_m
    return e[:, 0] * v ** 2 + e[:, 1] * v + e[:, 2] * hb + e[:, 3] * hb ** 2 + e[:, 4]


# ---------------------------------------------------------------- fixed chains

@dataclass
class FixedElement:
    damping_db: np.ndarray
    flow_noise_db: np.ndarray

    def __post_init__(self):
        self.damping_db = np.asarray(self.damping_db, dtype=float)
        self.flow_noise_db = np.maximum(np.asarray(self.flow_noise_db, dtype=float), FLOOR)
        if self.damping_db.shape != (N_BANDS,) or self.flow_noise_db.shape != (N_BANDS,):
            raise CatalogError("fixed element spectra need 8 bands")
        if np.any(self.damping_db < 0):
            raise CatalogError("fixed element damping must be nonnegative")


def combine_fixed_chain(chain) -> dict:
    """Collapse elements in flow order into one damping and one noise spectrum."""
    if len(chain) == 0:
        return {"total_flow_noise": floor_spectrum(), "total_damping": np.zeros(N_BANDS)}
    damp = np.array([e.damping_db for e in chain])
    noise = np.array([e.flow_noise_db for e in chain])
    downstream = np.cumsum(damp[::-1], axis=0)[::-1] - damp
    reduced = np.where(noise <= FLOOR, FLOOR, noise - downstream)
    return {"total_flow_noise": np.asarray(level_sum(reduced, axis=0)),
            "total_damping": damp.sum(axis=0)}


# ---------------------------------------------------------------- catalog

@dataclass
class Catalog:
    fan_lines: dict = field(default_factory=dict)
    stations: dict = field(default_factory=dict)
    vfcs: dict = field(default_factory=dict)
    silencers: dict = field(default_factory=dict)
    note: str = ""

    def validate(self):
        for st in self.stations.values():
            if st.n_max < 1:
                raise CatalogError(f"station {st.id}: n_max must be at least 1")
            if not st.candidates:
                raise CatalogError(f"station {st.id}: no fan candidates")
            for c in st.candidates:
                if c.line not in self.fan_lines:
                    raise CatalogError(f"station {st.id}: unknown fan line {c.line}")
                self.fan_lines[c.line].size(c.diameter_m)
                if c.copies < 1:
                    raise CatalogError(f"station {st.id}: copies must be at least 1")
        for v in self.vfcs.values():
            if v.height_m <= 0 or v.width_m <= 0:
                raise CatalogError(f"vfc {v.id}: dimensions must be positive")
            lo, hi = v.pressure_pa
            if not (hi > lo >= 0):
                raise CatalogError(f"vfc {v.id}: need 0 <= lower pressure < upper pressure")
        return self

    def component_class(self, ref: str) -> str:
        if ref in self.stations:
            return "fan_station"
        if ref in self.vfcs:
            return "vfc"
        if ref in self.silencers:
            return "silencer"
        raise CatalogError(f"unknown component {ref!r}")

    # ---- serialization
    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "note": self.note,
            "fan_lines": {k: _fan_to_dict(v) for k, v in sorted(self.fan_lines.items())},
            "fan_stations": {k: {
                "n_max": v.n_max, "clad": v.clad,
                "candidates": [{"line": c.line, "diameter_m": c.diameter_m, "copies": c.copies}
                               for c in v.candidates]} for k, v in sorted(self.stations.items())},
            "vfcs": {k: {
                "height_m": v.height_m, "width_m": v.width_m, "cost": v.gamma.tolist(),
                "noise": v.eps.tolist(), "pressure_pa": list(v.pressure_pa), "clad": v.clad,
                "must_purchase": v.must_purchase} for k, v in sorted(self.vfcs.items())},
            "silencers": {k: {
                "height_m": s.height_m, "width_m": s.width_m, "splitter_m": s.splitter_m,
                "length_m": list(s.length_m), "splitters": list(s.splitters),
                "pressure": s.alpha.tolist(), "cost": s.gamma.tolist(),
                "damping": s.delta.tolist(), "noise": s.eps.tolist()}
                for k, s in sorted(self.silencers.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Catalog":
        if data.get("format_version") != FORMAT_VERSION:
            raise CatalogError(f"catalog format_version must be {FORMAT_VERSION}")
        cat = cls(note=data.get("note", ""))
        try:
            for k, v in data.get("fan_lines", {}).items():
                cat.fan_lines[k] = _fan_from_dict(k, v)
            for k, v in data.get("fan_stations", {}).items():
                cat.stations[k] = FanStationSpec(
                    id=k, n_max=int(v["n_max"]), clad=bool(v.get("clad", False)),
                    candidates=[FanCandidate(c["line"], float(c["diameter_m"]), int(c.get("copies", 1)))
                                for c in v["candidates"]])
            for k, v in data.get("vfcs", {}).items():
                cat.vfcs[k] = VfcSpec(
                    id=k, height_m=float(v["height_m"]), width_m=float(v["width_m"]),
                    gamma=_arr(v["cost"], (3,), f"vfc {k} cost"),
                    eps=_arr(v["noise"], (N_BANDS, 6), f"vfc {k} noise"),
                    pressure_pa=tuple(float(x) for x in v["pressure_pa"]),
                    clad=bool(v.get("clad", False)), must_purchase=bool(v.get("must_purchase", False)))
            for k, v in data.get("silencers", {}).items():
                cat.silencers[k] = SilencerSpec(
                    id=k, height_m=float(v["height_m"]), width_m=float(v["width_m"]),
                    splitter_m=float(v["splitter_m"]),
                    length_m=tuple(float(x) for x in v["length_m"]),
                    splitters=tuple(int(x) for x in v["splitters"]),
                    alpha=_arr(v["pressure"], (3,), f"silencer {k} pressure"),
                    gamma=_arr(v["cost"], (4,), f"silencer {k} cost"),
                    delta=_arr(v["damping"], (N_BANDS, 8), f"silencer {k} damping"),
                    eps=_arr(v["noise"], (N_BANDS, 5), f"silencer {k} noise"))
        except KeyError as exc:
            raise CatalogError(f"missing catalog field {exc}") from None
        return cat.validate()

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Catalog":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CatalogError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data)


def _fan_to_dict(f: FanLine):
    return {
        "pressure": f.alpha.tolist(), "power": f.beta.tolist(), "cost": f.gamma.tolist(),
        "noise": f.eps.tolist(), "speed_min": f.speed_min,
        "sizes": [{"diameter_m": s.diameter_m, "flow_m3s": list(s.flow_m3s),
                   "pressure_pa": list(s.pressure_pa), "power_w": list(s.power_w)} for s in f.sizes],
    }


def _fan_from_dict(k, v):
    line = FanLine(
        id=k, alpha=_arr(v["pressure"], (3,), f"fan {k} pressure"),
        beta=_arr(v["power"], (5,), f"fan {k} power"),
        gamma=_arr(v["cost"], (4,), f"fan {k} cost"),
        eps=_arr(v["noise"], (N_BANDS, 4), f"fan {k} noise"),
        speed_min=float(v.get("speed_min", 0.2)), sizes=[])
    if not 0 < line.speed_min < 1:
        raise CatalogError(f"fan {k}: speed_min must lie in (0, 1)")
    for s in v["sizes"]:
        fl = tuple(float(x) for x in s["flow_m3s"])
        if not 0 < fl[0] < fl[1]:
            raise CatalogError(f"fan {k}: flow bounds must satisfy 0 < lower < upper")
        D = float(s["diameter_m"])
        pr = s.get("pressure_pa")
        pw = s.get("power_w")
        if pr is None or pw is None:
            dpr, dpw = derived_fan_bounds(line, D, fl)
            pr = pr or dpr
            pw = pw or dpw
        line.sizes.append(FanSize(D, fl, tuple(float(x) for x in pr), tuple(float(x) for x in pw)))
    return line


def derived_fan_bounds(line: FanLine, D: float, flow):
    """Pressure and power envelope over the admissible (q, n) box."""
    qq, nn = np.meshgrid(np.linspace(flow[0], flow[1], 81), np.linspace(line.speed_min, 1.0, 81))
    dp = fan_pressure(qq, nn, D, line)
    po = fan_power(qq, nn, D, line)
    return (1.0, float(np.max(dp))), (min(0.0, float(np.min(po))), float(np.max(po)))
