"""Annuity-based life-cycle cost arithmetic."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence


class EconomicsError(ValueError):
    pass


@dataclass
class ComponentEconomics:
    """Depreciation period and yearly service/maintenance fractions."""

    T_dep_years: int
    F_S: float = 0.0
    F_M: float = 0.0


def _default_classes():
    fan = ComponentEconomics(T_dep_years=12, F_S=0.01, F_M=0.03)
    return {
        "fan_station": fan,
        # no separate data for VFCs: they inherit the fan figures
        "vfc": ComponentEconomics(fan.T_dep_years, fan.F_S, fan.F_M),
        "silencer": ComponentEconomics(T_dep_years=20, F_S=0.0, F_M=0.02),
    }


@dataclass
class EconomicParams:
    Z: float = 1.07
    C_E: float = 0.15  # EUR per kWh
    B_E: Optional[float] = 1.08
    B_MS: Optional[float] = 1.03
    R_E: Optional[float] = None
    R_MS: float = 1.03
    T_use_years: int = 12
    days_per_year: float = 250.0
    hours_per_day: float = 14.0
    T_use_hours: Optional[float] = None
    invest_multiplier: str = "years"  # or "one"
    classes: dict = field(default_factory=_default_classes)

    def __post_init__(self):
        if self.Z <= 1:
            raise EconomicsError("interest factor Z must exceed 1")
        if self.invest_multiplier not in ("years", "one"):
            raise EconomicsError("invest_multiplier must be 'years' or 'one'")
        for name, ce in self.classes.items():
            if ce.T_dep_years <= 0:
                raise EconomicsError(f"T_dep must be positive for {name}")

    @property
    def hours(self) -> float:
        if self.T_use_hours is not None:
            return float(self.T_use_hours)
        return self.T_use_years * self.days_per_year * self.hours_per_day

    @property
    def b_energy(self) -> float:
        # tabulated values win over the formula
        if self.B_E is not None:
            return self.B_E
        if self.R_E is None:
            raise EconomicsError("need B_E or R_E")
        return present_value_factor(self.R_E, self.Z)

    @property
    def b_maint(self) -> float:
        if self.B_MS is not None:
            return self.B_MS
        return present_value_factor(self.R_MS, self.Z)

    def to_dict(self):
        d = asdict(self)
        d["T_use_hours"] = self.hours
        return d

    @classmethod
    def from_dict(cls, data: Mapping):
        data = dict(data)
        data.pop("format_version", None)
        classes = _default_classes()
        for name, ce in (data.pop("classes", None) or {}).items():
            classes[name] = ComponentEconomics(**ce)
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - allowed
        if unknown:
            raise EconomicsError(f"unknown economic parameters: {sorted(unknown)}")
        return cls(classes=classes, **data)


def annuity_factor(Z: float, T_years: float) -> float:
    """A = (Z - 1) / (1 - Z^-T)."""
    if Z <= 1:
        raise EconomicsError("Z must exceed 1")
    if T_years < 1:
        raise EconomicsError("T must be at least 1")
    return (Z - 1.0) / (1.0 - Z ** (-T_years))


def present_value_factor(R: float, Z: float) -> float:
    """B = (1 - R/Z) / (Z - R)."""
    if R == Z:
        raise EconomicsError("price-change factor equals interest factor")
    return (1.0 - R / Z) / (Z - R)


def _split(T_use: int, T_dep: int):
    if T_dep < 1:
        raise EconomicsError("T_dep must be at least 1")
    return T_use // T_dep, T_use % T_dep


def replacement_investment(T_use_years: int, T_dep: int, R_MS: float, Z: float) -> float:
    """Present value of the replacements bought during the use period."""
    t_div, rem = _split(T_use_years, T_dep)
    delta = 1 if rem == 0 else 0
    q = R_MS / Z
    return sum(q ** (T_dep * i) for i in range(1, t_div - delta + 1))


def residual_value(T_use_years: int, T_dep: int, R_MS: float, Z: float) -> float:
    """Present value of what is left of the last replacement at the end."""
    t_div, rem = _split(T_use_years, T_dep)
    return (rem / T_dep) * R_MS ** (T_dep * t_div) / Z ** T_use_years


def annuity_invest_factor(params: EconomicParams, component_class: str) -> float:
    """A_F = A (1 + B_MS (F_S + F_M)) (1 + I_tot - R_W)."""
    try:
        ce = params.classes[component_class]
    except KeyError:
        raise EconomicsError(f"unknown component class {component_class!r}") from None
    A = annuity_factor(params.Z, params.T_use_years)
    i_tot = replacement_investment(params.T_use_years, ce.T_dep_years, params.R_MS, params.Z)
    r_w = residual_value(params.T_use_years, ce.T_dep_years, params.R_MS, params.Z)
    return A * (1.0 + params.b_maint * (ce.F_S + ce.F_M)) * (1.0 + i_tot - r_w)


def invest_weight(params: EconomicParams, component_class: str) -> float:
    """Objective coefficient of one euro of purchase cost."""
    mult = params.T_use_years if params.invest_multiplier == "years" else 1.0
    return mult * annuity_invest_factor(params, component_class)


def energy_weight(params: EconomicParams) -> float:
    """Objective coefficient of one watt drawn during all operating hours."""
    A = annuity_factor(params.Z, params.T_use_years)
    return params.C_E * A * params.b_energy * params.hours / 1000.0


def lifecycle_objective(invest_costs_by_component: Mapping[str, Sequence[float]],
                        power_by_station_scenario: Sequence[Sequence[float]],
                        weights: Sequence[float],
                        params: EconomicParams) -> dict:
    """Invest plus energy cost.

    ``invest_costs_by_component`` maps component class to purchase costs,
    ``power_by_station_scenario[k][s]`` is station k's power in scenario s (W)
    and ``weights[s]`` the relative frequency of scenario s.
    """
    invest = {}
    for cls, costs in invest_costs_by_component.items():
        costs = [float(c) for c in costs]
        if any(c < 0 for c in costs):
            raise EconomicsError("negative invest cost")
        invest[cls] = invest_weight(params, cls) * math.fsum(costs)
    energy_w = 0.0
    for row in power_by_station_scenario:
        if len(row) != len(weights):
            raise EconomicsError("power rows must have one entry per scenario")
        for p, w in zip(row, weights):
            if p < 0:
                raise EconomicsError("negative power")
            energy_w += w * p
    energy = energy_weight(params) * energy_w
    total = math.fsum(invest.values()) + energy
    return {"invest": invest, "energy": energy, "total": total}
