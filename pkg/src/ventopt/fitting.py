"""Least-squares fitting of characteristic-equation coefficients from samples."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

BAND_COLUMNS = tuple(f"l{b}_db" for b in ("63", "125", "250", "500", "1k", "2k", "4k", "8k"))


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    name: str
    inputs: tuple
    targets: tuple
    basis: Callable        # X (m, k) -> design matrix (m, p)
    offset: Callable = None  # X -> part of the target that is not fitted
    catalog_key: tuple = ()


def _offset_fan_noise(X):
    q, dp = X[:, 0], X[:, 1]
    return 10.0 * np.log10(q) + 20.0 * np.log10(dp)


BASES = {
    "fan_pressure": BasisSpec(
        "fan_pressure", ("q_m3s", "n", "D_m"), ("dp_pa",),
        lambda X: np.column_stack([X[:, 0] ** 2 * X[:, 2] ** -4, X[:, 0] * X[:, 1] / X[:, 2],
                                   X[:, 1] ** 2 * X[:, 2] ** 2]),
        catalog_key=("fan_lines", "pressure")),
    "fan_power": BasisSpec(
        "fan_power", ("q_m3s", "n", "D_m"), ("po_w",),
        lambda X: np.column_stack([X[:, 0] ** 3 * X[:, 2] ** -4, X[:, 0] ** 2 * X[:, 1] / X[:, 2],
                                   X[:, 0] * X[:, 1] ** 2 * X[:, 2] ** 2, X[:, 1] ** 3 * X[:, 2] ** 5,
                                   np.ones(len(X))]),
        catalog_key=("fan_lines", "power")),
    "fan_cost": BasisSpec(
        "fan_cost", ("D_m", "clad"), ("c_eur",),
        lambda X: np.column_stack([X[:, 0], np.ones(len(X)), X[:, 1] * X[:, 0], X[:, 1]]),
        catalog_key=("fan_lines", "cost")),
    "fan_noise": BasisSpec(
        "fan_noise", ("q_m3s", "dp_pa", "n", "D_m"), BAND_COLUMNS,
        lambda X: np.column_stack([X[:, 2], X[:, 2] ** 2, X[:, 3], np.ones(len(X))]),
        offset=_offset_fan_noise, catalog_key=("fan_lines", "noise")),
    "vfc_cost": BasisSpec(
        "vfc_cost", ("H_m", "B_m", "clad"), ("c_eur",),
        lambda X: np.column_stack([X[:, 0] * X[:, 1], np.ones(len(X)), X[:, 2]]),
        catalog_key=("vfcs", "cost")),
    "vfc_noise": BasisSpec(
        "vfc_noise", ("dp_pa", "Q_m3s", "H_m", "B_m"), BAND_COLUMNS,
        lambda X: (lambda hb: np.column_stack([X[:, 0], X[:, 1] ** 2 / hb ** 2, X[:, 1] / hb, hb,
                                               np.sqrt(hb), np.ones(len(X))]))(X[:, 2] * X[:, 3]),
        catalog_key=("vfcs", "noise")),
    "sil_pressure": BasisSpec(
        "sil_pressure", ("v_ms", "s_m", "l_m"), ("dp_pa",),
        lambda X: np.column_stack([X[:, 0] ** 2, X[:, 0] ** 2 / X[:, 1], X[:, 0] ** 2 * X[:, 2] / X[:, 1]]),
        catalog_key=("silencers", "pressure")),
    "sil_cost": BasisSpec(
        "sil_cost", ("n", "l_m", "B_m", "H_m"), ("c_eur",),
        lambda X: np.column_stack([X[:, 0], X[:, 1] * X[:, 2], X[:, 3] * X[:, 2], np.ones(len(X))]),
        catalog_key=("silencers", "cost")),
    "sil_damping": BasisSpec(
        "sil_damping", ("n", "l_m", "B_m"), tuple(c.replace("l", "d", 1) for c in BAND_COLUMNS),
        lambda X: np.column_stack([X[:, 0] ** 2, X[:, 2] ** 2 * X[:, 0], X[:, 1] * X[:, 0],
                                   X[:, 1] * X[:, 2], X[:, 0], X[:, 1], X[:, 2], np.ones(len(X))]),
        catalog_key=("silencers", "damping")),
    "sil_noise": BasisSpec(
        "sil_noise", ("v_ms", "H_m", "B_m"), BAND_COLUMNS,
        lambda X: (lambda hb: np.column_stack([X[:, 0] ** 2, X[:, 0], hb, hb ** 2,
                                               np.ones(len(X))]))(X[:, 1] * X[:, 2]),
        catalog_key=("silencers", "noise")),
}


def r2_score_convention(y, yhat) -> float:
    """R^2 with the zero-variance case defined as 1 for an exact fit, else 0."""
    y = np.asarray(y, dtype=float)
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        scale = max(1.0, float(np.sum(y ** 2)))
        return 1.0 if ss_res <= 1e-24 * scale else 0.0
    return 1.0 - ss_res / ss_tot


class CharacteristicRegressor(RegressorMixin, BaseEstimator):
    """Linear least squares over one characteristic equation's basis.

    ``coef_`` has one row per target column (one row for scalar equations,
    eight for spectra) and ``r2_`` holds the matching in-sample scores.
    """

    def __init__(self, equation="fan_pressure"):
        self.equation = equation

    def _spec(self):
        try:
            return BASES[self.equation]
        except KeyError:
            raise FitError(f"unknown equation {self.equation!r}") from None

    def fit(self, X, y):
        spec = self._spec()
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if X.shape[1] != len(spec.inputs):
            raise FitError(f"{spec.name}: expected inputs {spec.inputs}")
        if y.shape != (X.shape[0], len(spec.targets)):
            raise FitError(f"{spec.name}: expected targets {spec.targets}")
        A = spec.basis(X)
        if X.shape[0] <= A.shape[1]:
            raise FitError(f"{spec.name}: {X.shape[0]} samples for {A.shape[1]} basis terms")
        if np.linalg.matrix_rank(A) < A.shape[1]:
            raise FitError(f"{spec.name}: design matrix is rank deficient")
        off = spec.offset(X)[:, None] if spec.offset is not None else 0.0
        coef, *_ = np.linalg.lstsq(A, y - off, rcond=None)
        self.coef_ = coef.T
        pred = A @ coef + off
        self.r2_ = np.array([r2_score_convention(y[:, j], pred[:, j]) for j in range(y.shape[1])])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        spec = self._spec()
        X = check_array(X, dtype=float)
        out = spec.basis(X) @ self.coef_.T
        if spec.offset is not None:
            out = out + spec.offset(X)[:, None]
        return out[:, 0] if out.shape[1] == 1 else out

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        y = np.asarray(y, dtype=float)
        if pred.ndim == 1:
            return r2_score_convention(y.ravel(), pred)
        return float(np.mean([r2_score_convention(y[:, j], pred[:, j]) for j in range(y.shape[1])]))


def fit_model(samples: Mapping, basis_spec) -> dict:
    """Fit the named equation to column samples; returns coefficients and R^2."""
    spec = BASES[basis_spec] if isinstance(basis_spec, str) else basis_spec
    try:
        X = np.column_stack([np.asarray(samples[c], dtype=float) for c in spec.inputs])
        y = np.column_stack([np.asarray(samples[c], dtype=float) for c in spec.targets])
    except KeyError as exc:
        raise FitError(f"{spec.name}: missing column {exc}") from None
    reg = CharacteristicRegressor(spec.name).fit(X, y)
    coef = reg.coef_[0] if len(spec.targets) == 1 else reg.coef_
    r2 = float(reg.r2_[0]) if len(spec.targets) == 1 else reg.r2_.tolist()
    return {"coefficients": coef, "r2": r2}
