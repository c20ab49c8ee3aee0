"""scikit-learn shaped wrappers around the cell solvers.

X holds the scalar parameter being swept (m for the sharp cell, q for the
convex cell) as a single column.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .coeff import FieldModel
from .convex_cell import LagrangianSpec, homogenized_lagrangian
from .sharp_cell import estimate_alpha


def _column(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("expected a single feature column")
        X = X[:, 0]
    return X


class AlphaScaling(RegressorMixin, BaseEstimator):
    """alpha_m from DP cells at each m, with a log-log power fit for predict."""

    def __init__(self, model=None, R_schedule=(50.0,), seeds=(0, 1), dx=0.05, du=None,
                 boundary="pinned", M_cap=4.0, workers=1):
        self.model = model
        self.R_schedule = R_schedule
        self.seeds = seeds
        self.dx = dx
        self.du = du
        self.boundary = boundary
        self.M_cap = M_cap
        self.workers = workers

    def fit(self, X, y=None):
        m = _column(X)
        if np.any(m <= 0):
            raise ValueError("m must be positive")
        model = self.model if self.model is not None else FieldModel.constant(1.0)
        self.estimates_ = [estimate_alpha(model, float(mi), self.R_schedule, self.seeds,
                                          dx=self.dx, du=self.du, boundary=self.boundary,
                                          M_cap=self.M_cap, workers=self.workers)
                           for mi in m]
        self.alpha_ = np.array([e.alpha for e in self.estimates_])
        self.m_ = m
        if m.size > 1 and np.ptp(m) > 0:
            self.exponent_, logc = np.polyfit(np.log(m), np.log(self.alpha_), 1)
            self.prefactor_ = float(np.exp(logc))
        else:
            self.exponent_ = 1.0 / 3.0
            self.prefactor_ = float(self.alpha_[0] / m[0] ** self.exponent_)
        return self

    def predict(self, X):
        check_is_fitted(self, "alpha_")
        return self.prefactor_ * _column(X) ** self.exponent_


class HomogenizedLagrangian(RegressorMixin, BaseEstimator):
    """f_*(q) at the sampled q; predict uses the p-homogeneous fit c|q|^p."""

    def __init__(self, model=None, p=2.0, R_schedule=(25.0, 200.0), seeds=tuple(range(20)),
                 dx=0.05, workers=1):
        self.model = model
        self.p = p
        self.R_schedule = R_schedule
        self.seeds = seeds
        self.dx = dx
        self.workers = workers

    def fit(self, X, y=None):
        q = _column(X)
        model = self.model if self.model is not None else FieldModel.checkerboard()
        L = LagrangianSpec.power(self.p)
        self.estimates_, self.records_ = homogenized_lagrangian(
            L, model, q, self.R_schedule, self.seeds, dx=self.dx, workers=self.workers)
        self.f_star_ = np.array([e.f_star for e in self.estimates_])
        self.q_ = q
        basis = np.abs(q) ** self.p
        denom = float(np.dot(basis, basis))
        self.coef_ = float(np.dot(basis, self.f_star_) / denom) if denom > 0 else 0.0
        return self

    def predict(self, X):
        check_is_fitted(self, "f_star_")
        return self.coef_ * np.abs(_column(X)) ** self.p
