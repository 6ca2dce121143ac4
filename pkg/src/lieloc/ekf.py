"""Discrete-time extended Kalman filter on a matrix Lie group.

State and measurements are group elements with right-perturbation Gaussian
noise.  The prediction step applies X exp([dt f]^) and propagates covariance
with F = Ad_{exp(-fbar)} + J_r(fbar) D; the update composes the correction
exp([K nu]^) and maps the covariance through J_r(K nu).  Model Jacobians D
and H may be supplied analytically or fall back to central differences at
zero perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .liegroups import LieGroupError
from .stochastic import StochasticElement, symmetrize

FD_STEP = 1e-6

# Escalating diagonal jitter used before declaring the innovation covariance
# singular; needed when configured measurement noise is exactly zero and the
# posterior has collapsed along measured directions.
_JITTERS = (0.0, 1e-12, 1e-9, 1e-6)


class SingularInnovationCovError(LieGroupError):
    """Innovation covariance S = H P H^T + R is not invertible."""


@dataclass(frozen=True)
class FilterState:
    estimate: StochasticElement
    timestamp: float = 0.0


@dataclass(frozen=True)
class ProcessModel:
    """Continuous-time dynamics f(X, u) in tangent coordinates plus noise density Q.

    ``d_matrix(x, u)``, when given, returns the derivative of f with respect
    to a right perturbation of X at zero; otherwise it is computed by
    central differences with step FD_STEP.
    """

    f: Callable[[object, np.ndarray], np.ndarray]
    q: np.ndarray
    d_matrix: Optional[Callable[[object, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class MeasurementModel:
    """Measurement h: state group -> measurement group with noise covariance R."""

    h: Callable[[object], object]
    r: np.ndarray
    h_matrix: Optional[Callable[[object], np.ndarray]] = None


@dataclass(frozen=True)
class GateDecision:
    d_squared: float
    threshold: float
    accepted: bool


def _numeric_d(model: ProcessModel, x, u: np.ndarray) -> np.ndarray:
    """Central differences of f at zero perturbation, one column per coordinate.

    Structurally pinned coordinates get zero columns.
    """
    d = x.dim
    mask = x.group.pinned_mask
    cols = np.zeros((len(model.f(x, u)), d))
    for j in range(d):
        if mask[j]:
            continue
        hi = model.f(x.retract(_unit(d, j, FD_STEP)), u)
        lo = model.f(x.retract(_unit(d, j, -FD_STEP)), u)
        cols[:, j] = (hi - lo) / (2.0 * FD_STEP)
    return cols


def _numeric_h(model: MeasurementModel, x) -> np.ndarray:
    hx_inv = model.h(x).inverse()
    d = x.dim
    mask = x.group.pinned_mask
    q = model.r.shape[0]
    cols = np.zeros((q, d))
    for j in range(d):
        if mask[j]:
            continue
        hi = (hx_inv @ model.h(x.retract(_unit(d, j, FD_STEP)))).log()
        lo = (hx_inv @ model.h(x.retract(_unit(d, j, -FD_STEP)))).log()
        cols[:, j] = (hi - lo) / (2.0 * FD_STEP)
    return cols


def _unit(d: int, j: int, scale: float) -> np.ndarray:
    v = np.zeros(d)
    v[j] = scale
    return v


def _solve_spd(s: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(np.diag(s)))))
    for jit in _JITTERS:
        try:
            factor = cho_factor(s + (jit * scale) * np.eye(s.shape[0]), lower=True)
            return cho_solve(factor, rhs)
        except LinAlgError:
            continue
    raise SingularInnovationCovError("innovation covariance not positive definite")


def predict(state: FilterState, model: ProcessModel, u: np.ndarray,
            dt: float) -> FilterState:
    """Propagate mean and covariance one step of length dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = state.estimate.mean
    group = x.group
    fbar = dt * np.asarray(model.f(x, u), dtype=float)
    jr = group.jr(fbar)
    d_cont = model.d_matrix(x, u) if model.d_matrix is not None else _numeric_d(model, x, u)
    f_mat = group.exp(-fbar).adjoint() + jr @ (dt * d_cont)
    p = state.estimate.cov
    p_pred = f_mat @ p @ f_mat.T + jr @ (dt * model.q) @ jr.T
    mean = x.retract(fbar)
    est = StochasticElement(mean, symmetrize(p_pred), check=False)
    return FilterState(est, state.timestamp + dt)


def innovation(state: FilterState, model: MeasurementModel, z) -> tuple:
    """Innovation vector nu, its covariance S, H, and P for the current state."""
    x = state.estimate.mean
    nu = (model.h(x).inverse() @ z).log()
    h_mat = model.h_matrix(x) if model.h_matrix is not None else _numeric_h(model, x)
    p = state.estimate.cov
    s = symmetrize(h_mat @ p @ h_mat.T + model.r)
    return nu, s, h_mat, p


def update(state: FilterState, model: MeasurementModel, z) -> FilterState:
    """Correct the state with a group-valued measurement."""
    nu, s, h_mat, p = innovation(state, model, z)
    k = _solve_spd(s, h_mat @ p).T
    corr = k @ nu
    mean = state.estimate.mean.retract(corr)
    group = state.estimate.mean.group
    jr = group.jr(corr)
    p_post = jr @ (np.eye(p.shape[0]) - k @ h_mat) @ p @ jr.T
    est = StochasticElement(mean, symmetrize(p_post), check=False)
    return FilterState(est, state.timestamp)


def mahalanobis_gate(state: FilterState, model: MeasurementModel, z,
                     threshold: float) -> GateDecision:
    """Squared-Mahalanobis acceptance test on the innovation; never mutates state."""
    nu, s, _, _ = innovation(state, model, z)
    dsq = float(nu @ _solve_spd(s, nu))
    return GateDecision(dsq, threshold, dsq < threshold)
