"""Stochastic operations on Lie-group elements with right-perturbation noise.

A stochastic element is X = Xbar exp([zeta]^) with zeta ~ N(0, P) in the
tangent at the mean.  The operations here -- inverse, composition,
difference, averaging, fusion, constrained fusion -- return the first-order
mean and covariance of the result, handling cross-covariances between
correlated inputs.  They work for any element type exposing the shared
group protocol (single SE_k(3) elements or block products).
"""

from __future__ import annotations

from dataclasses import dataclass, field, InitVar

import numpy as np

from .liegroups import DimensionMismatchError, LieGroupError

SYMMETRY_TOL = 1e-10
PSD_TOL = -1e-10
JOINT_PSD_TOL = -1e-8
MAX_JOINT_CONDITION = 1e12


class NonPsdResultError(LieGroupError):
    """Returned covariance is indefinite beyond tolerance (inconsistent inputs)."""


class WeightError(LieGroupError):
    """Averaging weights do not form a convex combination."""


class SingularJointError(LieGroupError):
    """Assembled joint covariance is not invertible to working precision."""


class RankDeficientError(LieGroupError):
    """Constraint matrix does not have full row rank."""


def symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def psd_floor(p: np.ndarray, raise_tol: float = JOINT_PSD_TOL) -> np.ndarray:
    """Clip rounding-level negative eigenvalues to zero.

    Indefiniteness beyond ``raise_tol`` signals inconsistent inputs rather
    than rounding and raises NonPsdResultError.
    """
    p = symmetrize(p)
    w, v = np.linalg.eigh(p)
    if w[0] >= 0.0:
        return p
    if w[0] < raise_tol:
        raise NonPsdResultError(f"covariance indefinite (min eig {w[0]:.3e})")
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def _check_cov(p: np.ndarray, dim: int, what: str = "covariance") -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(dim, dim)
    if np.max(np.abs(p - p.T)) > SYMMETRY_TOL:
        raise ValueError(f"{what} is not symmetric")
    if np.min(np.linalg.eigvalsh(p)) < PSD_TOL:
        raise ValueError(f"{what} is not positive semi-definite")
    return p


@dataclass(frozen=True)
class StochasticElement:
    """Pair (mean, covariance) for a right-perturbed group element."""

    mean: object
    cov: np.ndarray
    check: InitVar[bool] = True

    def __post_init__(self, check):
        if check:
            object.__setattr__(self, "cov", _check_cov(self.cov, self.mean.dim))
        else:
            object.__setattr__(
                self, "cov", np.asarray(self.cov, dtype=float).reshape(
                    self.mean.dim, self.mean.dim))

    @property
    def dim(self) -> int:
        return self.mean.dim


@dataclass(frozen=True)
class CorrelatedSet:
    """Stochastic elements of one group plus their pairwise cross-covariances.

    ``cross[(i, j)]`` for i < j holds E[zeta_i zeta_j^T].  Missing pairs are
    uncorrelated.
    """

    elements: tuple
    cross: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        d = self.elements[0].dim
        for e in self.elements:
            if e.dim != d:
                raise DimensionMismatchError("elements live on different groups")
        cleaned = {}
        for (i, j), p in self.cross.items():
            if not (0 <= i < j < len(self.elements)):
                raise ValueError(f"cross-covariance key {(i, j)} out of order")
            cleaned[(i, j)] = np.asarray(p, dtype=float).reshape(d, d)
        object.__setattr__(self, "cross", cleaned)
        joint = self.joint()
        if np.min(np.linalg.eigvalsh(symmetrize(joint))) < JOINT_PSD_TOL:
            raise ValueError("assembled joint covariance is not PSD")

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def dim(self) -> int:
        return self.elements[0].dim

    def block(self, i: int, j: int) -> np.ndarray:
        if i == j:
            return self.elements[i].cov
        if i < j:
            return self.cross.get((i, j), np.zeros((self.dim, self.dim)))
        return self.block(j, i).T

    def joint(self, order=None) -> np.ndarray:
        """Joint covariance with blocks arranged in the given index order."""
        order = list(range(self.n)) if order is None else list(order)
        d = self.dim
        out = np.empty((d * len(order), d * len(order)))
        for a, i in enumerate(order):
            for b, j in enumerate(order):
                out[a * d:(a + 1) * d, b * d:(b + 1) * d] = self.block(i, j)
        return out


def st_inverse(x: StochasticElement) -> StochasticElement:
    """Inverse of a stochastic element: mean inverted, covariance conjugated."""
    ad = x.mean.adjoint()
    return StochasticElement(x.mean.inverse(), psd_floor(ad @ x.cov @ ad.T),
                             check=False)


def _reversed_transport(means: list) -> list[np.ndarray]:
    """Adjoint transports for the reversed stacking (I, Ad_{Xn^-1}, ...)."""
    n = len(means)
    mats = [np.eye(means[0].dim)]
    acc = None
    for k in range(n - 1, 0, -1):
        inv = means[k].inverse()
        acc = inv if acc is None else acc @ inv
        mats.append(acc.adjoint())
    return mats


def st_compose(s: CorrelatedSet) -> StochasticElement:
    """Composition X_1 X_2 ... X_n with correlated right perturbations."""
    if s.n < 2:
        raise ValueError("composition needs at least two elements")
    means = [e.mean for e in s.elements]
    mean = means[0]
    for m in means[1:]:
        mean = mean @ m
    trans = _reversed_transport(means)
    big = np.zeros((s.n * s.dim, s.n * s.dim))
    for k, t in enumerate(trans):
        big[k * s.dim:(k + 1) * s.dim, k * s.dim:(k + 1) * s.dim] = t
    joint_rev = s.joint(order=range(s.n - 1, -1, -1))
    cov = big @ joint_rev @ big.T
    d = s.dim
    total = sum(cov[a * d:(a + 1) * d, b * d:(b + 1) * d]
                for a in range(s.n) for b in range(s.n))
    return StochasticElement(mean, psd_floor(total), check=False)


def st_difference(x1: StochasticElement, x2: StochasticElement,
                  p12: np.ndarray | None = None) -> StochasticElement:
    """Difference X_1^-1 X_2 of two possibly correlated elements."""
    d = x1.dim
    p12 = np.zeros((d, d)) if p12 is None else np.asarray(p12, dtype=float).reshape(d, d)
    mean = x1.mean.inverse() @ x2.mean
    ad = (x2.mean.inverse() @ x1.mean).adjoint()
    cov = psd_floor(x2.cov - p12.T @ ad.T - ad @ p12 + ad @ x1.cov @ ad.T)
    return StochasticElement(mean, cov, check=False)


def _fractional_power(x, alpha: float):
    """Principal fractional power exp(alpha * log(x))."""
    return x.group.exp(alpha * x.log())


def st_average(s: CorrelatedSet, alphas) -> StochasticElement:
    """Weighted geometric average X_1^a1 ... X_n^an of stochastic elements."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (s.n,):
        raise WeightError("one weight per element required")
    if np.any(alphas < 0.0) or np.any(alphas > 1.0) or abs(alphas.sum() - 1.0) > 1e-12:
        raise WeightError("weights must lie in [0,1] and sum to 1")
    means = [e.mean for e in s.elements]
    powers = [_fractional_power(m, a) for m, a in zip(means, alphas)]
    mean = powers[0]
    for p in powers[1:]:
        mean = mean @ p
    trans = _reversed_transport(powers)
    d = s.dim
    big = np.zeros((s.n * d, s.n * d))
    for k, t in enumerate(trans):
        a = alphas[s.n - 1 - k]
        big[k * d:(k + 1) * d, k * d:(k + 1) * d] = a * t
    joint_rev = s.joint(order=range(s.n - 1, -1, -1))
    cov = big @ joint_rev @ big.T
    total = sum(cov[a * d:(a + 1) * d, b * d:(b + 1) * d]
                for a in range(s.n) for b in range(s.n))
    return StochasticElement(mean, psd_floor(total), check=False)


def _invert_joint(joint: np.ndarray) -> np.ndarray:
    joint = symmetrize(joint)
    if np.linalg.cond(joint) > MAX_JOINT_CONDITION:
        raise SingularJointError("joint covariance condition number too large")
    return np.linalg.inv(joint)


def st_fuse(s: CorrelatedSet, reference=None) -> StochasticElement:
    """Minimum-cost fusion of correlated estimates of one quantity.

    Solves the quadratic cost in exponential coordinates about a reference
    element, which defaults to the equal-weight average of the inputs.  The
    fused covariance is the inverse information of the linearized problem
    mapped back through the right Jacobian at the optimum.
    """
    if s.n == 1 and reference is None:
        reference = s.elements[0].mean
    if reference is None:
        reference = st_average(s, np.full(s.n, 1.0 / s.n)).mean
    d = s.dim
    zetas = [(e.mean.inverse() @ reference).log() for e in s.elements]
    g = _invert_joint(s.joint())
    jr_invs = [reference.group.jr_inv(z) for z in zetas]
    info = np.zeros((d, d))
    rhs = np.zeros(d)
    for i in range(s.n):
        for j in range(s.n):
            gij = g[i * d:(i + 1) * d, j * d:(j + 1) * d]
            info += jr_invs[i].T @ gij @ jr_invs[j]
            rhs += jr_invs[i].T @ gij @ zetas[j]
    info = symmetrize(info)
    zeta_star = -np.linalg.solve(info, rhs)
    p_zz = np.linalg.inv(info)
    jr_star = reference.group.jr(zeta_star)
    mean = reference.retract(zeta_star)
    return StochasticElement(mean, psd_floor(jr_star @ p_zz @ jr_star.T),
                             check=False)


@dataclass(frozen=True)
class LinearConstraint:
    """Linear constraint Gamma zeta = d_tilde weighted by a PD matrix."""

    gamma: np.ndarray
    d_tilde: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        d_tilde = np.asarray(self.d_tilde, dtype=float).reshape(gamma.shape[0])
        weight = _check_cov(np.asarray(self.weight, dtype=float),
                            gamma.shape[1], "constraint weight")
        if gamma.shape[0] > gamma.shape[1]:
            raise RankDeficientError("more constraint rows than coordinates")
        if np.linalg.svd(gamma, compute_uv=False)[-1] <= 1e-10:
            raise RankDeficientError("constraint matrix is rank deficient")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "d_tilde", d_tilde)
        object.__setattr__(self, "weight", weight)

    @property
    def rank(self) -> int:
        return self.gamma.shape[0]


def st_fuse_constrained(unconstrained: StochasticElement,
                        constraint: LinearConstraint,
                        reference=None) -> StochasticElement:
    """Project a fused estimate onto a linear constraint surface.

    Lagrange-multiplier solution of the weighted projection of the
    unconstrained estimate; with a full-rank constraint the result pins the
    coordinates to Gamma^-1 d_tilde.  The covariance is carried over from
    the unconstrained input (the projection itself adds no noise model).
    """
    reference = unconstrained.mean if reference is None else reference
    d = unconstrained.dim
    gamma, d_til, w = constraint.gamma, constraint.d_tilde, constraint.weight
    if gamma.shape[1] != d:
        raise DimensionMismatchError("constraint width differs from group dimension")
    if constraint.rank == d:
        zeta_c = np.linalg.solve(gamma, d_til)
    else:
        zeta_u = (unconstrained.mean.inverse() @ reference).log()
        jr_inv = reference.group.jr_inv(zeta_u)
        jw = jr_inv.T @ w
        big_j = np.linalg.inv(jw @ jr_inv)
        gjg = np.linalg.inv(gamma @ big_j @ gamma.T)
        zeta_c = big_j @ (
            (gamma.T @ gjg @ gamma @ big_j @ jw - jw) @ zeta_u
            + gamma.T @ gjg @ d_til)
    mean = reference.retract(zeta_c)
    return StochasticElement(mean, unconstrained.cov)


def cross_cov_step(p_ij_prev: np.ndarray,
                   f_i: np.ndarray, f_j: np.ndarray,
                   jr_i: np.ndarray, jr_j: np.ndarray,
                   q: np.ndarray,
                   k_i: np.ndarray, h_i: np.ndarray,
                   k_j: np.ndarray, h_j: np.ndarray) -> np.ndarray:
    """One recursion step of the cross-covariance between two filters.

    P_ij(k|k) = (I - K_i H_i)(F_i P_ij F_j^T + J_r(fbar_i) Q J_r(fbar_j)^T)
                (I - K_j H_j)^T
    """
    d = p_ij_prev.shape[0]
    for name, m in (("F_i", f_i), ("F_j", f_j), ("Jr_i", jr_i), ("Jr_j", jr_j),
                    ("Q", q)):
        if m.shape != (d, d):
            raise DimensionMismatchError(f"{name} has shape {m.shape}, expected {(d, d)}")
    if k_i.shape[0] != d or k_j.shape[0] != d:
        raise DimensionMismatchError("gain row count differs from state dimension")
    if h_i.shape[1] != d or h_j.shape[1] != d:
        raise DimensionMismatchError("H column count differs from state dimension")
    predicted = f_i @ p_ij_prev @ f_j.T + jr_i @ q @ jr_j.T
    left = np.eye(d) - k_i @ h_i
    right = np.eye(d) - k_j @ h_j
    return left @ predicted @ right.T
