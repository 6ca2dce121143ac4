"""Closed-form geometry of the kappa-direct-isometry groups SE_k(3).

An element carries one rotation in SO(3) plus ``kappa`` translation-like
3-vectors, embedded as a (kappa+3) x (kappa+3) matrix.  kappa is a runtime
parameter: kappa=0 is SO(3), kappa=1 is SE(3), kappa=2 is the extended pose
(rotation, position, velocity).  Tangent coordinates are ordered
(phi, rho_1, ..., rho_kappa).

All operations are pure functions over immutable values; matrices are dense
row-major numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

# Small-angle switch for the sin/cos coefficient forms of V, V^-1 and
# Rodrigues.  Below this the series forms are exact to double precision and
# the closed forms would divide near-zero by near-zero.
SMALL_ANGLE = 1e-7

# The right-Jacobian closed form needs a much earlier switch: its trig
# coefficients cancel catastrophically yet multiply ad powers whose norm is
# set by the translation parts, so coefficient error is not angle-damped.
# At 1e-2 the coefficient error and the degree-4 series truncation error are
# both below 1e-10 relative.
JR_SMALL_ANGLE = 1e-2

# Rotation matrices must satisfy R R^T = I and det R = 1 to this tolerance.
ORTHONORMALITY_TOL = 1e-9

# log() rejects rotations whose angle is numerically indistinguishable
# from pi: the principal branch is ambiguous there.
ANGLE_AT_PI_TOL = 1e-9


class LieGroupError(Exception):
    """Base class for numerical errors raised by this package."""


class AngleAtPiError(LieGroupError):
    """Rotation angle at or numerically indistinguishable from pi."""


class SingularJacobianError(LieGroupError):
    """Right-Jacobian inverse could not be computed to tolerance."""


class DimensionMismatchError(LieGroupError):
    """Operands have incompatible dimensions or group parameters."""


# ---------------------------------------------------------------------------
# so(3) kernels
# ---------------------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unskew(m: np.ndarray) -> np.ndarray:
    """3-vector of a skew-symmetric matrix (inverse of ``skew``)."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rodrigues(phi: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> SO(3).

    R = I + sin(a)/a [phi]x + (1-cos(a))/a^2 [phi]x^2 for a = ||phi||; the
    series form is used below SMALL_ANGLE.
    """
    a = math.sqrt(float(phi @ phi))
    k = skew(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (math.sin(a) / a) * k + ((1.0 - math.cos(a)) / (a * a)) * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Logarithm map SO(3) -> so(3) coordinates, principal branch in [0, pi).

    Raises AngleAtPiError when trace(R) <= -1 + ANGLE_AT_PI_TOL.
    """
    tr = float(np.trace(r))
    if tr <= -1.0 + ANGLE_AT_PI_TOL:
        raise AngleAtPiError(f"rotation angle at pi (trace={tr:.12f})")
    c = min(1.0, max(-1.0, (tr - 1.0) / 2.0))
    psi = math.acos(c)
    s = unskew((r - r.T) / 2.0)  # equals sin(psi) * axis
    if psi < SMALL_ANGLE:
        return s
    return (psi / math.sin(psi)) * s


def vmat(phi: np.ndarray) -> np.ndarray:
    """Left multiplier V(phi) relating rho coordinates to translation columns."""
    a = math.sqrt(float(phi @ phi))
    k = skew(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a2 = a * a
    return np.eye(3) + ((1.0 - math.cos(a)) / a2) * k + ((a - math.sin(a)) / (a2 * a)) * (k @ k)


def vmat_inv(phi: np.ndarray) -> np.ndarray:
    """Closed-form inverse of V(phi)."""
    a = math.sqrt(float(phi @ phi))
    k = skew(phi)
    if a < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    coeff = 1.0 / (a * a) - (1.0 + math.cos(a)) / (2.0 * a * math.sin(a))
    return np.eye(3) - 0.5 * k + coeff * (k @ k)


# ---------------------------------------------------------------------------
# Typed tangent / group element values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TangentVector:
    """Coordinate vector of an se_k(3) element: (phi, rho_1, ..., rho_kappa)."""

    kappa: int
    phi: np.ndarray
    rhos: np.ndarray  # shape (kappa, 3)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be a non-negative integer")
        phi = np.asarray(self.phi, dtype=float).reshape(3)
        rhos = np.asarray(self.rhos, dtype=float).reshape(self.kappa, 3)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(rhos))):
            raise ValueError("tangent coordinates must be finite")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "rhos", rhos)

    @classmethod
    def from_coords(cls, kappa: int, vec: np.ndarray) -> "TangentVector":
        vec = np.asarray(vec, dtype=float).reshape(3 + 3 * kappa)
        return cls(kappa, vec[:3], vec[3:].reshape(kappa, 3))

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.phi, self.rhos.ravel()])

    @property
    def dim(self) -> int:
        return 3 + 3 * self.kappa


@dataclass(frozen=True)
class GroupElement:
    """Member of SE_k(3) stored as rotation + kappa translation columns."""

    kappa: int
    rotation: np.ndarray
    translations: np.ndarray  # shape (kappa, 3)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be a non-negative integer")
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translations, dtype=float).reshape(self.kappa, 3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("group element entries must be finite")
        if np.linalg.norm(r @ r.T - np.eye(3)) > ORTHONORMALITY_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation determinant differs from 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translations", t)

    @classmethod
    def _unchecked(cls, kappa: int, rotation: np.ndarray,
                   translations: np.ndarray) -> "GroupElement":
        """Internal fast path for kernel outputs that are valid by construction."""
        el = object.__new__(cls)
        object.__setattr__(el, "kappa", kappa)
        object.__setattr__(el, "rotation", rotation)
        object.__setattr__(el, "translations", translations)
        return el

    @classmethod
    def identity(cls, kappa: int) -> "GroupElement":
        return cls._unchecked(kappa, np.eye(3), np.zeros((kappa, 3)))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "GroupElement":
        m = np.asarray(m, dtype=float)
        kappa = m.shape[0] - 3
        return cls(kappa, m[:3, :3], m[:3, 3:].T)

    def matrix(self) -> np.ndarray:
        n = self.kappa + 3
        m = np.eye(n)
        m[:3, :3] = self.rotation
        m[:3, 3:] = self.translations.T
        return m

    @property
    def dim(self) -> int:
        return 3 + 3 * self.kappa

    @property
    def group(self) -> "SEKGroup":
        return sek_group(self.kappa)

    def compose(self, other: "GroupElement") -> "GroupElement":
        if self.kappa != other.kappa:
            raise DimensionMismatchError("cannot compose elements of different kappa")
        r = self.rotation @ other.rotation
        t = other.translations @ self.rotation.T + self.translations
        return GroupElement._unchecked(self.kappa, r, t)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return self.compose(other)

    def inverse(self) -> "GroupElement":
        rt = self.rotation.T
        return GroupElement._unchecked(self.kappa, rt,
                                       -self.translations @ self.rotation)

    def log(self) -> np.ndarray:
        """Tangent coordinates of the principal logarithm."""
        phi = so3_log(self.rotation)
        vinv = vmat_inv(phi)
        rhos = self.translations @ vinv.T
        return np.concatenate([phi, rhos.ravel()])

    def adjoint(self) -> np.ndarray:
        return _sek_adjoint(self.rotation, self.translations)

    def retract(self, vec: np.ndarray) -> "GroupElement":
        """Right perturbation: self composed with exp of the coordinates."""
        return self.compose(self.group.exp(vec))


# ---------------------------------------------------------------------------
# Matrix kernels shared with the product groups
# ---------------------------------------------------------------------------


def _sek_adjoint(r: np.ndarray, translations: np.ndarray) -> np.ndarray:
    kappa = translations.shape[0]
    d = 3 + 3 * kappa
    ad = np.zeros((d, d))
    ad[:3, :3] = r
    for i in range(kappa):
        s = 3 + 3 * i
        ad[s:s + 3, s:s + 3] = r
        ad[s:s + 3, :3] = skew(translations[i]) @ r
    return ad


def _sek_ad(coords: np.ndarray, kappa: int) -> np.ndarray:
    d = 3 + 3 * kappa
    out = np.zeros((d, d))
    kphi = skew(coords[:3])
    out[:3, :3] = kphi
    for i in range(kappa):
        s = 3 + 3 * i
        out[s:s + 3, s:s + 3] = kphi
        out[s:s + 3, :3] = skew(coords[s:s + 3])
    return out


def _sek_exp(coords: np.ndarray, kappa: int) -> GroupElement:
    phi = coords[:3]
    r = rodrigues(phi)
    v = vmat(phi)
    rhos = coords[3:].reshape(kappa, 3)
    return GroupElement._unchecked(kappa, r, rhos @ v.T)


def _jr_from_ad(ad: np.ndarray, a: float) -> np.ndarray:
    """Right Jacobian as the 4-term polynomial in ad, a = rotation angle."""
    d = ad.shape[0]
    ad2 = ad @ ad
    if a < JR_SMALL_ANGLE:
        # Series coefficients (-1)^n / (n+1)!; exact at zero angle where
        # ad^2 vanishes, leaving I - ad/2.
        ad3 = ad2 @ ad
        return (np.eye(d) - 0.5 * ad + ad2 / 6.0 - ad3 / 24.0 + (ad3 @ ad) / 120.0)
    sa, ca = math.sin(a), math.cos(a)
    a2 = a * a
    c1 = (4.0 - a * sa - 4.0 * ca) / (2.0 * a2)
    c2 = (4.0 * a - 5.0 * sa + a * ca) / (2.0 * a2 * a)
    c3 = (2.0 - a * sa - 2.0 * ca) / (2.0 * a2 * a2)
    c4 = (2.0 * a - 3.0 * sa + a * ca) / (2.0 * a2 * a2 * a)
    ad3 = ad2 @ ad
    return np.eye(d) - c1 * ad + c2 * ad2 - c3 * ad3 + c4 * (ad3 @ ad)


@lru_cache(maxsize=1)
def _bernoulli_table(n_max: int = 40) -> tuple:
    """Bernoulli numbers B_0..B_n_max (B_1 = -1/2 convention), as floats."""
    b = [Fraction(1)]
    for n in range(1, n_max + 1):
        acc = Fraction(0)
        for k in range(n):
            acc += math.comb(n + 1, k) * b[k]
        b.append(-acc / (n + 1))
    return tuple(float(x) for x in b)


# Truncate the Bernoulli series once a term's norm drops below this.
_JR_INV_TERM_TOL = 1e-14
_JR_INV_MAX_ORDER = 40


def _jr_inv_from_ad(ad: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian via the Bernoulli series in (-ad)."""
    d = ad.shape[0]
    bern = _bernoulli_table()
    out = np.eye(d)
    term = np.eye(d)
    fact = 1.0
    for n in range(1, _JR_INV_MAX_ORDER + 1):
        term = term @ (-ad)
        fact *= n
        if bern[n] == 0.0:
            continue
        contrib = (bern[n] / fact) * term
        out += contrib
        if np.max(np.abs(contrib)) < _JR_INV_TERM_TOL and n > 2:
            break
    return out


# ---------------------------------------------------------------------------
# Group descriptor used by the generic stochastic/filter layers
# ---------------------------------------------------------------------------


class SEKGroup:
    """Descriptor for SE_k(3), optionally with the rotation pinned to identity.

    Pinned blocks arise inside product groups whose lower factor is a pure
    translation family; their tangent keeps the (structurally zero) rotation
    slot so product coordinates match the full embedding dimension.
    """

    def __init__(self, kappa: int, pinned: bool = False):
        self.kappa = kappa
        self.pinned = pinned
        self.dim = 3 + 3 * kappa
        self.pinned_mask = np.zeros(self.dim, dtype=bool)
        if pinned:
            self.pinned_mask[:3] = True

    def __repr__(self):
        tag = "T" if self.pinned else "SE"
        return f"{tag}{self.kappa}(3)"

    def __eq__(self, other):
        return (isinstance(other, SEKGroup)
                and self.kappa == other.kappa and self.pinned == other.pinned)

    def __hash__(self):
        return hash((self.kappa, self.pinned))

    def identity(self) -> GroupElement:
        return GroupElement.identity(self.kappa)

    def _check_pinned(self, coords: np.ndarray) -> np.ndarray:
        if not self.pinned:
            return coords
        if np.max(np.abs(coords[:3])) > 1e-9:
            raise ValueError("pinned block has nonzero rotation coordinates")
        out = coords.copy()
        out[:3] = 0.0  # clamp rounding dust so the block stays exactly pinned
        return out

    def exp(self, coords: np.ndarray) -> GroupElement:
        coords = self._check_pinned(np.asarray(coords, dtype=float).reshape(self.dim))
        return _sek_exp(coords, self.kappa)

    def log(self, x: GroupElement) -> np.ndarray:
        return x.log()

    def adjoint(self, x: GroupElement) -> np.ndarray:
        return x.adjoint()

    def ad(self, coords: np.ndarray) -> np.ndarray:
        return _sek_ad(np.asarray(coords, dtype=float), self.kappa)

    def jr(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        a = math.sqrt(float(coords[:3] @ coords[:3]))
        return _jr_from_ad(self.ad(coords), a)

    def jr_inv(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        a = math.sqrt(float(coords[:3] @ coords[:3]))
        if a >= math.pi:
            raise SingularJacobianError(f"rotation angle {a:.6f} outside (0, pi)")
        ad = self.ad(coords)
        inv = _jr_inv_from_ad(ad)
        jr = _jr_from_ad(ad, a)
        if np.max(np.abs(jr @ inv - np.eye(self.dim))) > 1e-9:
            inv = np.linalg.solve(jr, np.eye(self.dim))
            if np.max(np.abs(jr @ inv - np.eye(self.dim))) > 1e-9:
                raise SingularJacobianError("right Jacobian inverse failed to verify")
        return inv


@lru_cache(maxsize=None)
def sek_group(kappa: int, pinned: bool = False) -> SEKGroup:
    return SEKGroup(kappa, pinned)


SO3 = sek_group(0)
SE3 = sek_group(1)
SE23 = sek_group(2)


# ---------------------------------------------------------------------------
# Typed operations
# ---------------------------------------------------------------------------


def hat(zeta: TangentVector) -> np.ndarray:
    """Lie-algebra matrix of a tangent vector: [phi]x block plus rho columns."""
    n = zeta.kappa + 3
    m = np.zeros((n, n))
    m[:3, :3] = skew(zeta.phi)
    m[:3, 3:] = zeta.rhos.T
    return m


def vee(m: np.ndarray) -> TangentVector:
    """Inverse of ``hat``."""
    kappa = m.shape[0] - 3
    return TangentVector(kappa, unskew(m[:3, :3]), m[:3, 3:].T)


def exp_map(zeta: TangentVector) -> GroupElement:
    """Group exponential: Rodrigues rotation and V(phi)-mapped translations."""
    return _sek_exp(zeta.coords, zeta.kappa)


def log_map(x: GroupElement) -> TangentVector:
    """Principal logarithm; raises AngleAtPiError near angle pi."""
    return TangentVector.from_coords(x.kappa, x.log())


def adjoint_rep(x: GroupElement) -> np.ndarray:
    """Matrix of the conjugate action Ad_X, satisfying X hat(z) X^-1 = hat(Ad_X z)."""
    return x.adjoint()


def adjoint_alg(zeta: TangentVector) -> np.ndarray:
    """Matrix of ad_zeta, satisfying hat(ad_zeta eta) = [hat zeta, hat eta]."""
    return _sek_ad(zeta.coords, zeta.kappa)


def right_jacobian(zeta: TangentVector) -> np.ndarray:
    """Right Jacobian of SE_k(3) as a degree-4 polynomial in ad_zeta."""
    return sek_group(zeta.kappa).jr(zeta.coords)


def right_jacobian_inv(zeta: TangentVector) -> np.ndarray:
    """Inverse right Jacobian via the truncated Bernoulli series."""
    return sek_group(zeta.kappa).jr_inv(zeta.coords)


def bch_first_order(zeta: TangentVector, eta: TangentVector) -> TangentVector:
    """First-order composition of exponentials: zeta + J_r^-1(zeta) eta."""
    if zeta.kappa != eta.kappa:
        raise DimensionMismatchError("tangent vectors have different kappa")
    return TangentVector.from_coords(
        zeta.kappa, zeta.coords + right_jacobian_inv(zeta) @ eta.coords)
