"""Block-diagonal product groups for the state and measurement spaces.

The state group couples an extended pose (rotation, position, velocity) with
a bias block whose rotation is pinned to identity; the measurement group
couples a pose with a pinned velocity block.  Every operation -- exp, log,
Adjoint, ad, right Jacobian -- acts blockwise, so the product machinery just
delegates to the SE_k(3) kernels.

Tangent coordinate layouts (pinned slots are structurally zero but kept, so
coordinate dimensions match the paper-sized covariance matrices):

    state (dim 18):        (dtheta, dp, dv, 0_3, db_g, db_a)
    pose+velocity (dim 12): (dtheta, dp, 0_3, dv)
    velocity only (dim 6):  (0_3, dv)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .liegroups import (
    DimensionMismatchError,
    GroupElement,
    SEKGroup,
    sek_group,
)


class ProductGroup:
    """Direct product of SE_k(3) blocks, embedded block-diagonally."""

    def __init__(self, blocks: tuple[SEKGroup, ...]):
        self.blocks = tuple(blocks)
        self.dim = sum(b.dim for b in self.blocks)
        offs = np.cumsum([0] + [b.dim for b in self.blocks])
        self.slices = tuple(slice(int(offs[i]), int(offs[i + 1]))
                            for i in range(len(self.blocks)))
        self.pinned_mask = np.concatenate([b.pinned_mask for b in self.blocks])

    def __repr__(self):
        return " x ".join(repr(b) for b in self.blocks)

    def __eq__(self, other):
        return isinstance(other, ProductGroup) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def split(self, coords: np.ndarray) -> list[np.ndarray]:
        coords = np.asarray(coords, dtype=float).reshape(self.dim)
        return [coords[s] for s in self.slices]

    def identity(self) -> "ProductElement":
        return ProductElement(self, tuple(b.identity() for b in self.blocks))

    def exp(self, coords: np.ndarray) -> "ProductElement":
        parts = self.split(coords)
        return ProductElement(
            self, tuple(b.exp(c) for b, c in zip(self.blocks, parts)))

    def _blockdiag(self, mats: list[np.ndarray]) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for s, m in zip(self.slices, mats):
            out[s, s] = m
        return out

    def ad(self, coords: np.ndarray) -> np.ndarray:
        parts = self.split(coords)
        return self._blockdiag([b.ad(c) for b, c in zip(self.blocks, parts)])

    def jr(self, coords: np.ndarray) -> np.ndarray:
        parts = self.split(coords)
        return self._blockdiag([b.jr(c) for b, c in zip(self.blocks, parts)])

    def jr_inv(self, coords: np.ndarray) -> np.ndarray:
        parts = self.split(coords)
        return self._blockdiag([b.jr_inv(c) for b, c in zip(self.blocks, parts)])


@dataclass(frozen=True)
class ProductElement:
    """Member of a product group: one SE_k(3) element per block."""

    group: ProductGroup
    parts: tuple[GroupElement, ...]

    def __post_init__(self):
        if len(self.parts) != len(self.group.blocks):
            raise DimensionMismatchError("wrong number of blocks")
        for blk, el in zip(self.group.blocks, self.parts):
            if el.kappa != blk.kappa:
                raise DimensionMismatchError("block kappa mismatch")

    @property
    def dim(self) -> int:
        return self.group.dim

    def matrix(self) -> np.ndarray:
        mats = [p.matrix() for p in self.parts]
        n = sum(m.shape[0] for m in mats)
        out = np.zeros((n, n))
        o = 0
        for m in mats:
            k = m.shape[0]
            out[o:o + k, o:o + k] = m
            o += k
        return out

    def compose(self, other: "ProductElement") -> "ProductElement":
        if self.group != other.group:
            raise DimensionMismatchError("cannot compose elements of different groups")
        return ProductElement(
            self.group, tuple(a @ b for a, b in zip(self.parts, other.parts)))

    def __matmul__(self, other: "ProductElement") -> "ProductElement":
        return self.compose(other)

    def inverse(self) -> "ProductElement":
        return ProductElement(self.group, tuple(p.inverse() for p in self.parts))

    def log(self) -> np.ndarray:
        return np.concatenate([p.log() for p in self.parts])

    def adjoint(self) -> np.ndarray:
        return self.group._blockdiag([p.adjoint() for p in self.parts])

    def retract(self, coords: np.ndarray) -> "ProductElement":
        return self.compose(self.group.exp(coords))


@lru_cache(maxsize=None)
def _product(spec: tuple) -> ProductGroup:
    return ProductGroup(tuple(sek_group(k, p) for k, p in spec))


# State group: extended pose block plus pinned (b_g, b_a) bias block.
STATE_GROUP = _product(((2, False), (2, True)))

# Pose + body-velocity measurement group.
POSE_VEL_GROUP = _product(((1, False), (1, True)))

# Body-velocity-only measurement group (pinned translation block).
VEL_GROUP = _product(((1, True),))

# Tangent slices of the state layout (dtheta, dp, dv, pinned, db_g, db_a).
STATE_THETA = slice(0, 3)
STATE_POS = slice(3, 6)
STATE_VEL = slice(6, 9)
STATE_PINNED = slice(9, 12)
STATE_BG = slice(12, 15)
STATE_BA = slice(15, 18)
POSE_SLICE = slice(0, 6)  # SE(3) marginal rows of the state tangent


def state_element(rotation, position, velocity, gyro_bias, accel_bias) -> ProductElement:
    """Build a state-group member from its physical fields."""
    upper = GroupElement(2, rotation, np.array([position, velocity], dtype=float))
    lower = GroupElement(2, np.eye(3), np.array([gyro_bias, accel_bias], dtype=float))
    return ProductElement(STATE_GROUP, (upper, lower))


def state_parts(x: ProductElement):
    """Unpack a state element to (R, p, v, b_g, b_a)."""
    upper, lower = x.parts
    return (upper.rotation, upper.translations[0], upper.translations[1],
            lower.translations[0], lower.translations[1])


def measurement_element(rotation, position, velocity) -> ProductElement:
    """Build a pose+velocity measurement-group member."""
    pose = GroupElement(1, rotation, np.array([position], dtype=float))
    vel = GroupElement(1, np.eye(3), np.array([velocity], dtype=float))
    return ProductElement(POSE_VEL_GROUP, (pose, vel))


def measurement_parts(z: ProductElement):
    pose, vel = z.parts
    return pose.rotation, pose.translations[0], vel.translations[0]


def velocity_element(velocity) -> ProductElement:
    """Build a velocity-only measurement-group member."""
    return ProductElement(
        VEL_GROUP, (GroupElement(1, np.eye(3), np.array([velocity], dtype=float)),))


def se3_element(rotation, position) -> GroupElement:
    return GroupElement(1, rotation, np.array([position], dtype=float))


def pose_of_state(x: ProductElement) -> GroupElement:
    """SE(3) marginal of a state element (its rotation and position)."""
    upper = x.parts[0]
    return GroupElement(1, upper.rotation, upper.translations[:1])
