"""Concrete sensor models: IMU kinematics, body-velocity and pseudo-pose updates.

The process model lives on the state group (extended pose + biases); updates
use either the velocity-only group or the pose+velocity group.  Pseudo-poses
are SE(3) measurements of a robot's odometry-frame pose assembled by chaining
known extrinsics, a camera observation of a fiducial marker, and (for
followers) a neighbor's communicated pose estimate.

Frame names: U user/world, W tracker, O per-robot odometry origin, B body,
C camera, M marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liegroups import GroupElement, LieGroupError, skew
from .ekf import MeasurementModel, ProcessModel
from .products import (
    POSE_VEL_GROUP,
    STATE_BA,
    STATE_BG,
    STATE_THETA,
    STATE_POS,
    STATE_VEL,
    ProductElement,
    measurement_element,
    state_parts,
    velocity_element,
)
from .stochastic import CorrelatedSet, StochasticElement, st_compose, st_inverse

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.80637])
DEFAULT_EPSILON = 1e-6
DEFAULT_STALENESS_S = 0.5
MIN_CALIBRATION_SAMPLES = 100


class UnknownMarkerError(LieGroupError):
    """Observed marker id is not registered."""


class StaleMessageError(LieGroupError):
    """Communicated estimate is older than the staleness bound."""


class InsufficientSamplesError(LieGroupError):
    """Too few static samples for bias calibration."""


@dataclass(frozen=True)
class ImuSample:
    omega: np.ndarray  # rad/s, body frame
    accel: np.ndarray  # m/s^2, specific force in body frame
    t: float


@dataclass(frozen=True)
class VelocitySample:
    v: np.ndarray  # m/s, body frame
    t: float
    cov: np.ndarray  # 3x3


@dataclass(frozen=True)
class MarkerObservation:
    marker_id: int
    rel_pose: GroupElement  # camera -> marker, SE(3)
    cov: np.ndarray  # 6x6
    t: float


@dataclass(frozen=True)
class PoseMessage:
    sender_id: str
    se_pose: StochasticElement  # SE(3) pose estimate with 6x6 covariance
    t: float


@dataclass(frozen=True)
class GravityModel:
    g: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(3)
        if not 9.7 <= float(np.linalg.norm(g)) <= 9.9:
            raise ValueError("gravity magnitude outside plausible range")
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class FrameExtrinsics:
    """Deterministic frame registry for the whole robot network.

    ``z_wo``, ``z_bc`` and ``z_mb`` are keyed by robot id (marker->body for
    the marker mounted on that robot).  ``marker_map`` sends a marker id to
    either ("stationary", Z_UM) or ("mobile", carrier_robot_id).
    """

    z_uw: GroupElement
    z_wo: dict
    z_bc: dict
    z_mb: dict = field(default_factory=dict)
    marker_map: dict = field(default_factory=dict)

    def marker_entry(self, marker_id: int):
        try:
            return self.marker_map[marker_id]
        except KeyError:
            raise UnknownMarkerError(f"marker {marker_id} not registered") from None


# ---------------------------------------------------------------------------
# Process model
# ---------------------------------------------------------------------------


def imu_process(x: ProductElement, sample: ImuSample,
                gravity: GravityModel = GravityModel()) -> np.ndarray:
    """Tangent-space velocity of the state under an IMU reading.

    Rows: (omega - b_g, R^T v, a - b_a + R^T g, 0, 0, 0).  Bias rows are
    zero; their random walk enters through the process noise only.
    """
    r, _, v, bg, ba = state_parts(x)
    out = np.zeros(18)
    out[STATE_THETA] = sample.omega - bg
    out[STATE_POS] = r.T @ v
    out[STATE_VEL] = sample.accel - ba + r.T @ gravity.g
    return out


def imu_d_matrix(x: ProductElement, gravity: GravityModel) -> np.ndarray:
    """Analytic derivative of imu_process w.r.t. a right state perturbation."""
    r, _, v, _, _ = state_parts(x)
    d = np.zeros((18, 18))
    d[STATE_THETA, STATE_BG] = -np.eye(3)
    d[STATE_POS, STATE_THETA] = skew(r.T @ v)
    d[STATE_POS, STATE_VEL] = np.eye(3)
    d[STATE_VEL, STATE_THETA] = skew(r.T @ gravity.g)
    d[STATE_VEL, STATE_BA] = -np.eye(3)
    return d


def _cov3(q) -> np.ndarray:
    return float(q) * np.eye(3) if np.ndim(q) == 0 \
        else np.asarray(q, dtype=float).reshape(3, 3)


def process_noise(q_gyro, q_accel, q_bias_gyro, q_bias_accel) -> np.ndarray:
    """Assemble the 18x18 process noise density in the state tangent layout.

    Position and pinned-rotation rows carry no noise.
    """
    q = np.zeros((18, 18))
    q[STATE_THETA, STATE_THETA] = _cov3(q_gyro)
    q[STATE_VEL, STATE_VEL] = _cov3(q_accel)
    q[STATE_BG, STATE_BG] = _cov3(q_bias_gyro)
    q[STATE_BA, STATE_BA] = _cov3(q_bias_accel)
    return q


def make_imu_model(q: np.ndarray, gravity: GravityModel = GravityModel()) -> ProcessModel:
    """Process model whose input is the stacked (omega, accel) reading."""

    def f(x, u):
        return imu_process(x, ImuSample(u[:3], u[3:], 0.0), gravity)

    def d(x, u):
        return imu_d_matrix(x, gravity)

    return ProcessModel(f=f, q=q, d_matrix=d)


# ---------------------------------------------------------------------------
# Measurement models
# ---------------------------------------------------------------------------


def velocity_measurement(x: ProductElement) -> np.ndarray:
    """Noiseless body-velocity model value R^T v."""
    r, _, v, _, _ = state_parts(x)
    return r.T @ v


def _velocity_h(x: ProductElement) -> np.ndarray:
    r, _, v, _, _ = state_parts(x)
    h = np.zeros((6, 18))
    h[3:6, STATE_THETA] = skew(r.T @ v)
    h[3:6, STATE_VEL] = np.eye(3)
    return h


def make_velocity_model(r_v: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> MeasurementModel:
    """Body-velocity update on the pinned translation block group.

    The pinned rotation rows carry identically zero innovation and epsilon
    noise, making the 6x6 form equivalent to a plain R^3 update.
    """
    r_v = np.asarray(r_v, dtype=float).reshape(3, 3)
    r12 = np.zeros((6, 6))
    r12[:3, :3] = epsilon * np.eye(3)
    r12[3:, 3:] = r_v
    return MeasurementModel(
        h=lambda x: velocity_element(velocity_measurement(x)),
        r=r12,
        h_matrix=_velocity_h)


def _pose_velocity_h(x: ProductElement) -> np.ndarray:
    r, _, v, _, _ = state_parts(x)
    h = np.zeros((12, 18))
    h[0:3, STATE_THETA] = np.eye(3)
    h[3:6, STATE_POS] = np.eye(3)
    h[9:12, STATE_THETA] = skew(r.T @ v)
    h[9:12, STATE_VEL] = np.eye(3)
    return h


def pose_velocity_measurement(x: ProductElement) -> ProductElement:
    """Noiseless pose + body-velocity model value on the measurement group."""
    r, p, v, _, _ = state_parts(x)
    return measurement_element(r, p, r.T @ v)


def assemble_pose_velocity_measurement(
        pseudo: StochasticElement, vel: VelocitySample,
        epsilon: float = DEFAULT_EPSILON) -> tuple:
    """Pack a pseudo-pose and a velocity sample into one measurement.

    Returns the measurement-group element and its 12x12 block-diagonal
    covariance diag(R_p, eps I_3, R_v); the epsilon block regularizes the
    structurally exact pinned rows.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    pose = pseudo.mean
    z = measurement_element(pose.rotation, pose.translations[0], vel.v)
    r = np.zeros((12, 12))
    r[0:6, 0:6] = pseudo.cov
    r[6:9, 6:9] = epsilon * np.eye(3)
    r[9:12, 9:12] = np.asarray(vel.cov, dtype=float)
    return z, r


def make_pose_velocity_model(r12: np.ndarray) -> MeasurementModel:
    return MeasurementModel(
        h=pose_velocity_measurement, r=r12, h_matrix=_pose_velocity_h)


# ---------------------------------------------------------------------------
# Pseudo-pose construction chains
# ---------------------------------------------------------------------------


def _certain(mean: GroupElement) -> StochasticElement:
    return StochasticElement(mean, np.zeros((6, 6)), check=False)


def leader_pseudo_pose(obs: MarkerObservation, ext: FrameExtrinsics,
                       robot_id: str) -> StochasticElement:
    """Pose of a leader's body in its odometry frame from a stationary marker.

    Chain (Z_UW Z_WO)^-1 Z_UM (Z_BC Z_CM)^-1 built from the stochastic
    inverse and composition, so the covariance is the marker noise
    transported by the Adjoints of the deterministic legs.
    """
    kind, payload = ext.marker_entry(obs.marker_id)
    if kind != "stationary":
        raise UnknownMarkerError(
            f"marker {obs.marker_id} is not a stationary marker")
    z_um = payload
    left = _certain((ext.z_uw @ ext.z_wo[robot_id]).inverse() @ z_um)
    cam = StochasticElement(obs.rel_pose, obs.cov, check=False)
    body_to_marker = st_compose(
        CorrelatedSet((_certain(ext.z_bc[robot_id]), cam)))
    return st_compose(CorrelatedSet((left, st_inverse(body_to_marker))))


def _follower_pseudo_pose(obs: MarkerObservation, msg: PoseMessage,
                          ext: FrameExtrinsics, robot_id: str,
                          staleness_s: float) -> StochasticElement:
    kind, carrier = ext.marker_entry(obs.marker_id)
    if kind != "mobile":
        raise UnknownMarkerError(f"marker {obs.marker_id} is not a mobile marker")
    if carrier != msg.sender_id:
        raise UnknownMarkerError(
            f"marker {obs.marker_id} rides on {carrier}, message is from {msg.sender_id}")
    if obs.t - msg.t > staleness_s:
        raise StaleMessageError(
            f"message from {msg.sender_id} is {obs.t - msg.t:.3f}s old")
    left = _certain(ext.z_wo[robot_id].inverse() @ ext.z_wo[carrier])
    cam = StochasticElement(obs.rel_pose, obs.cov, check=False)
    body_to_neighbor = st_compose(CorrelatedSet((
        _certain(ext.z_bc[robot_id]), cam, _certain(ext.z_mb[carrier]))))
    return st_compose(CorrelatedSet(
        (left, msg.se_pose, st_inverse(body_to_neighbor))))


def follower1_pseudo_pose(obs: MarkerObservation, leader_msg: PoseMessage,
                          ext: FrameExtrinsics, robot_id: str,
                          staleness_s: float = DEFAULT_STALENESS_S) -> StochasticElement:
    """Follower pose from a leader's mobile marker plus its communicated estimate.

    Covariance is the sum of the transported marker noise and the
    transported leader uncertainty (the two sources are independent).
    """
    return _follower_pseudo_pose(obs, leader_msg, ext, robot_id, staleness_s)


def follower2_pseudo_pose(obs: MarkerObservation, neighbor_msg: PoseMessage,
                          ext: FrameExtrinsics, robot_id: str,
                          staleness_s: float = DEFAULT_STALENESS_S) -> StochasticElement:
    """Same chain as follower type 1 with another follower in the leader role."""
    return _follower_pseudo_pose(obs, neighbor_msg, ext, robot_id, staleness_s)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def calibrate_imu_bias(static_samples, gravity: GravityModel = GravityModel()):
    """Static bias offsets as averages of readings from a level, motionless robot.

    Returns (b_g0, b_a0); the accelerometer average is corrected for local
    gravity under the level-attitude assumption (R = I).
    """
    samples = list(static_samples)
    if len(samples) < MIN_CALIBRATION_SAMPLES:
        raise InsufficientSamplesError(
            f"need at least {MIN_CALIBRATION_SAMPLES} samples, got {len(samples)}")
    omegas = np.array([s.omega for s in samples], dtype=float)
    accels = np.array([s.accel for s in samples], dtype=float)
    bg0 = omegas.mean(axis=0)
    ba0 = accels.mean(axis=0) + gravity.g
    return bg0, ba0
