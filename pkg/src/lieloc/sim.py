"""Multi-robot scenario simulator.

Ground truth is generated from piecewise-constant planar twists (straight
legs and arcs), for which the group Euler step is exact, so a noiseless run
is a fixed point of the filter.  Sensors are synthesized by inverting the
measurement models, with per-stream counter-based RNG keyed by
(seed, robot, stream) for determinism under any execution order.  Each tick
every robot predicts on its IMU stream; measurement epochs trigger either a
gated pose+velocity update or a velocity-only fallback, and robots publish
their SE(3) estimate to the network at the message rate.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .liegroups import GroupElement, rodrigues
from .ekf import FilterState, mahalanobis_gate, predict, update
from .models import (
    DEFAULT_EPSILON,
    DEFAULT_GRAVITY,
    DEFAULT_STALENESS_S,
    FrameExtrinsics,
    GravityModel,
    ImuSample,
    MarkerObservation,
    PoseMessage,
    StaleMessageError,
    VelocitySample,
    assemble_pose_velocity_measurement,
    follower1_pseudo_pose,
    follower2_pseudo_pose,
    leader_pseudo_pose,
    make_imu_model,
    make_pose_velocity_model,
    make_velocity_model,
    process_noise,
)
from .products import (
    POSE_SLICE,
    STATE_PINNED,
    pose_of_state,
    se3_element,
    state_element,
    velocity_element,
)

# Physically meaningful state coordinates (the pinned bias-block rotation
# slot is structurally zero and carries no probability mass).
_PHYS_IDX = np.r_[0:9, 12:18]
from .stochastic import StochasticElement, psd_floor

ROLE_ORDER = {"leader": 0, "follower1": 1, "follower2": 2}
VARIANTS = ("imuOnly", "imuVelocity", "full", "fullNoGate")

# Measurement-noise defaults (variances); marker covariances are
# diag(rot_var I3, pos_var I3).
DEFAULT_Q_GYRO = 1e-6
DEFAULT_Q_ACCEL = 1.0
DEFAULT_Q_BIAS_GYRO = 1e-6
DEFAULT_Q_BIAS_ACCEL = 1.0
DEFAULT_R_VELOCITY = 1.5e-4
DEFAULT_LEADER_MARKER = (0.0075, 0.005)
DEFAULT_FOLLOWER_MARKER = (0.0050, 0.0016)
DEFAULT_P0 = 1e-2
DEFAULT_THRESHOLD = 40.0


class ConfigError(Exception):
    """Scenario configuration is invalid."""


# ---------------------------------------------------------------------------
# Scenario description (plain data; config round-trips through these)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseSpec:
    """SE(3) pose as a rotation vector (rad) plus translation (m)."""

    rotvec_rad: tuple = (0.0, 0.0, 0.0)
    translation_m: tuple = (0.0, 0.0, 0.0)

    def element(self) -> GroupElement:
        return se3_element(rodrigues(np.asarray(self.rotvec_rad, dtype=float)),
                           np.asarray(self.translation_m, dtype=float))


@dataclass(frozen=True)
class TrajectorySpec:
    """Planar motion profile: circle, corner circuit, or waypoint tour."""

    kind: str = "circle"
    center_m: tuple = (0.0, 0.0, 0.0)
    radius_m: float = 1.0
    speed_mps: float = 0.1
    phase_rad: float = 0.0
    leg_length_m: float = 2.0
    turn_radius_m: float = 0.4
    start_m: tuple = (0.0, 0.0, 0.0)
    start_yaw_rad: float = 0.0
    waypoints_m: tuple = ()
    turn_rate_radps: float = 0.5


@dataclass(frozen=True)
class NoiseSpec:
    """Noise configuration: IMU densities, direct measurement variances."""

    gyro_density: float = DEFAULT_Q_GYRO
    accel_density: float = DEFAULT_Q_ACCEL
    gyro_bias_density: float = DEFAULT_Q_BIAS_GYRO
    accel_bias_density: float = DEFAULT_Q_BIAS_ACCEL
    velocity_var: float = DEFAULT_R_VELOCITY
    marker_rot_var: float = DEFAULT_LEADER_MARKER[0]
    marker_pos_var: float = DEFAULT_LEADER_MARKER[1]

    def scaled(self, factor: float) -> "NoiseSpec":
        return NoiseSpec(*(factor * v for v in (
            self.gyro_density, self.accel_density, self.gyro_bias_density,
            self.accel_bias_density, self.velocity_var, self.marker_rot_var,
            self.marker_pos_var)))


@dataclass(frozen=True)
class RobotSpec:
    id: str
    role: str
    trajectory: TrajectorySpec
    noise: NoiseSpec = NoiseSpec()  # true noise used to synthesize sensors
    filter_noise: NoiseSpec | None = None  # assumed by the filter; None: same
    observes_marker: int | None = None
    message_source: str | None = None
    z_wo: PoseSpec | None = None  # None: odometry origin at the start pose
    z_bc: PoseSpec = PoseSpec()
    z_mb: PoseSpec = PoseSpec()
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    p0: float = DEFAULT_P0

    @property
    def assumed_noise(self) -> NoiseSpec:
        return self.noise if self.filter_noise is None else self.filter_noise


@dataclass(frozen=True)
class MarkerSpec:
    id: int
    kind: str  # "stationary" | "mobile"
    pose_u: PoseSpec = PoseSpec()  # stationary markers: pose in {U}
    carrier: str = ""  # mobile markers: carrying robot id


@dataclass(frozen=True)
class FaultSpec:
    robot: str
    t_start_s: float
    t_end_s: float
    mode: str  # "position_jump" | "rotation_jump" | "noise_inflation"
    offset_m: tuple = (0.0, 0.0, 0.0)
    angle_rad: float = 0.0
    axis: tuple = (0.0, 0.0, 1.0)
    factor: float = 1.0


@dataclass(frozen=True)
class Rates:
    imu_hz: int = 100
    velocity_hz: int = 20
    marker_hz: int = 10
    message_hz: int = 20


@dataclass(frozen=True)
class Scenario:
    robots: tuple
    markers: tuple = ()
    faults: tuple = ()
    rates: Rates = Rates()
    duration_s: float = 60.0
    seed: int = 0
    gravity_mps2: float = 9.80637
    threshold: float = DEFAULT_THRESHOLD
    epsilon: float = DEFAULT_EPSILON
    staleness_s: float = DEFAULT_STALENESS_S
    z_uw: PoseSpec = PoseSpec()

    def __post_init__(self):
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "faults", tuple(self.faults))
        validate_scenario(self)

    def robot(self, robot_id: str) -> RobotSpec:
        for r in self.robots:
            if r.id == robot_id:
                return r
        raise ConfigError(f"unknown robot id {robot_id!r}")


def validate_scenario(sc: Scenario) -> None:
    r = sc.rates
    if min(r.imu_hz, r.velocity_hz, r.marker_hz, r.message_hz) <= 0:
        raise ConfigError("rates must be positive")
    if not (r.imu_hz >= r.velocity_hz >= r.marker_hz):
        raise ConfigError("rates must satisfy imu >= velocity >= marker")
    for num, den, what in ((r.imu_hz, r.velocity_hz, "velocity"),
                           (r.velocity_hz, r.marker_hz, "marker"),
                           (r.message_hz, r.marker_hz, "marker-vs-message"),
                           (r.imu_hz, r.message_hz, "message")):
        if num % den != 0:
            raise ConfigError(f"{what} rate must divide evenly (got {num}/{den})")
    if sc.duration_s <= 0:
        raise ConfigError("duration must be positive")
    ids = [robot.id for robot in sc.robots]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate robot ids")
    roles = [robot.role for robot in sc.robots]
    for role in roles:
        if role not in ROLE_ORDER:
            raise ConfigError(f"unknown role {role!r}")
    if "follower1" in roles and "leader" not in roles:
        raise ConfigError("follower1 requires at least one leader")
    marker_ids = {m.id for m in sc.markers}
    for m in sc.markers:
        if m.kind not in ("stationary", "mobile"):
            raise ConfigError(f"unknown marker kind {m.kind!r}")
        if m.kind == "mobile" and m.carrier not in ids:
            raise ConfigError(f"mobile marker {m.id} carrier {m.carrier!r} unknown")
    for robot in sc.robots:
        if robot.observes_marker is not None and robot.observes_marker not in marker_ids:
            raise ConfigError(f"robot {robot.id} observes unregistered marker")
        if robot.message_source is not None and robot.message_source not in ids:
            raise ConfigError(f"robot {robot.id} message source unknown")
    for f in sc.faults:
        if f.robot not in ids:
            raise ConfigError(f"fault targets unknown robot {f.robot!r}")
        if not (f.t_start_s < f.t_end_s <= sc.duration_s):
            raise ConfigError("fault window must satisfy t_start < t_end <= duration")
        if f.mode not in ("position_jump", "rotation_jump", "noise_inflation"):
            raise ConfigError(f"unknown fault mode {f.mode!r}")


# ---------------------------------------------------------------------------
# Ground truth from piecewise-constant planar twists
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Segment:
    duration: float
    yaw_rate: float
    speed: float


class PlanarTwistPath:
    """Closed-form planar trajectory built from constant-twist segments.

    Within a segment the body twist (yaw rate, forward speed) is constant,
    so both the continuous motion and the group Euler step agree exactly.
    """

    def __init__(self, start_m, start_yaw_rad: float, segments):
        self._starts_t = [0.0]
        self._starts_p = [np.asarray(start_m, dtype=float).copy()]
        self._starts_yaw = [float(start_yaw_rad)]
        self.segments = list(segments)
        for seg in self.segments:
            p, yaw = self._advance(self._starts_p[-1], self._starts_yaw[-1], seg,
                                   seg.duration)
            self._starts_t.append(self._starts_t[-1] + seg.duration)
            self._starts_p.append(p)
            self._starts_yaw.append(yaw)

    @staticmethod
    def _advance(p0, yaw0, seg: _Segment, tau: float):
        if abs(seg.yaw_rate) < 1e-15:
            direction = np.array([math.cos(yaw0), math.sin(yaw0), 0.0])
            return p0 + seg.speed * tau * direction, yaw0
        rho = seg.speed / seg.yaw_rate
        yaw = yaw0 + seg.yaw_rate * tau
        dp = rho * np.array([math.sin(yaw) - math.sin(yaw0),
                             math.cos(yaw0) - math.cos(yaw), 0.0])
        return p0 + dp, yaw

    def state_at(self, t: float):
        """(R, p, v, omega_body, a_world) in the world frame at time t."""
        idx = bisect_right(self._starts_t, t) - 1
        idx = min(idx, len(self.segments) - 1)
        seg = self.segments[idx]
        tau = t - self._starts_t[idx]
        p, yaw = self._advance(self._starts_p[idx], self._starts_yaw[idx], seg, tau)
        r = rodrigues(np.array([0.0, 0.0, yaw]))
        v = seg.speed * np.array([math.cos(yaw), math.sin(yaw), 0.0])
        omega = np.array([0.0, 0.0, seg.yaw_rate])
        a = seg.yaw_rate * np.array([-v[1], v[0], 0.0])
        return r, p, v, omega, a


def build_path(spec: TrajectorySpec, duration_s: float) -> PlanarTwistPath:
    if spec.kind == "circle":
        if spec.radius_m <= 0 or spec.speed_mps < 0:
            raise ConfigError("circle needs positive radius and non-negative speed")
        w = spec.speed_mps / spec.radius_m
        center = np.asarray(spec.center_m, dtype=float)
        start = center + spec.radius_m * np.array(
            [math.cos(spec.phase_rad), math.sin(spec.phase_rad), 0.0])
        yaw0 = spec.phase_rad + math.pi / 2.0
        return PlanarTwistPath(start, yaw0, [_Segment(duration_s + 1.0, w,
                                                      spec.speed_mps)])
    if spec.kind == "corner":
        if spec.turn_radius_m < 0.4 - 1e-12:
            raise ConfigError("turn radius below the platform minimum of 0.4 m")
        leg_t = spec.leg_length_m / spec.speed_mps
        turn_w = spec.speed_mps / spec.turn_radius_m
        turn_t = (math.pi / 2.0) / turn_w
        segs = []
        while sum(s.duration for s in segs) < duration_s + 1.0:
            segs.append(_Segment(leg_t, 0.0, spec.speed_mps))
            segs.append(_Segment(turn_t, turn_w, spec.speed_mps))
        return PlanarTwistPath(spec.start_m, spec.start_yaw_rad, segs)
    if spec.kind == "waypoints":
        pts = [np.asarray(p, dtype=float) for p in spec.waypoints_m]
        if len(pts) < 2:
            raise ConfigError("waypoint path needs at least two points")
        segs = []
        yaw = spec.start_yaw_rad
        for a, b in zip(pts[:-1], pts[1:]):
            d = b - a
            target = math.atan2(d[1], d[0])
            dyaw = (target - yaw + math.pi) % (2.0 * math.pi) - math.pi
            if abs(dyaw) > 1e-12:
                segs.append(_Segment(abs(dyaw) / spec.turn_rate_radps,
                                     math.copysign(spec.turn_rate_radps, dyaw), 0.0))
            segs.append(_Segment(float(np.linalg.norm(d)) / spec.speed_mps, 0.0,
                                 spec.speed_mps))
            yaw = target
        segs.append(_Segment(duration_s + 1.0, 0.0, 0.0))
        return PlanarTwistPath(pts[0], spec.start_yaw_rad, segs)
    raise ConfigError(f"unknown trajectory kind {spec.kind!r}")


def generate_ground_truth(scenario: Scenario) -> dict:
    """World-frame truth paths, one per robot."""
    return {r.id: build_path(r.trajectory, scenario.duration_s)
            for r in scenario.robots}


# ---------------------------------------------------------------------------
# Sensor synthesis
# ---------------------------------------------------------------------------

_STREAM_IMU, _STREAM_VEL, _STREAM_MARKER = 0, 1, 2


def _stream_rng(seed: int, robot_index: int, stream: int) -> np.random.Generator:
    key = (int(seed) & ((1 << 64) - 1)) | (robot_index << 64) | (stream << 96)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class SensorStreams:
    imu: dict
    velocity: dict
    markers: dict


def _marker_cov(noise: NoiseSpec) -> np.ndarray:
    c = np.zeros((6, 6))
    c[:3, :3] = noise.marker_rot_var * np.eye(3)
    c[3:, 3:] = noise.marker_pos_var * np.eye(3)
    return c


def _fault_for(scenario: Scenario, robot_id: str, t: float) -> FaultSpec | None:
    for f in scenario.faults:
        if f.robot == robot_id and f.t_start_s <= t < f.t_end_s:
            return f
    return None


def _world_pose(truth: PlanarTwistPath, t: float) -> GroupElement:
    r, p, _, _, _ = truth.state_at(t)
    return se3_element(r, p)


def _marker_world_pose(marker: MarkerSpec, truths: dict, ext_mb: dict,
                       t: float) -> GroupElement:
    if marker.kind == "stationary":
        return marker.pose_u.element()
    return _world_pose(truths[marker.carrier], t) @ ext_mb[marker.carrier].inverse()


def synthesize_sensors(truths: dict, scenario: Scenario) -> SensorStreams:
    """Invert the sensor models along the truth, adding noise and faults.

    IMU noise uses the continuous-density convention (per-sample variance
    Q / dt); velocity and marker noises are direct covariances.  Biases are
    constant offsets; their random walk lives only in the filter's Q.
    """
    g_vec = np.array([0.0, 0.0, -scenario.gravity_mps2])
    dt = 1.0 / scenario.rates.imu_hz
    n_ticks = int(round(scenario.duration_s * scenario.rates.imu_hz))
    vel_div = scenario.rates.imu_hz // scenario.rates.velocity_hz
    marker_div = scenario.rates.imu_hz // scenario.rates.marker_hz

    ext_mb = {r.id: r.z_mb.element() for r in scenario.robots}
    marker_by_id = {m.id: m for m in scenario.markers}

    imu, vel, markers = {}, {}, {}
    for idx, r in enumerate(scenario.robots):
        rng_imu = _stream_rng(scenario.seed, idx, _STREAM_IMU)
        rng_vel = _stream_rng(scenario.seed, idx, _STREAM_VEL)
        rng_mark = _stream_rng(scenario.seed, idx, _STREAM_MARKER)
        bg = np.asarray(r.gyro_bias, dtype=float)
        ba = np.asarray(r.accel_bias, dtype=float)
        sig_g = math.sqrt(r.noise.gyro_density / dt)
        sig_a = math.sqrt(r.noise.accel_density / dt)
        samples = []
        for k in range(n_ticks):
            t = k * dt
            rot, _, _, omega, a_world = truths[r.id].state_at(t)
            w_meas = omega + bg + sig_g * rng_imu.standard_normal(3)
            a_meas = rot.T @ (a_world - g_vec) + ba + sig_a * rng_imu.standard_normal(3)
            samples.append(ImuSample(w_meas, a_meas, t))
        imu[r.id] = samples

        sig_v = math.sqrt(r.noise.velocity_var)
        r_v = r.assumed_noise.velocity_var * np.eye(3)
        vsamples = []
        for k in range(vel_div, n_ticks + 1, vel_div):
            t = k * dt
            rot, _, v, _, _ = truths[r.id].state_at(t)
            vsamples.append(VelocitySample(
                rot.T @ v + sig_v * rng_vel.standard_normal(3), t, r_v))
        vel[r.id] = {s.t: s for s in vsamples}

        obs = {}
        if r.observes_marker is not None:
            m = marker_by_id[r.observes_marker]
            cov = _marker_cov(r.assumed_noise)
            true_cov = _marker_cov(r.noise)
            chol = (np.linalg.cholesky(true_cov) if np.any(true_cov)
                    else np.zeros((6, 6)))
            z_bc = r.z_bc.element()
            se3 = z_bc.group
            for k in range(marker_div, n_ticks + 1, marker_div):
                t = k * dt
                cam_world = _world_pose(truths[r.id], t) @ z_bc
                marker_world = _marker_world_pose(m, truths, ext_mb, t)
                nominal = cam_world.inverse() @ marker_world
                zeta = chol @ rng_mark.standard_normal(6)
                fault = _fault_for(scenario, r.id, t)
                if fault is not None and fault.mode == "noise_inflation":
                    zeta = fault.factor * zeta
                noisy = nominal @ se3.exp(zeta)
                if fault is not None and fault.mode == "position_jump":
                    noisy = noisy @ se3.exp(np.concatenate(
                        [np.zeros(3), np.asarray(fault.offset_m, dtype=float)]))
                elif fault is not None and fault.mode == "rotation_jump":
                    axis = np.asarray(fault.axis, dtype=float)
                    axis = axis / max(1e-12, float(np.linalg.norm(axis)))
                    noisy = noisy @ se3.exp(np.concatenate(
                        [fault.angle_rad * axis, np.zeros(3)]))
                obs[t] = MarkerObservation(m.id, noisy, cov, t)
        markers[r.id] = obs
    return SensorStreams(imu=imu, velocity=vel, markers=markers)


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GateRecord:
    t: float
    d_squared: float
    accepted: bool
    applied: bool  # whether the pose update ran
    faulted: bool


@dataclass
class RobotLog:
    t: np.ndarray
    true_rot: np.ndarray
    true_pos: np.ndarray
    true_vel: np.ndarray
    est_rot: np.ndarray
    est_pos: np.ndarray
    est_vel: np.ndarray
    cov_trace: np.ndarray
    cov_trace_pose: np.ndarray
    nees: np.ndarray
    gates: list
    messages: list


@dataclass
class SimLog:
    variant: str
    seed: int
    duration_s: float
    threshold: float
    robots: dict


def _extrinsics(scenario: Scenario, truths: dict) -> FrameExtrinsics:
    z_uw = scenario.z_uw.element()
    z_wo, z_bc, z_mb = {}, {}, {}
    for r in scenario.robots:
        if r.z_wo is None:
            rot, p, _, _, _ = truths[r.id].state_at(0.0)
            z_wo[r.id] = z_uw.inverse() @ se3_element(rot, p)
        else:
            z_wo[r.id] = r.z_wo.element()
        z_bc[r.id] = r.z_bc.element()
        z_mb[r.id] = r.z_mb.element()
    marker_map = {}
    for m in scenario.markers:
        if m.kind == "stationary":
            marker_map[m.id] = ("stationary", m.pose_u.element())
        else:
            marker_map[m.id] = ("mobile", m.carrier)
    return FrameExtrinsics(z_uw=z_uw, z_wo=z_wo, z_bc=z_bc, z_mb=z_mb,
                           marker_map=marker_map)


def _truth_in_odom(truth: PlanarTwistPath, z_uo: GroupElement, t: float):
    """O-frame truth (R_OB, p, v) given the world->odometry offset."""
    r, p, v, _, _ = truth.state_at(t)
    r_ou, p_ou = z_uo.rotation.T, -z_uo.rotation.T @ z_uo.translations[0]
    return r_ou @ r, r_ou @ p + p_ou, r_ou @ v


def run_scenario(scenario: Scenario, variant: str = "full") -> SimLog:
    """Execute every robot's filter pipeline over the synthesized sensors."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; use one of {VARIANTS}")
    truths = generate_ground_truth(scenario)
    streams = synthesize_sensors(truths, scenario)
    ext = _extrinsics(scenario, truths)
    gravity = GravityModel(np.array([0.0, 0.0, -scenario.gravity_mps2]))

    order = sorted(scenario.robots, key=lambda r: (ROLE_ORDER[r.role], r.id))
    dt = 1.0 / scenario.rates.imu_hz
    n_ticks = int(round(scenario.duration_s * scenario.rates.imu_hz))
    vel_div = scenario.rates.imu_hz // scenario.rates.velocity_hz
    marker_div = scenario.rates.imu_hz // scenario.rates.marker_hz
    msg_div = scenario.rates.imu_hz // scenario.rates.message_hz

    z_uo = {r.id: ext.z_uw @ ext.z_wo[r.id] for r in scenario.robots}
    filters, proc_models, vel_models, true_bias = {}, {}, {}, {}
    logs = {}
    mailbox: dict = {}

    for r in order:
        rot0, p0, v0 = _truth_in_odom(truths[r.id], z_uo[r.id], 0.0)
        mean0 = state_element(rot0, p0, v0, np.zeros(3), np.zeros(3))
        cov0 = r.p0 * np.eye(18)
        cov0[STATE_PINNED, STATE_PINNED] = 0.0  # pinned slot stays massless
        est0 = StochasticElement(mean0, cov0, check=False)
        filters[r.id] = FilterState(est0, 0.0)
        fn = r.assumed_noise
        q = process_noise(fn.gyro_density, fn.accel_density,
                          fn.gyro_bias_density, fn.accel_bias_density)
        proc_models[r.id] = make_imu_model(q, gravity)
        vel_models[r.id] = make_velocity_model(
            fn.velocity_var * np.eye(3), scenario.epsilon)
        true_bias[r.id] = (np.asarray(r.gyro_bias, dtype=float),
                           np.asarray(r.accel_bias, dtype=float))
        n = n_ticks + 1
        logs[r.id] = RobotLog(
            t=np.zeros(n), true_rot=np.zeros((n, 3, 3)), true_pos=np.zeros((n, 3)),
            true_vel=np.zeros((n, 3)), est_rot=np.zeros((n, 3, 3)),
            est_pos=np.zeros((n, 3)), est_vel=np.zeros((n, 3)),
            cov_trace=np.zeros(n), cov_trace_pose=np.zeros(n), nees=np.zeros(n),
            gates=[], messages=[])

    def publish(r: RobotSpec, t: float):
        est = filters[r.id].estimate
        pose = pose_of_state(est.mean)
        cov6 = psd_floor(est.cov[POSE_SLICE, POSE_SLICE])
        mailbox[r.id] = PoseMessage(r.id, StochasticElement(pose, cov6, check=False), t)
        logs[r.id].messages.append(t)

    def log_tick(r: RobotSpec, k: int, t: float):
        log = logs[r.id]
        rot_t, p_t, v_t = _truth_in_odom(truths[r.id], z_uo[r.id], t)
        est = filters[r.id].estimate
        upper = est.mean.parts[0]
        log.t[k] = t
        log.true_rot[k] = rot_t
        log.true_pos[k] = p_t
        log.true_vel[k] = v_t
        log.est_rot[k] = upper.rotation
        log.est_pos[k] = upper.translations[0]
        log.est_vel[k] = upper.translations[1]
        log.cov_trace[k] = np.trace(est.cov)
        log.cov_trace_pose[k] = np.trace(est.cov[POSE_SLICE, POSE_SLICE])
        bg, ba = true_bias[r.id]
        true_state = state_element(rot_t, p_t, v_t, bg, ba)
        err = (est.mean.inverse() @ true_state).log()[_PHYS_IDX]
        cov_phys = est.cov[np.ix_(_PHYS_IDX, _PHYS_IDX)]
        try:
            log.nees[k] = float(err @ np.linalg.solve(cov_phys, err))
        except np.linalg.LinAlgError:
            log.nees[k] = np.nan

    for r in order:
        publish(r, 0.0)
        log_tick(r, 0, 0.0)

    for k in range(1, n_ticks + 1):
        t = k * dt
        for r in order:
            sample = streams.imu[r.id][k - 1]
            u = np.concatenate([sample.omega, sample.accel])
            filters[r.id] = predict(filters[r.id], proc_models[r.id], u, dt)

            vel_epoch = (k % vel_div == 0)
            marker_epoch = (k % marker_div == 0)
            vel_sample = streams.velocity[r.id].get(t) if vel_epoch else None
            pose_done = False

            if (marker_epoch and variant in ("full", "fullNoGate")
                    and r.observes_marker is not None and vel_sample is not None):
                obs = streams.markers[r.id].get(t)
                pseudo = None
                if obs is not None:
                    try:
                        if r.role == "leader":
                            pseudo = leader_pseudo_pose(obs, ext, r.id)
                        elif r.message_source is not None and r.message_source in mailbox:
                            msg = mailbox[r.message_source]
                            builder = (follower1_pseudo_pose if r.role == "follower1"
                                       else follower2_pseudo_pose)
                            pseudo = builder(obs, msg, ext, r.id,
                                             staleness_s=scenario.staleness_s)
                    except StaleMessageError:
                        pseudo = None
                if pseudo is not None:
                    z, r12 = assemble_pose_velocity_measurement(
                        pseudo, vel_sample, scenario.epsilon)
                    model = make_pose_velocity_model(r12)
                    gate = mahalanobis_gate(filters[r.id], model, z,
                                            scenario.threshold)
                    apply_pose = gate.accepted or variant == "fullNoGate"
                    if apply_pose:
                        filters[r.id] = update(filters[r.id], model, z)
                        pose_done = True
                    logs[r.id].gates.append(GateRecord(
                        t, gate.d_squared, gate.accepted, apply_pose,
                        _fault_for(scenario, r.id, t) is not None))

            if vel_epoch and not pose_done and variant != "imuOnly":
                filters[r.id] = update(filters[r.id], vel_models[r.id],
                                       velocity_element(vel_sample.v))

            if k % msg_div == 0:
                publish(r, t)
            log_tick(r, k, t)

    return SimLog(variant=variant, seed=scenario.seed,
                  duration_s=scenario.duration_s, threshold=scenario.threshold,
                  robots=logs)


# ---------------------------------------------------------------------------
# Canonical scenario builders
# ---------------------------------------------------------------------------


def leader_circle_scenario(seed: int = 0, duration_s: float = 60.0,
                           radius_m: float = 1.0, speed_mps: float = 0.1,
                           noise: NoiseSpec | None = None,
                           faults: tuple = ()) -> Scenario:
    """Single leader circling under a ceiling marker; paper-default noise."""
    noise = NoiseSpec() if noise is None else noise
    robot = RobotSpec(
        id="leader", role="leader",
        trajectory=TrajectorySpec(kind="circle", radius_m=radius_m,
                                  speed_mps=speed_mps),
        noise=noise, observes_marker=25,
        z_bc=PoseSpec(translation_m=(0.05, 0.0, 0.15)))
    marker = MarkerSpec(id=25, kind="stationary",
                        pose_u=PoseSpec(rotvec_rad=(math.pi, 0.0, 0.0),
                                        translation_m=(0.0, 0.0, 1.2)))
    return Scenario(robots=(robot,), markers=(marker,), faults=tuple(faults),
                    duration_s=duration_s, seed=seed)


def three_robot_scenario(seed: int = 0, duration_s: float = 60.0,
                         noise_scale: float = 1.0,
                         faults: tuple = ()) -> Scenario:
    """Leader plus follower chain on concentric circles.

    The leader circles under a stationary ceiling marker; follower 1 rides a
    wider circle observing the leader's mobile marker; follower 2 rides a
    still wider circle observing follower 1's marker.
    """
    base = NoiseSpec().scaled(noise_scale)
    follower_noise = replace(base,
                             marker_rot_var=DEFAULT_FOLLOWER_MARKER[0] * noise_scale,
                             marker_pos_var=DEFAULT_FOLLOWER_MARKER[1] * noise_scale)
    leader_assumed = NoiseSpec() if noise_scale == 0.0 else None
    follower_assumed = (replace(NoiseSpec(),
                                marker_rot_var=DEFAULT_FOLLOWER_MARKER[0],
                                marker_pos_var=DEFAULT_FOLLOWER_MARKER[1])
                        if noise_scale == 0.0 else None)
    # Angular rate shared so inter-robot distances stay constant; trailing
    # distances grow down the chain so marker levers (and hence transported
    # marker noise) increase from follower 1 to follower 2.
    leader_r, f1_r, f2_r = 0.5, 3.5, 7.5
    w = 0.1 / leader_r
    leader = RobotSpec(
        id="leader", role="leader",
        trajectory=TrajectorySpec(kind="circle", radius_m=leader_r, speed_mps=0.1),
        noise=base, filter_noise=leader_assumed, observes_marker=25,
        z_bc=PoseSpec(translation_m=(0.05, 0.0, 0.15)),
        z_mb=PoseSpec(translation_m=(-0.15, 0.0, 0.10)))
    f1 = RobotSpec(
        id="f1", role="follower1",
        trajectory=TrajectorySpec(kind="circle", radius_m=f1_r,
                                  speed_mps=w * f1_r),
        noise=follower_noise, filter_noise=follower_assumed,
        observes_marker=102, message_source="leader",
        z_bc=PoseSpec(translation_m=(0.10, 0.0, 0.10)),
        z_mb=PoseSpec(translation_m=(-0.15, 0.0, 0.10)))
    f2 = RobotSpec(
        id="f2", role="follower2",
        trajectory=TrajectorySpec(kind="circle", radius_m=f2_r,
                                  speed_mps=w * f2_r),
        noise=follower_noise, filter_noise=follower_assumed,
        observes_marker=104, message_source="f1",
        z_bc=PoseSpec(translation_m=(0.10, 0.0, 0.10)))
    markers = (
        MarkerSpec(id=25, kind="stationary",
                   pose_u=PoseSpec(rotvec_rad=(math.pi, 0.0, 0.0),
                                   translation_m=(0.0, 0.0, 1.0))),
        MarkerSpec(id=102, kind="mobile", carrier="leader"),
        MarkerSpec(id=104, kind="mobile", carrier="f1"),
    )
    return Scenario(robots=(leader, f1, f2), markers=markers,
                    faults=tuple(faults), duration_s=duration_s, seed=seed)
