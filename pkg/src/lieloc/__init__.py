"""Matrix Lie group estimation toolkit and multi-robot localization simulator."""

from .liegroups import (
    AngleAtPiError,
    DimensionMismatchError,
    GroupElement,
    LieGroupError,
    SE3,
    SE23,
    SEKGroup,
    SO3,
    SingularJacobianError,
    TangentVector,
    adjoint_alg,
    adjoint_rep,
    bch_first_order,
    exp_map,
    hat,
    log_map,
    right_jacobian,
    right_jacobian_inv,
    rodrigues,
    sek_group,
    skew,
    so3_log,
    vee,
    vmat,
    vmat_inv,
)
from .products import (
    POSE_VEL_GROUP,
    STATE_GROUP,
    VEL_GROUP,
    ProductElement,
    ProductGroup,
    measurement_element,
    measurement_parts,
    pose_of_state,
    se3_element,
    state_element,
    state_parts,
    velocity_element,
)
from .stochastic import (
    CorrelatedSet,
    LinearConstraint,
    NonPsdResultError,
    RankDeficientError,
    SingularJointError,
    StochasticElement,
    WeightError,
    cross_cov_step,
    st_average,
    st_compose,
    st_difference,
    st_fuse,
    st_fuse_constrained,
    st_inverse,
    symmetrize,
)
from .ekf import (
    FilterState,
    GateDecision,
    MeasurementModel,
    ProcessModel,
    SingularInnovationCovError,
    innovation,
    mahalanobis_gate,
    predict,
    update,
)
from .models import (
    FrameExtrinsics,
    GravityModel,
    ImuSample,
    InsufficientSamplesError,
    MarkerObservation,
    PoseMessage,
    StaleMessageError,
    UnknownMarkerError,
    VelocitySample,
    assemble_pose_velocity_measurement,
    calibrate_imu_bias,
    follower1_pseudo_pose,
    follower2_pseudo_pose,
    imu_process,
    leader_pseudo_pose,
    make_imu_model,
    make_pose_velocity_model,
    make_velocity_model,
    process_noise,
    velocity_measurement,
)
from .sim import (
    ConfigError,
    FaultSpec,
    MarkerSpec,
    NoiseSpec,
    PoseSpec,
    Rates,
    RobotSpec,
    Scenario,
    SimLog,
    TrajectorySpec,
    generate_ground_truth,
    leader_circle_scenario,
    run_scenario,
    synthesize_sensors,
    three_robot_scenario,
)
from .metrics import MetricsReport, compute_metrics, time_to_position_error
from .config import load_scenario, save_scenario, scenario_from_dict, scenario_to_dict

__version__ = "0.1.0"
