"""Accuracy, gating and consistency metrics over simulation logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sim import RobotLog, SimLog


@dataclass
class RobotMetrics:
    rmse_pos_m: float
    rmse_rot_rad: float
    max_pos_err_m: float
    final_pos_err_m: float
    mean_cov_trace: float
    mean_cov_trace_pose: float
    mean_nees: float
    gate_total: int
    gate_accepted: int
    gate_applied: int
    gate_faulted: int
    gate_faulted_rejected: int
    gate_nominal_accepted: int

    def to_dict(self) -> dict:
        return {k: (int(v) if isinstance(v, (int, np.integer)) else float(v))
                for k, v in self.__dict__.items()}


@dataclass
class MetricsReport:
    variant: str
    seed: int
    robots: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "seed": self.seed,
                "robots": {rid: m.to_dict() for rid, m in self.robots.items()}}


def geodesic_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Rotation angle between two rotation matrices."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def position_errors(log: RobotLog) -> np.ndarray:
    return np.linalg.norm(log.est_pos - log.true_pos, axis=1)


def rotation_errors(log: RobotLog) -> np.ndarray:
    return np.array([geodesic_angle(a, b)
                     for a, b in zip(log.est_rot, log.true_rot)])


def time_to_position_error(log: RobotLog, threshold_m: float) -> float:
    """First time the position error exceeds the threshold (inf if never)."""
    errs = position_errors(log)
    idx = np.argmax(errs > threshold_m)
    if errs[idx] <= threshold_m:
        return math.inf
    return float(log.t[idx])


def robot_metrics(log: RobotLog) -> RobotMetrics:
    pos_err = position_errors(log)
    rot_err = rotation_errors(log)
    gates = log.gates
    faulted = [g for g in gates if g.faulted]
    nominal = [g for g in gates if not g.faulted]
    return RobotMetrics(
        rmse_pos_m=float(np.sqrt(np.mean(pos_err ** 2))),
        rmse_rot_rad=float(np.sqrt(np.mean(rot_err ** 2))),
        max_pos_err_m=float(np.max(pos_err)),
        final_pos_err_m=float(pos_err[-1]),
        mean_cov_trace=float(np.mean(log.cov_trace)),
        mean_cov_trace_pose=float(np.mean(log.cov_trace_pose)),
        mean_nees=float(np.nanmean(log.nees)),
        gate_total=len(gates),
        gate_accepted=sum(g.accepted for g in gates),
        gate_applied=sum(g.applied for g in gates),
        gate_faulted=len(faulted),
        gate_faulted_rejected=sum(not g.accepted for g in faulted),
        gate_nominal_accepted=sum(g.accepted for g in nominal),
    )


def compute_metrics(log: SimLog) -> MetricsReport:
    """Per-robot RMSE, gate statistics and consistency summary for one run."""
    report = MetricsReport(variant=log.variant, seed=log.seed)
    for rid, rlog in log.robots.items():
        report.robots[rid] = robot_metrics(rlog)
    return report
