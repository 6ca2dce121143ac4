"""YAML scenario configuration with lossless round-tripping.

The on-disk format is a nested mapping whose keys carry their units
(speed_mps, t_start_s, ...).  Parsing produces the plain-data Scenario used
by the simulator; serializing a parsed scenario and parsing it again yields
an equal Scenario.
"""

from __future__ import annotations

from dataclasses import asdict

import yaml

from .sim import (
    ConfigError,
    FaultSpec,
    MarkerSpec,
    NoiseSpec,
    PoseSpec,
    Rates,
    RobotSpec,
    Scenario,
    TrajectorySpec,
)

SCHEMA_VERSION = 1


def _tupled(value):
    """Recursively convert lists to tuples so specs compare by value."""
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**{k: _tupled(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    if data.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {data.get('schema')}")
    robots = []
    for i, rd in enumerate(data.get("robots", [])):
        rd = dict(rd)
        where = f"robots[{i}]"
        traj = _build(TrajectorySpec, rd.pop("trajectory", {}), f"{where}.trajectory")
        noise = _build(NoiseSpec, rd.pop("noise", {}), f"{where}.noise")
        extra = {}
        if rd.get("filter_noise") is not None:
            extra["filter_noise"] = _build(NoiseSpec, rd.pop("filter_noise"),
                                           f"{where}.filter_noise")
        for key in ("z_wo", "z_bc", "z_mb"):
            if key in rd:
                extra[key] = _build(PoseSpec, rd.pop(key), f"{where}.{key}")
        robots.append(_build(
            RobotSpec, {**rd, "trajectory": traj, "noise": noise, **extra}, where))
    markers = []
    for i, md in enumerate(data.get("markers", [])):
        md = dict(md)
        where = f"markers[{i}]"
        if "pose_u" in md:
            md["pose_u"] = _build(PoseSpec, md["pose_u"], f"{where}.pose_u")
        markers.append(_build(MarkerSpec, md, where))
    faults = [_build(FaultSpec, fd, f"faults[{i}]")
              for i, fd in enumerate(data.get("faults", []))]
    top = {k: v for k, v in data.items()
           if k not in ("schema", "robots", "markers", "faults", "rates", "z_uw")}
    rates = _build(Rates, data.get("rates", {}), "rates")
    z_uw = _build(PoseSpec, data.get("z_uw", {}), "z_uw")
    try:
        return Scenario(robots=tuple(robots), markers=tuple(markers),
                        faults=tuple(faults), rates=rates, z_uw=z_uw,
                        **{k: _tupled(v) for k, v in top.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_to_dict(sc: Scenario) -> dict:
    def plain(obj):
        d = asdict(obj)
        return {k: (list(v) if isinstance(v, tuple) else plain_value(v))
                for k, v in d.items()}

    def plain_value(v):
        if isinstance(v, dict):
            return {k: plain_value(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain_value(x) for x in v]
        return v

    out = {
        "schema": SCHEMA_VERSION,
        "duration_s": sc.duration_s,
        "seed": sc.seed,
        "gravity_mps2": sc.gravity_mps2,
        "threshold": sc.threshold,
        "epsilon": sc.epsilon,
        "staleness_s": sc.staleness_s,
        "rates": plain(sc.rates),
        "z_uw": plain(sc.z_uw),
        "robots": [],
        "markers": [plain(m) for m in sc.markers],
        "faults": [plain(f) for f in sc.faults],
    }
    for r in sc.robots:
        rd = plain(r)
        for optional in ("z_wo", "filter_noise"):
            if rd.get(optional) is None:
                rd.pop(optional, None)
        out["robots"].append(rd)
    return out


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"YAML parse error{loc}: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sc), fh, sort_keys=False)
