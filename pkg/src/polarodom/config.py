"""Run configuration: typed dataclasses with a strict YAML round trip.

The file format is nested key-value sections; unknown keys are errors so
typos in ablation scripts fail loudly.  The full key table lives in
docs/formats.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .factors import Extrinsics, ImuNoise
from .manifold import Rotation
from .radar_model import ABLATION_MODES, NoiseParams
from .simworld import Scenario

MATCHING_MODES = ("probability", "euclidean")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SensorSpec:
    scan_rate: float = 10.0  # Hz
    imu_rate: float = 200.0  # Hz
    fov_azimuth: float = 1.0472  # rad, half-angle
    fov_elevation: float = 0.35  # rad, half-angle
    max_range: float = 20.0  # m

    def __post_init__(self):
        for name in ("scan_rate", "imu_rate", "fov_azimuth", "fov_elevation", "max_range"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"sensor.{name} must be positive")
        if self.fov_azimuth > np.pi or self.fov_elevation > 0.5 * np.pi:
            raise ConfigError("sensor field of view exceeds the physical range")


@dataclass(frozen=True)
class TrajectorySpec:
    shape: str = "circle"
    speed: float = 1.0  # m/s
    duration: float = 60.0  # s
    radius: float = 5.0  # m
    lead_in: float = 1.5  # s
    ramp: float = 1.0  # s
    scan_start: float = 0.5  # s
    landmark_count: int = 200
    bounding_box: tuple = ((-10.0, 10.0), (-10.0, 10.0), (-2.0, 2.0))
    noisy: bool = True
    doppler_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.shape not in ("circle", "figure-eight", "straight"):
            raise ConfigError(f"unknown trajectory shape {self.shape!r}")
        if self.duration <= 0.0:
            raise ConfigError("trajectory.duration must be positive")
        if self.speed <= 0.0 or self.radius <= 0.0:
            raise ConfigError("trajectory.speed and radius must be positive")
        box = np.asarray(self.bounding_box, dtype=float)
        if box.shape != (3, 2) or np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError("bounding_box must be three (min, max) pairs")


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    damping_init: float = 1e-4
    cost_tolerance: float = 1e-8  # relative cost decrease
    step_tolerance: float = 1e-10  # step norm
    max_damping_retries: int = 16

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("solver.max_iterations must be >= 1")
        for name in ("damping_init", "cost_tolerance", "step_tolerance"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"solver.{name} must be positive")


@dataclass(frozen=True)
class EstimatorOptions:
    window: int = 10  # frames
    matching: str = "probability"
    ablation: str = "full"
    alpha: float = 0.0  # covariance scale exponent (2^alpha)
    doppler_floor: float = 0.05  # m/s
    doppler_gate: float = 5.0  # m/s, residual gate at the propagated guess
    euclidean_gate: float = 2.0  # m, baseline matcher gate
    gravity: float = 9.81  # m/s^2, world z-up
    gravity_align_window: float = 0.5  # s of IMU used for the bootstrap
    report_newest: bool = False  # report newest pose instead of the evicted one

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("estimator.window must be >= 1")
        if self.matching not in MATCHING_MODES:
            raise ConfigError(f"estimator.matching must be one of {MATCHING_MODES}")
        if self.ablation not in ABLATION_MODES:
            raise ConfigError(f"estimator.ablation must be one of {ABLATION_MODES}")
        if not np.isfinite(self.alpha):
            raise ConfigError("estimator.alpha must be finite")
        for name in ("doppler_floor", "doppler_gate", "euclidean_gate", "gravity",
                     "gravity_align_window"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"estimator.{name} must be positive")


@dataclass(frozen=True, eq=False)
class RunConfig:
    noise: NoiseParams = NoiseParams(0.1, 0.02, 0.01)
    imu_noise: ImuNoise = ImuNoise()
    sensor: SensorSpec = SensorSpec()
    extrinsics: Extrinsics = field(default_factory=Extrinsics.identity)
    trajectory: TrajectorySpec = TrajectorySpec()
    estimator: EstimatorOptions = EstimatorOptions()
    solver: SolverOptions = SolverOptions()
    seeds: tuple = (0,)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and to_dict(self) == to_dict(other)

    def scenario(self, seed: int | None = None) -> Scenario:
        t = self.trajectory
        return Scenario(
            shape=t.shape, speed=t.speed, duration=t.duration, radius=t.radius,
            lead_in=t.lead_in, ramp=t.ramp, scan_start=t.scan_start,
            landmark_count=t.landmark_count, bounding_box=t.bounding_box,
            seed=self.seeds[0] if seed is None else int(seed),
            scan_rate=self.sensor.scan_rate, imu_rate=self.sensor.imu_rate,
            fov_azimuth=self.sensor.fov_azimuth,
            fov_elevation=self.sensor.fov_elevation,
            max_range=self.sensor.max_range,
            noise=self.noise, imu_noise=self.imu_noise,
            extrinsics=self.extrinsics,
            noisy=t.noisy, doppler_noise_sigma=t.doppler_noise_sigma,
        )

    def with_overrides(self, **kwargs) -> "RunConfig":
        """Replace estimator-level fields by keyword (matching, ablation, ...)."""
        est_fields = {f.name for f in fields(EstimatorOptions)}
        est_kwargs = {k: v for k, v in kwargs.items() if k in est_fields}
        rest = {k: v for k, v in kwargs.items() if k not in est_fields}
        cfg = self
        if est_kwargs:
            cfg = replace(cfg, estimator=replace(cfg.estimator, **est_kwargs))
        if rest:
            cfg = replace(cfg, **rest)
        return cfg


def to_dict(cfg: RunConfig) -> dict:
    t = cfg.trajectory
    return {
        "noise": {
            "sigma_r": cfg.noise.sigma_r,
            "sigma_theta": cfg.noise.sigma_theta,
            "sigma_phi": cfg.noise.sigma_phi,
        },
        "imu_noise": {
            "gyro_noise": cfg.imu_noise.gyro_noise,
            "accel_noise": cfg.imu_noise.accel_noise,
            "gyro_walk": cfg.imu_noise.gyro_walk,
            "accel_walk": cfg.imu_noise.accel_walk,
        },
        "sensor": {
            "scan_rate": cfg.sensor.scan_rate,
            "imu_rate": cfg.sensor.imu_rate,
            "fov_azimuth": cfg.sensor.fov_azimuth,
            "fov_elevation": cfg.sensor.fov_elevation,
            "max_range": cfg.sensor.max_range,
        },
        "extrinsics": {
            "rotation_wxyz": [float(v) for v in cfg.extrinsics.rotation.q],
            "translation": [float(v) for v in cfg.extrinsics.translation],
        },
        "trajectory": {
            "shape": t.shape, "speed": t.speed, "duration": t.duration,
            "radius": t.radius, "lead_in": t.lead_in, "ramp": t.ramp,
            "scan_start": t.scan_start, "landmark_count": t.landmark_count,
            "bounding_box": [list(map(float, pair)) for pair in t.bounding_box],
            "noisy": t.noisy, "doppler_noise_sigma": t.doppler_noise_sigma,
        },
        "estimator": {
            "window": cfg.estimator.window,
            "matching": cfg.estimator.matching,
            "ablation": cfg.estimator.ablation,
            "alpha": cfg.estimator.alpha,
            "doppler_floor": cfg.estimator.doppler_floor,
            "doppler_gate": cfg.estimator.doppler_gate,
            "euclidean_gate": cfg.estimator.euclidean_gate,
            "gravity": cfg.estimator.gravity,
            "gravity_align_window": cfg.estimator.gravity_align_window,
            "report_newest": cfg.estimator.report_newest,
        },
        "solver": {
            "max_iterations": cfg.solver.max_iterations,
            "damping_init": cfg.solver.damping_init,
            "cost_tolerance": cfg.solver.cost_tolerance,
            "step_tolerance": cfg.solver.step_tolerance,
            "max_damping_retries": cfg.solver.max_damping_retries,
        },
        "seeds": [int(v) for v in cfg.seeds],
    }


def _take(section: dict, name: str, keys) -> dict:
    unknown = set(section) - set(keys)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {sorted(unknown)}")
    return dict(section)


def from_dict(raw: dict) -> RunConfig:
    known_sections = ("noise", "imu_noise", "sensor", "extrinsics", "trajectory",
                      "estimator", "solver", "seeds")
    unknown = set(raw) - set(known_sections)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    def section(name, cls):
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"section {name} must be a mapping")
        kwargs = _take(data, name, [f.name for f in fields(cls)])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} section: {exc}") from exc

    noise = section("noise", NoiseParams) if "noise" in raw else NoiseParams(0.1, 0.02, 0.01)
    imu_noise = section("imu_noise", ImuNoise) if "imu_noise" in raw else ImuNoise()
    sensor = section("sensor", SensorSpec)
    traj_raw = _take(raw.get("trajectory", {}), "trajectory",
                     [f.name for f in fields(TrajectorySpec)])
    if "bounding_box" in traj_raw:
        traj_raw["bounding_box"] = tuple(tuple(map(float, p)) for p in traj_raw["bounding_box"])
    trajectory = TrajectorySpec(**traj_raw)
    estimator = section("estimator", EstimatorOptions)
    solver = section("solver", SolverOptions)

    ext_raw = _take(raw.get("extrinsics", {}), "extrinsics", ["rotation_wxyz", "translation"])
    q = ext_raw.get("rotation_wxyz", [1.0, 0.0, 0.0, 0.0])
    tr = ext_raw.get("translation", [0.0, 0.0, 0.0])
    try:
        extrinsics = Extrinsics(Rotation(np.asarray(q, dtype=float)),
                                np.asarray(tr, dtype=float))
    except ValueError as exc:
        raise ConfigError(f"invalid extrinsics: {exc}") from exc
    if extrinsics.translation.shape != (3,):
        raise ConfigError("extrinsics.translation must have 3 components")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds must be a non-empty list of integers")
    return RunConfig(
        noise=noise, imu_noise=imu_noise, sensor=sensor, extrinsics=extrinsics,
        trajectory=trajectory, estimator=estimator, solver=solver,
        seeds=tuple(int(v) for v in seeds),
    )


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)


def default_config() -> RunConfig:
    return RunConfig()


def standard_trend_config() -> RunConfig:
    """Noisy desk-scale scenario for the ablation and covariance-scale studies.

    Sized so a full four-mode, ten-seed ablation fits in minutes; the IMU is
    deliberately a coarse consumer-grade unit so the radar weighting visibly
    matters at this horizon.
    """
    return RunConfig(
        trajectory=TrajectorySpec(duration=15.0, noisy=True, landmark_count=100),
        sensor=SensorSpec(fov_azimuth=0.9),
        imu_noise=ImuNoise(gyro_noise=0.01, accel_noise=0.15,
                           gyro_walk=2e-4, accel_walk=2e-3),
        seeds=tuple(range(10)),
    )
