"""Synthetic ground truth: trajectories, landmark fields, radar + IMU streams.

Trajectories are planar, heading-following, and analytic (positions,
velocities, accelerations, and body rates in closed form), with a stationary
lead-in followed by a smooth speed ramp so an estimator can gravity-align
from the first samples.  Radar scans contain every landmark inside the
field of view, converted to polar coordinates, with Doppler synthesized as
the exact projection of the sensor velocity onto the true bearing (so all
measurement residuals vanish at ground truth in noiseless mode).  Noise
injection reuses the polar sampling model and is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .factors import Extrinsics, ImuNoise, ImuSample
from .manifold import Rotation
from .radar_model import NoiseParams, PolarPoint, RadarScan

MIN_VISIBLE_RANGE = 0.2  # m, keeps polar conversion well-conditioned


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesize one dataset."""

    shape: str = "circle"  # circle | figure-eight | straight
    speed: float = 1.0  # m/s, cruise speed
    duration: float = 60.0  # s
    radius: float = 5.0  # m, circle radius / figure-eight half-extent
    lead_in: float = 1.5  # s, stationary period before the ramp
    ramp: float = 1.0  # s, smooth speed ramp length
    scan_start: float = 0.5  # s, first radar scan (leaves IMU for alignment)
    landmark_count: int = 200
    bounding_box: tuple = ((-10.0, 10.0), (-10.0, 10.0), (-2.0, 2.0))
    seed: int = 0
    scan_rate: float = 10.0  # Hz
    imu_rate: float = 200.0  # Hz
    fov_azimuth: float = 1.0472  # rad, half-angle
    fov_elevation: float = 0.35  # rad, half-angle
    max_range: float = 20.0  # m
    noise: NoiseParams = NoiseParams(0.1, 0.02, 0.01)
    imu_noise: ImuNoise = ImuNoise()
    extrinsics: Extrinsics = field(default_factory=Extrinsics.identity)
    noisy: bool = False
    doppler_noise_sigma: float = 0.0  # stress-test hook, default off

    def __post_init__(self):
        if self.shape not in ("circle", "figure-eight", "straight"):
            raise ValueError(f"unknown trajectory shape {self.shape!r}")
        for name in ("speed", "duration", "radius", "scan_rate", "imu_rate", "max_range"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"scenario.{name} must be positive")
        if self.landmark_count < 0:
            raise ValueError("landmark_count must be non-negative")


@dataclass
class GroundTruth:
    """Scan-time states, the landmark field, and per-point correspondence."""

    times: np.ndarray  # (n,)
    positions: np.ndarray  # (n,3)
    quaternions: np.ndarray  # (n,4) wxyz
    velocities: np.ndarray  # (n,3)
    landmarks: np.ndarray  # (m,3)
    labels: list  # per scan: (k,) landmark indices, aligned with scan points
    empty_scans: list  # scan indices with zero visible landmarks
    degenerate: bool = False  # any scan saw nothing


def _speed_profile(t, lead_in, ramp, v):
    """Cruise-speed fraction and its time derivative at time t."""
    if t <= lead_in:
        return 0.0, 0.0
    if ramp <= 0.0 or t >= lead_in + ramp:
        return v, 0.0
    u = (t - lead_in) / ramp
    return v * (3 * u * u - 2 * u**3), v * (6 * u - 6 * u * u) / ramp


def _arc_length(t, lead_in, ramp, v):
    if t <= lead_in:
        return 0.0
    if ramp <= 0.0:
        return v * (t - lead_in)
    if t >= lead_in + ramp:
        return 0.5 * v * ramp + v * (t - lead_in - ramp)
    u = (t - lead_in) / ramp
    return v * ramp * (u**3 - 0.5 * u**4)


def trajectory_state(s: Scenario, t: float):
    """Pose, velocity, acceleration, and body rate at time t.

    Returns (p, yaw, v_world, a_world, omega_body); orientation is
    Rz(yaw) (planar motion, heading along the path tangent, starting at +x).
    """
    spd, dspd = _speed_profile(t, s.lead_in, s.ramp, s.speed)
    sigma = _arc_length(t, s.lead_in, s.ramp, s.speed)
    if s.shape == "straight":
        return (np.array([sigma, 0.0, 0.0]), 0.0,
                np.array([spd, 0.0, 0.0]), np.array([dspd, 0.0, 0.0]),
                np.zeros(3))
    if s.shape == "circle":
        rho = s.radius
        psi = sigma / rho
        tang = np.array([np.cos(psi), np.sin(psi), 0.0])
        norm = np.array([-np.sin(psi), np.cos(psi), 0.0])
        p = np.array([rho * np.sin(psi), rho * (1.0 - np.cos(psi)), 0.0])
        return (p, psi, spd * tang, dspd * tang + (spd**2 / rho) * norm,
                np.array([0.0, 0.0, spd / rho]))
    # figure-eight: Lissajous warped so the cruise speed is the path maximum,
    # rotated so the initial heading is +x
    a = s.radius
    scale = a * np.sqrt(2.0)
    tau = sigma / scale
    dtau = spd / scale
    ddtau = dspd / scale
    c, s2 = np.cos(tau), np.sin(tau)
    f = np.array([s2, s2 * c, 0.0]) * a
    f1 = np.array([c, np.cos(2 * tau), 0.0]) * a
    f2 = np.array([-s2, -2 * np.sin(2 * tau), 0.0]) * a
    rot = np.array([[np.cos(-np.pi / 4), -np.sin(-np.pi / 4), 0.0],
                    [np.sin(-np.pi / 4), np.cos(-np.pi / 4), 0.0],
                    [0.0, 0.0, 1.0]])
    f, f1, f2 = rot @ f, rot @ f1, rot @ f2
    p = f
    vel = f1 * dtau
    acc = f2 * dtau**2 + f1 * ddtau
    psi = np.arctan2(f1[1], f1[0])
    speed2 = float(f1[0] ** 2 + f1[1] ** 2)
    psi_dot = (f1[0] * f2[1] - f1[1] * f2[0]) / speed2 * dtau
    return p, psi, vel, acc, np.array([0.0, 0.0, psi_dot])


def _yaw_rotation(psi: float) -> Rotation:
    return Rotation.from_rotvec([0.0, 0.0, psi])


def generate(s: Scenario):
    """Synthesize (GroundTruth, radar scans, IMU samples) for a scenario.

    Noiseless streams are built first; if the scenario is noisy, corrupt()
    is applied with seeds derived from the scenario seed (one stream for
    landmark placement, one for measurement noise).
    """
    ss = np.random.SeedSequence(s.seed)
    lm_seed, noise_seed = ss.spawn(2)
    rng = np.random.default_rng(lm_seed)
    box = np.asarray(s.bounding_box, dtype=float)
    landmarks = rng.uniform(box[:, 0], box[:, 1], size=(s.landmark_count, 3))

    g_w = np.array([0.0, 0.0, -9.81])
    imu_dt = 1.0 / s.imu_rate
    n_imu = int(np.floor(s.duration / imu_dt + 1e-9)) + 1
    imu = []
    for k in range(n_imu):
        t = k * imu_dt
        _, psi, _, acc, omega = trajectory_state(s, t)
        rot = _yaw_rotation(psi)
        f = rot.matrix.T @ (acc - g_w)
        imu.append(ImuSample(t, omega, f))

    scan_dt = 1.0 / s.scan_rate
    k0 = int(np.ceil(s.scan_start / scan_dt - 1e-9))
    scan_times = [k * scan_dt for k in range(k0, int(np.floor(s.duration / scan_dt + 1e-9)) + 1)]

    r_e = s.extrinsics.rotation.matrix
    t_e = s.extrinsics.translation
    scans, labels, empty_scans = [], [], []
    times, positions, quats, vels = [], [], [], []
    for si, t in enumerate(scan_times):
        p_w, psi, vel, _, omega = trajectory_state(s, t)
        rot = _yaw_rotation(psi)
        times.append(t)
        positions.append(p_w)
        quats.append(rot.q)
        vels.append(vel)

        if s.landmark_count:
            local = (landmarks - p_w) @ rot.matrix  # world -> body
            radar = (local - t_e) @ r_e  # body -> radar
            rng_to = np.linalg.norm(radar, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                theta = np.arctan2(radar[:, 1], radar[:, 0])
                phi = np.arcsin(np.clip(radar[:, 2] / np.maximum(rng_to, 1e-12), -1, 1))
            vis = (
                (rng_to >= MIN_VISIBLE_RANGE)
                & (rng_to <= s.max_range)
                & (np.abs(theta) <= s.fov_azimuth)
                & (np.abs(phi) <= s.fov_elevation)
            )
            idx = np.nonzero(vis)[0]
        else:
            idx = np.array([], dtype=int)

        k_vec = r_e.T @ (rot.matrix.T @ vel + np.cross(omega, t_e))
        points = []
        for j in idx:
            bearing = radar[j] / rng_to[j]
            points.append(PolarPoint(float(rng_to[j]), float(theta[j]),
                                     float(phi[j]), float(bearing @ k_vec)))
        scans.append(RadarScan(t, points))
        labels.append(idx)
        if idx.size == 0:
            empty_scans.append(si)

    gt = GroundTruth(
        times=np.array(times), positions=np.array(positions),
        quaternions=np.array(quats), velocities=np.array(vels),
        landmarks=landmarks, labels=labels,
        empty_scans=empty_scans, degenerate=bool(empty_scans),
    )
    if s.noisy:
        scans, imu = corrupt(scans, imu, s.noise, s.imu_noise,
                             seed=noise_seed,
                             doppler_sigma=s.doppler_noise_sigma)
    return gt, scans, imu


def corrupt(scans, imu, noise: NoiseParams, imu_noise: ImuNoise, seed,
            doppler_sigma: float = 0.0):
    """Apply measurement noise to radar and IMU streams (deterministic per seed).

    Point order inside each scan is unchanged, so ground-truth labels stay
    valid.  Radar noise follows the polar model (additive range noise,
    tangent-plane bearing perturbation); IMU noise is white with the
    discrete per-sample sigma density*sqrt(rate).
    """
    from .radar_model import sample_noisy_point_rng

    rng = np.random.default_rng(seed)
    noisy_scans = []
    for scan in scans:
        pts = []
        for p in scan.points:
            q = sample_noisy_point_rng(p, noise, rng)
            if doppler_sigma > 0.0:
                q = PolarPoint(q.r, q.theta, q.phi,
                               q.doppler + rng.normal(0.0, doppler_sigma))
            pts.append(q)
        noisy_scans.append(RadarScan(scan.t, pts))

    noisy_imu = []
    if len(imu) >= 2:
        rate = 1.0 / (imu[1].t - imu[0].t)
    else:
        rate = 100.0
    sg = imu_noise.gyro_noise * np.sqrt(rate)
    sa = imu_noise.accel_noise * np.sqrt(rate)
    for samp in imu:
        noisy_imu.append(
            ImuSample(samp.t, samp.w + rng.normal(0.0, sg, 3),
                      samp.a + rng.normal(0.0, sa, 3))
        )
    return noisy_scans, noisy_imu


def with_seed(s: Scenario, seed: int) -> Scenario:
    return replace(s, seed=seed)
