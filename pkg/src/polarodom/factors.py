"""Residual families for the sliding-window objective.

Three measurement residuals are built here, each with the covariance that
weights its Mahalanobis norm and analytic Jacobians for the solver:

* IMU preintegration between consecutive radar frames (standard on-manifold
  formulation with first-order bias correction; 15-dim residual ordered
  [dp, dtheta, dv, dba, dbg], matching the state retraction order).
* Doppler speed: projection of the radar-frame sensor velocity onto the
  bearing, minus the measured Doppler; its variance is the point covariance
  pushed through the direction-map Jacobian, floored so radially-moving
  points cannot get infinite weight.
* Point matching: world-frame difference between a landmark and the observed
  point; its covariance is the point covariance rotated into the world.

State retraction: position/velocity/biases additive, orientation composed on
the right with so3_exp(dtheta).  All Jacobians follow that convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import (
    Rotation,
    skew,
    so3_exp,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)
from .radar_model import PointCovariance, PolarPoint, bearing_of, polar_to_cartesian

# Variance floor for the Doppler residual: purely radial motion annihilates
# the propagated term, which would otherwise give that residual infinite
# weight in the optimizer.
DOPPLER_SIGMA_FLOOR = 0.05  # m/s


@dataclass
class NavState:
    """Per-frame robot state."""

    p: np.ndarray  # position, m (world)
    q: Rotation  # body-to-world orientation
    v: np.ndarray  # velocity, m/s (world)
    b_a: np.ndarray  # accelerometer bias, m/s^2
    b_g: np.ndarray  # gyroscope bias, rad/s
    t: float = 0.0

    def copy(self) -> "NavState":
        return NavState(
            self.p.copy(), Rotation(self.q.q), self.v.copy(),
            self.b_a.copy(), self.b_g.copy(), self.t,
        )

    def retract(self, delta: np.ndarray) -> "NavState":
        """Apply a 15-dim tangent step [dp, dtheta, dv, dba, dbg]."""
        return NavState(
            self.p + delta[0:3],
            self.q @ so3_exp(delta[3:6]),
            self.v + delta[6:9],
            self.b_a + delta[9:12],
            self.b_g + delta[12:15],
            self.t,
        )


@dataclass(frozen=True)
class Extrinsics:
    """Radar-to-IMU transform: x_imu = rotation @ x_radar + translation."""

    rotation: Rotation
    translation: np.ndarray

    @staticmethod
    def identity() -> "Extrinsics":
        return Extrinsics(Rotation.identity(), np.zeros(3))


@dataclass(frozen=True)
class ImuSample:
    t: float
    w: np.ndarray  # angular velocity, rad/s
    a: np.ndarray  # linear acceleration (specific force), m/s^2


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities of the inertial unit."""

    gyro_noise: float = 2e-3  # rad/s/sqrt(Hz)
    accel_noise: float = 2e-2  # m/s^2/sqrt(Hz)
    gyro_walk: float = 1e-5  # rad/s^2/sqrt(Hz)
    accel_walk: float = 1e-4  # m/s^3/sqrt(Hz)


@dataclass
class PreintegratedImu:
    """Compressed IMU motion between two radar frames.

    Internally the sums are gravity-free (the usual convention, so the
    residual below stays independent of the start orientation); the public
    delta_p/delta_v properties fold in the caller-supplied start-body-frame
    gravity, i.e. they are the estimated true relative motion: zero for a
    stationary platform.
    """

    dt: float
    delta_rot: Rotation  # gravity-free rotation delta
    dv_f: np.ndarray  # gravity-free velocity delta (start body frame)
    dp_f: np.ndarray  # gravity-free position delta (start body frame)
    gravity_body: np.ndarray  # world gravity expressed in the start body frame
    covariance: np.ndarray  # (15,15), [dp, dtheta, dv, dba, dbg]
    bias_accel_ref: np.ndarray
    bias_gyro_ref: np.ndarray
    j_p_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    j_p_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    j_v_ba: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    j_v_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    j_r_bg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    @property
    def delta_q(self) -> Rotation:
        return self.delta_rot

    @property
    def delta_v(self) -> np.ndarray:
        return self.dv_f + self.gravity_body * self.dt

    @property
    def delta_p(self) -> np.ndarray:
        return self.dp_f + 0.5 * self.gravity_body * self.dt**2

    def corrected(self, b_a: np.ndarray, b_g: np.ndarray):
        """Gravity-free deltas corrected to first order for a bias update."""
        dba = b_a - self.bias_accel_ref
        dbg = b_g - self.bias_gyro_ref
        dp = self.dp_f + self.j_p_ba @ dba + self.j_p_bg @ dbg
        dv = self.dv_f + self.j_v_ba @ dba + self.j_v_bg @ dbg
        drot = self.delta_rot @ so3_exp(self.j_r_bg @ dbg)
        return dp, dv, drot

    def compose(self, other: "PreintegratedImu") -> "PreintegratedImu":
        """Chain two consecutive intervals.

        `other` must be preintegrated at the same bias reference and with
        gravity_body equal to this interval's gravity rotated by
        delta_rot.inverse() (the start frame of the second interval).
        """
        r01 = self.delta_rot.matrix
        t12 = other.dt
        dp = self.dp_f + self.dv_f * t12 + r01 @ other.dp_f
        dv = self.dv_f + r01 @ other.dv_f
        drot = self.delta_rot @ other.delta_rot

        j_r_bg = other.delta_rot.matrix.T @ self.j_r_bg + other.j_r_bg
        j_v_ba = self.j_v_ba + r01 @ other.j_v_ba
        j_v_bg = self.j_v_bg + r01 @ other.j_v_bg - r01 @ skew(other.dv_f) @ self.j_r_bg
        j_p_ba = self.j_p_ba + t12 * self.j_v_ba + r01 @ other.j_p_ba
        j_p_bg = (
            self.j_p_bg + t12 * self.j_v_bg + r01 @ other.j_p_bg
            - r01 @ skew(other.dp_f) @ self.j_r_bg
        )

        a = np.eye(15)
        a[0:3, 3:6] = -r01 @ skew(other.dp_f)
        a[0:3, 6:9] = t12 * np.eye(3)
        a[3:6, 3:6] = other.delta_rot.matrix.T
        a[6:9, 3:6] = -r01 @ skew(other.dv_f)
        b = np.zeros((15, 15))
        b[0:3, 0:3] = r01
        b[3:6, 3:6] = np.eye(3)
        b[6:9, 6:9] = r01
        b[9:15, 9:15] = np.eye(6)
        cov = a @ self.covariance @ a.T + b @ other.covariance @ b.T

        return PreintegratedImu(
            dt=self.dt + other.dt,
            delta_rot=drot,
            dv_f=dv,
            dp_f=dp,
            gravity_body=self.gravity_body,
            covariance=cov,
            bias_accel_ref=self.bias_accel_ref.copy(),
            bias_gyro_ref=self.bias_gyro_ref.copy(),
            j_p_ba=j_p_ba, j_p_bg=j_p_bg,
            j_v_ba=j_v_ba, j_v_bg=j_v_bg, j_r_bg=j_r_bg,
        )


def preintegrate(
    samples: list[ImuSample],
    bias_accel,
    bias_gyro,
    gravity_body,
    noise: ImuNoise = ImuNoise(),
    t_start: float | None = None,
    t_end: float | None = None,
) -> PreintegratedImu:
    """Midpoint-integrate IMU samples over one inter-frame interval.

    Sample values are linearly interpolated onto the knot grid given by the
    sample times (clipped/extended to [t_start, t_end] by zero-order hold),
    and each sub-interval uses the midpoint value.
    """
    if not samples:
        raise ValueError("empty interval: no IMU samples between frames")
    bias_accel = np.asarray(bias_accel, dtype=float)
    bias_gyro = np.asarray(bias_gyro, dtype=float)
    gravity_body = np.asarray(gravity_body, dtype=float)

    times = np.array([s.t for s in samples])
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("IMU samples must have strictly increasing timestamps")
    ws = np.array([s.w for s in samples], dtype=float)
    acc = np.array([s.a for s in samples], dtype=float)

    lo = times[0] if t_start is None else float(t_start)
    hi = times[-1] if t_end is None else float(t_end)
    if hi <= lo:
        raise ValueError(f"degenerate interval [{lo}, {hi}]")
    knots = np.concatenate(([lo], times[(times > lo) & (times < hi)], [hi]))
    w_k = np.column_stack([np.interp(knots, times, ws[:, i]) for i in range(3)])
    a_k = np.column_stack([np.interp(knots, times, acc[:, i]) for i in range(3)])

    drot = Rotation.identity()
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((15, 15))
    j_p_ba = np.zeros((3, 3))
    j_p_bg = np.zeros((3, 3))
    j_v_ba = np.zeros((3, 3))
    j_v_bg = np.zeros((3, 3))
    j_r_bg = np.zeros((3, 3))
    sg2, sa2 = noise.gyro_noise**2, noise.accel_noise**2
    swg2, swa2 = noise.gyro_walk**2, noise.accel_walk**2

    for k in range(len(knots) - 1):
        dt = knots[k + 1] - knots[k]
        w_m = 0.5 * (w_k[k] + w_k[k + 1]) - bias_gyro
        a_m = 0.5 * (a_k[k] + a_k[k + 1]) - bias_accel
        step = so3_exp(w_m * dt)
        r_old = drot.matrix
        r_new = (drot @ step).matrix
        a_world = 0.5 * (r_old + r_new) @ a_m  # averaged-rotation transport
        jr = so3_right_jacobian(w_m * dt)
        a_hat = skew(a_m)

        phi = np.eye(15)
        phi[0:3, 3:6] = -0.5 * r_old @ a_hat * dt**2
        phi[0:3, 6:9] = np.eye(3) * dt
        phi[0:3, 9:12] = -0.5 * r_old * dt**2
        phi[3:6, 3:6] = step.matrix.T
        phi[3:6, 12:15] = -jr * dt
        phi[6:9, 3:6] = -r_old @ a_hat * dt
        phi[6:9, 9:12] = -r_old * dt
        g = np.zeros((15, 12))  # noise order [n_g, n_a, n_ba, n_bg]
        g[0:3, 3:6] = -0.5 * r_old * dt
        g[3:6, 0:3] = -jr
        g[6:9, 3:6] = -r_old
        g[9:12, 6:9] = np.eye(3)
        g[12:15, 9:12] = np.eye(3)
        qc = np.diag([sg2] * 3 + [sa2] * 3 + [swa2] * 3 + [swg2] * 3)
        cov = phi @ cov @ phi.T + g @ qc @ g.T * dt

        # bias Jacobians (update p before v, both before the rotation one)
        j_p_ba = j_p_ba + j_v_ba * dt - 0.5 * r_old * dt**2
        j_p_bg = j_p_bg + j_v_bg * dt - 0.5 * r_old @ a_hat @ j_r_bg * dt**2
        j_v_ba = j_v_ba - r_old * dt
        j_v_bg = j_v_bg - r_old @ a_hat @ j_r_bg * dt
        j_r_bg = step.matrix.T @ j_r_bg - jr * dt

        dp = dp + dv * dt + 0.5 * a_world * dt**2
        dv = dv + a_world * dt
        drot = drot @ step

    return PreintegratedImu(
        dt=hi - lo,
        delta_rot=drot,
        dv_f=dv,
        dp_f=dp,
        gravity_body=gravity_body,
        covariance=0.5 * (cov + cov.T),
        bias_accel_ref=bias_accel.copy(),
        bias_gyro_ref=bias_gyro.copy(),
        j_p_ba=j_p_ba, j_p_bg=j_p_bg,
        j_v_ba=j_v_ba, j_v_bg=j_v_bg, j_r_bg=j_r_bg,
    )


def imu_residual(pre: PreintegratedImu, xi: NavState, xj: NavState, gravity_world) -> np.ndarray:
    """15-dim preintegration residual [dp, dtheta, dv, dba, dbg]."""
    g = np.asarray(gravity_world, dtype=float)
    dt = pre.dt
    ri_t = xi.q.matrix.T
    dp_c, dv_c, drot_c = pre.corrected(xi.b_a, xi.b_g)
    r = np.empty(15)
    r[0:3] = ri_t @ (xj.p - xi.p - xi.v * dt - 0.5 * g * dt**2) - dp_c
    r[3:6] = (drot_c.inverse() @ (xi.q.inverse() @ xj.q)).log()
    r[6:9] = ri_t @ (xj.v - xi.v - g * dt) - dv_c
    r[9:12] = xj.b_a - xi.b_a
    r[12:15] = xj.b_g - xi.b_g
    return r


def imu_residual_jacobians(pre: PreintegratedImu, xi: NavState, xj: NavState, gravity_world):
    """Residual plus its (15,15) Jacobians w.r.t. the two states."""
    g = np.asarray(gravity_world, dtype=float)
    dt = pre.dt
    ri = xi.q.matrix
    ri_t = ri.T
    rj = xj.q.matrix
    r = imu_residual(pre, xi, xj, gravity_world)
    e_r = r[3:6]
    jr_inv = so3_right_jacobian_inv(e_r)
    jl_inv = jr_inv.T
    dbg = xi.b_g - pre.bias_gyro_ref

    ji = np.zeros((15, 15))
    ji[0:3, 0:3] = -ri_t
    ji[0:3, 3:6] = skew(ri_t @ (xj.p - xi.p - xi.v * dt - 0.5 * g * dt**2))
    ji[0:3, 6:9] = -ri_t * dt
    ji[0:3, 9:12] = -pre.j_p_ba
    ji[0:3, 12:15] = -pre.j_p_bg
    ji[3:6, 3:6] = -jr_inv @ (rj.T @ ri)
    ji[3:6, 12:15] = -jl_inv @ so3_right_jacobian(pre.j_r_bg @ dbg) @ pre.j_r_bg
    ji[6:9, 3:6] = skew(ri_t @ (xj.v - xi.v - g * dt))
    ji[6:9, 6:9] = -ri_t
    ji[6:9, 9:12] = -pre.j_v_ba
    ji[6:9, 12:15] = -pre.j_v_bg
    ji[9:12, 9:12] = -np.eye(3)
    ji[12:15, 12:15] = -np.eye(3)

    jj = np.zeros((15, 15))
    jj[0:3, 0:3] = ri_t
    jj[3:6, 3:6] = jr_inv
    jj[6:9, 6:9] = ri_t
    jj[9:12, 9:12] = np.eye(3)
    jj[12:15, 12:15] = np.eye(3)
    return r, ji, jj


def radar_frame_velocity(x: NavState, ext: Extrinsics, omega_meas) -> np.ndarray:
    """Radar-frame velocity of the radar origin (the K vector)."""
    w = np.asarray(omega_meas, dtype=float)
    body_vel = x.q.matrix.T @ x.v + np.cross(w - x.b_g, ext.translation)
    return ext.rotation.matrix.T @ body_vel


def doppler_residual(x: NavState, p: PolarPoint, ext: Extrinsics, omega_meas) -> float:
    """Projection of the radar-frame sensor velocity onto the bearing minus
    the measured Doppler speed."""
    k = radar_frame_velocity(x, ext, omega_meas)
    return float(bearing_of(p.theta, p.phi) @ k) - p.doppler


def doppler_noise_jacobian(p: PolarPoint, k: np.ndarray) -> np.ndarray:
    """Row Jacobian of the residual w.r.t. Cartesian point noise."""
    omega = bearing_of(p.theta, p.phi)
    return (k - omega * float(omega @ k)) / p.r


def doppler_residual_covariance(
    x: NavState,
    p: PolarPoint,
    ext: Extrinsics,
    omega_meas,
    cov: PointCovariance,
    sigma_floor: float = DOPPLER_SIGMA_FLOOR,
) -> float:
    """Propagated Doppler residual variance, floored at sigma_floor^2."""
    k = radar_frame_velocity(x, ext, omega_meas)
    j = doppler_noise_jacobian(p, k)
    return max(float(j @ cov.sigma @ j), sigma_floor**2)


def doppler_jacobians(x: NavState, p: PolarPoint, ext: Extrinsics, omega_meas):
    """Residual and its state Jacobian rows keyed by state block."""
    r = doppler_residual(x, p, ext, omega_meas)
    u = ext.rotation.matrix @ bearing_of(p.theta, p.phi)  # bearing in body frame
    ri = x.q.matrix
    return r, {
        "theta": u @ skew(ri.T @ x.v),
        "v": ri @ u,
        "b_g": u @ skew(ext.translation),
    }


def point_residual(x: NavState, landmark_pos, p: PolarPoint, ext: Extrinsics) -> np.ndarray:
    """World-frame gap between a landmark and the observed point."""
    c = ext.rotation.matrix @ polar_to_cartesian(p) + ext.translation
    return np.asarray(landmark_pos, dtype=float) - (x.q.matrix @ c + x.p)


def point_residual_covariance(x: NavState, ext: Extrinsics, cov: PointCovariance) -> np.ndarray:
    """Point covariance rotated into the world frame (eigenvalues preserved)."""
    j = x.q.matrix @ ext.rotation.matrix
    return j @ cov.sigma @ j.T


def point_jacobians(x: NavState, landmark_pos, p: PolarPoint, ext: Extrinsics):
    """Residual and its Jacobian blocks keyed by state block / landmark."""
    r = point_residual(x, landmark_pos, p, ext)
    c = ext.rotation.matrix @ polar_to_cartesian(p) + ext.translation
    return r, {
        "p": -np.eye(3),
        "theta": x.q.matrix @ skew(c),
        "l": np.eye(3),
    }


def state_prior_residual(x: NavState, ref: NavState) -> np.ndarray:
    """15-dim anchor residual of a state against a reference."""
    r = np.empty(15)
    r[0:3] = x.p - ref.p
    r[3:6] = (ref.q.inverse() @ x.q).log()
    r[6:9] = x.v - ref.v
    r[9:12] = x.b_a - ref.b_a
    r[12:15] = x.b_g - ref.b_g
    return r


def state_prior_jacobian(x: NavState, ref: NavState) -> np.ndarray:
    j = np.eye(15)
    j[3:6, 3:6] = so3_right_jacobian_inv((ref.q.inverse() @ x.q).log())
    return j


@dataclass
class WeightedResidual:
    """One evaluated factor: residual, weighting covariance, Jacobian blocks."""

    residual: np.ndarray
    covariance: np.ndarray  # matching dimension; scalar factors use shape (1,1)
    jacobians: dict

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.residual, dtype=float))
        c = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if c.shape != (r.size, r.size):
            raise ValueError("covariance dimension must match residual dimension")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
            raise ValueError("non-finite residual or covariance")
