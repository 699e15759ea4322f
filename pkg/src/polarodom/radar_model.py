"""Polar radar measurement model.

A radar return is (range, azimuth, elevation, Doppler speed).  Range noise is
zero-mean Gaussian on r; angular noise is a zero-mean 2D Gaussian applied in
the tangent plane of the bearing direction on S^2, so the Cartesian point
noise is anisotropic: tight radially, spread tangentially, growing linearly
with range.

Angle convention (fixed here, inherited by every other module): azimuth theta
rotates about +z from +x, elevation phi is positive toward +z, so the bearing
is (cos phi cos theta, cos phi sin theta, sin phi).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import boxplus_s2, skew, tangent_basis

# Additive eigenvalue lift applied to every point covariance.  The transport
# construction is rank-deficient as r -> 0 and under ablation, which would
# give some residuals infinite weight; the lift keeps Mahalanobis norms
# finite without changing eigenvectors.
COVARIANCE_EIGEN_FLOOR = 1e-8  # m^2

# Sigma floor substituted by ablation modes: small enough to flatten the
# weight spread, large enough to avoid conditioning failures.
ABLATION_EPSILON = 1e-4  # m or rad

ABLATION_MODES = ("full", "no-range", "no-angular", "none")


@dataclass(frozen=True)
class NoiseParams:
    """Per-point measurement noise standard deviations."""

    sigma_r: float  # m
    sigma_theta: float  # rad
    sigma_phi: float  # rad

    def __post_init__(self):
        for name in ("sigma_r", "sigma_theta", "sigma_phi"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be strictly positive, got {v}")

    def scaled(self, alpha: float) -> "NoiseParams":
        """Sigmas scaled by 2^(alpha/2), i.e. covariances scaled by 2^alpha."""
        f = 2.0 ** (0.5 * alpha)
        return NoiseParams(self.sigma_r * f, self.sigma_theta * f, self.sigma_phi * f)


def ablate(params: NoiseParams, mode: str) -> NoiseParams:
    """Collapse selected sigmas to the epsilon floor for ablation studies."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}, expected one of {ABLATION_MODES}")
    if mode == "full":
        return params
    if mode == "no-range":
        return NoiseParams(ABLATION_EPSILON, params.sigma_theta, params.sigma_phi)
    if mode == "no-angular":
        return NoiseParams(params.sigma_r, ABLATION_EPSILON, ABLATION_EPSILON)
    return NoiseParams(ABLATION_EPSILON, ABLATION_EPSILON, ABLATION_EPSILON)


@dataclass(frozen=True)
class PolarPoint:
    """One radar return in the sensor frame."""

    r: float  # m
    theta: float  # rad, azimuth in (-pi, pi]
    phi: float  # rad, elevation in (-pi/2, pi/2)
    doppler: float = 0.0  # m/s

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0.0):
            raise ValueError(f"range must be positive, got {self.r}")
        if not (-np.pi < self.theta <= np.pi):
            raise ValueError(f"azimuth out of (-pi, pi]: {self.theta}")
        if not (-0.5 * np.pi < self.phi < 0.5 * np.pi):
            raise ValueError(f"elevation out of (-pi/2, pi/2): {self.phi}")
        if not np.isfinite(self.doppler):
            raise ValueError("doppler must be finite")


@dataclass
class RadarScan:
    """One radar frame: a timestamp and its returns."""

    t: float
    points: list[PolarPoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


def bearing_of(theta: float, phi: float) -> np.ndarray:
    """Unit bearing vector for (azimuth, elevation)."""
    cp = np.cos(phi)
    return np.array([cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)])


def polar_to_cartesian(p: PolarPoint) -> np.ndarray:
    return p.r * bearing_of(p.theta, p.phi)


def cartesian_to_polar(x, doppler: float = 0.0) -> PolarPoint:
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r <= 0.0:
        raise ValueError("cannot convert the origin to polar coordinates")
    theta = float(np.arctan2(x[1], x[0]))
    phi = float(np.arcsin(np.clip(x[2] / r, -1.0, 1.0)))
    return PolarPoint(r, theta, phi, doppler)


@dataclass(frozen=True)
class PointCovariance:
    """Cartesian covariance of one radar point and the transport that built it.

    transport columns are [bearing | -r skew(bearing) N(bearing)]; sigma is
    transport @ diag(sr^2, st^2, sp^2) @ transport.T plus the eigenvalue lift.
    """

    sigma: np.ndarray  # (3,3)
    transport: np.ndarray  # (3,3)


def transport_matrix(p: PolarPoint) -> np.ndarray:
    omega = bearing_of(p.theta, p.phi)
    n = tangent_basis(omega)
    return np.column_stack([omega, -p.r * (skew(omega) @ n)])


def point_covariance(p: PolarPoint, noise: NoiseParams) -> PointCovariance:
    """First-order Cartesian covariance of a polar return.

    Eigenvalues are exactly (sigma_r^2, r^2 sigma_theta^2, r^2 sigma_phi^2)
    plus the floor lift; the sigma_r^2 eigenvector is the bearing direction.
    """
    a = transport_matrix(p)
    d = np.array([noise.sigma_r**2, noise.sigma_theta**2, noise.sigma_phi**2])
    sigma = (a * d) @ a.T
    sigma = 0.5 * (sigma + sigma.T) + COVARIANCE_EIGEN_FLOOR * np.eye(3)
    return PointCovariance(sigma=sigma, transport=a)


def scale_covariance(cov: PointCovariance, alpha: float) -> PointCovariance:
    """Every covariance entry multiplied by 2^alpha."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    return PointCovariance(sigma=(2.0**alpha) * cov.sigma, transport=cov.transport)


def _perturb_bearings(omega, d1, d2) -> np.ndarray:
    """Vectorized boxplus of one bearing by tangent coordinates (d1, d2)."""
    n = tangent_basis(omega)
    axes = np.outer(d1, n[:, 0]) + np.outer(d2, n[:, 1])
    angle = np.hypot(d1, d2)
    sinc = np.where(angle > 1e-12, np.sin(angle) / np.where(angle > 0, angle, 1.0), 1.0)
    out = np.cos(angle)[:, None] * omega + sinc[:, None] * np.cross(axes, omega)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def sample_noisy_cartesian(gt: PolarPoint, noise: NoiseParams, rng, count: int) -> np.ndarray:
    """Cartesian positions of `count` noisy draws around a ground-truth point.

    Range draws that land at or below zero are redrawn (rare; keeps ranges in
    the valid domain at the cost of a slightly truncated tail).
    """
    dr = rng.normal(0.0, noise.sigma_r, count)
    r = gt.r + dr
    bad = r <= 0.0
    while bad.any():
        r[bad] = gt.r + rng.normal(0.0, noise.sigma_r, int(bad.sum()))
        bad = r <= 0.0
    d1 = rng.normal(0.0, noise.sigma_theta, count)
    d2 = rng.normal(0.0, noise.sigma_phi, count)
    dirs = _perturb_bearings(bearing_of(gt.theta, gt.phi), d1, d2)
    return r[:, None] * dirs


def sample_noisy_point(gt: PolarPoint, noise: NoiseParams, seed: int) -> PolarPoint:
    """One seeded noisy draw: r <- r + dr, bearing <- bearing boxplus dOmega."""
    rng = np.random.default_rng(seed)
    return sample_noisy_point_rng(gt, noise, rng)


def sample_noisy_point_rng(gt: PolarPoint, noise: NoiseParams, rng) -> PolarPoint:
    r = gt.r + rng.normal(0.0, noise.sigma_r)
    while r <= 0.0:
        r = gt.r + rng.normal(0.0, noise.sigma_r)
    delta = np.array(
        [rng.normal(0.0, noise.sigma_theta), rng.normal(0.0, noise.sigma_phi)]
    )
    omega = boxplus_s2(bearing_of(gt.theta, gt.phi), delta)
    return cartesian_to_polar(r * omega, doppler=gt.doppler)


def monte_carlo_covariance(gt: PolarPoint, noise: NoiseParams, count: int, seed: int) -> np.ndarray:
    """Empirical Cartesian covariance of noisy draws (the sampling-side check
    of the analytic propagation)."""
    rng = np.random.default_rng(seed)
    pts = sample_noisy_cartesian(gt, noise, rng, count)
    return np.cov(pts.T, bias=False)


def frobenius_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
