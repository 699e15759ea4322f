"""Minimal SO(3) and unit-sphere (S^2) primitives.

Everything here is a pure function on numpy values (or the small Rotation
wrapper), safe to call concurrently.  Angles are radians throughout.

The tangent basis N(omega) of S^2 at a unit vector omega is built from the
minimal rotation taking e3 to omega; any orthonormal basis of the tangent
plane would give the same propagated covariances (the construction is
basis-covariant), so the column order/sign here is a fixed convention, not
a claim about uniqueness.
"""

from __future__ import annotations

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])

# below this rotation angle, exp/log/Jacobian formulas switch to series
SMALL_ANGLE = 1e-6

# antipodal fallback: ~sqrt(eps) margin where 1/(1+cos) loses too many digits
_ANTIPODAL_COS_MARGIN = 5e-13

# fixed tangent basis at omega ~= -e3 (a pi rotation about e1), kept
# deterministic so covariances stay well-defined directly below the sensor
_ANTIPODAL_BASIS = np.array([[1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])


def skew(v) -> np.ndarray:
    """3x3 matrix S with S @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp_matrix(phi) -> np.ndarray:
    """Rodrigues formula; second-order series below SMALL_ANGLE."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    s, c = np.sin(angle), np.cos(angle)
    a = angle * angle
    return np.eye(3) + (s / angle) * k + ((1.0 - c) / a) * (k @ k)


def so3_log_matrix(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (via the quaternion path)."""
    return Rotation.from_matrix(rot).log()


def so3_right_jacobian(phi) -> np.ndarray:
    """Jr(phi): exp(phi + Jr d) ~= exp(phi) exp(d) to first order."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (1.0 / 6.0) * (k @ k)
    a2 = angle * angle
    return (
        np.eye(3)
        - ((1.0 - np.cos(angle)) / a2) * k
        + ((angle - np.sin(angle)) / (a2 * angle)) * (k @ k)
    )


def so3_right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (1.0 / 12.0) * (k @ k)
    a2 = angle * angle
    coef = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * k + coef * (k @ k)


class Rotation:
    """Unit quaternion (w, x, y, z) with a cached matrix.

    The quaternion is renormalized on construction, so the unit-norm
    invariant holds to machine precision after every operation.
    """

    __slots__ = ("q", "_matrix")

    def __init__(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have shape (4,), w first")
        n = float(np.linalg.norm(q))
        if not np.isfinite(n) or n < 1e-8:
            raise ValueError("quaternion norm too small to normalize")
        self.q = q / n
        self._matrix = None

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_rotvec(phi) -> "Rotation":
        phi = np.asarray(phi, dtype=float)
        angle = float(np.linalg.norm(phi))
        if angle < SMALL_ANGLE:
            # sin(a/2)/a ~= 1/2 - a^2/48
            half_sinc = 0.5 - angle * angle / 48.0
            return Rotation(np.concatenate(([np.cos(0.5 * angle)], half_sinc * phi)))
        axis = phi / angle
        return Rotation(
            np.concatenate(([np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis))
        )

    @staticmethod
    def from_matrix(rot) -> "Rotation":
        m = np.asarray(rot, dtype=float)
        t = np.trace(m)
        # Shepperd's method: branch on the largest of (trace, diagonal)
        if t > m[0, 0] and t > m[1, 1] and t > m[2, 2]:
            s = np.sqrt(t + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                 (m[1, 0] - m[0, 1]) / s]
            )
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                 (m[0, 2] + m[2, 0]) / s]
            )
        elif m[1, 1] >= m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                 (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
        return Rotation(q)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            w, x, y, z = self.q
            self._matrix = np.array(
                [
                    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
                ]
            )
        return self._matrix

    def compose(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(
            np.array(
                [
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
                ]
            )
        )

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def log(self) -> np.ndarray:
        """Rotation vector, magnitude in [0, pi]."""
        q = self.q if self.q[0] >= 0.0 else -self.q
        vec = q[1:]
        s = float(np.linalg.norm(vec))
        if s < 1e-9:
            return 2.0 * vec / q[0]
        return (2.0 * np.arctan2(s, q[0]) / s) * vec

    def angle_to(self, other: "Rotation") -> float:
        return float(np.linalg.norm((self.inverse() @ other).log()))

    def __repr__(self) -> str:
        return f"Rotation(q={self.q!r})"


def so3_exp(phi) -> Rotation:
    """Exponential map so(3) -> SO(3) as a Rotation."""
    return Rotation.from_rotvec(phi)


def so3_log(rot: Rotation) -> np.ndarray:
    return rot.log()


def minimal_rotation_from_z(omega) -> np.ndarray:
    """Rotation matrix taking e3 to the unit vector omega by the shortest arc.

    At the antipode (omega ~ -e3, no unique shortest arc) a fixed pi rotation
    about e1 is returned so downstream covariances stay deterministic.
    """
    omega = np.asarray(omega, dtype=float)
    c = float(omega[2])
    if c < -1.0 + _ANTIPODAL_COS_MARGIN:
        return np.diag([1.0, -1.0, -1.0])
    v = np.array([-omega[1], omega[0], 0.0])  # e3 x omega
    k = skew(v)
    return np.eye(3) + k + (k @ k) / (1.0 + c)


def tangent_basis(omega) -> np.ndarray:
    """3x2 orthonormal basis of the tangent plane of S^2 at omega.

    Columns are the images of e1, e2 under the minimal rotation taking e3
    to omega.  For omega within ~1e-9 of -e3 the fixed antipodal basis
    N1=(1,0,0), N2=(0,-1,0) is returned.
    """
    omega = np.asarray(omega, dtype=float)
    if float(omega[2]) < -1.0 + _ANTIPODAL_COS_MARGIN:
        return _ANTIPODAL_BASIS.copy()
    return minimal_rotation_from_z(omega)[:, :2]


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation matrix taking unit vector a to unit vector b.

    For antipodal inputs (no unique shortest arc) a deterministic pi
    rotation about an axis orthogonal to a is returned.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(a @ b)
    if c < -1.0 + _ANTIPODAL_COS_MARGIN:
        i = int(np.argmin(np.abs(a)))
        e = np.zeros(3)
        e[i] = 1.0
        axis = e - a * float(a @ e)
        axis /= np.linalg.norm(axis)
        return so3_exp_matrix(np.pi * axis)
    k = skew(np.cross(a, b))
    return np.eye(3) + k + (k @ k) / (1.0 + c)


def boxplus_s2(omega, delta) -> np.ndarray:
    """Perturb a unit vector within its tangent plane: exp((N(omega) d)^) omega.

    Rotates omega about the tangent-plane axis N(omega) @ delta by |delta|;
    the result is renormalized, so it is unit to machine precision.
    """
    omega = np.asarray(omega, dtype=float)
    delta = np.asarray(delta, dtype=float)
    axis = tangent_basis(omega) @ delta
    angle = float(np.linalg.norm(delta))
    if angle == 0.0:
        return omega.copy()
    # axis is orthogonal to omega, so Rodrigues collapses to two terms
    if angle < SMALL_ANGLE:
        sinc = 1.0 - angle * angle / 6.0
    else:
        sinc = np.sin(angle) / angle
    out = np.cos(angle) * omega + sinc * np.cross(axis, omega)
    return out / np.linalg.norm(out)


def boxminus_s2(target, base) -> np.ndarray:
    """Tangent-plane coordinates d with boxplus_s2(base, d) == target.

    Undefined for antipodal pairs (raises ValueError).
    """
    base = np.asarray(base, dtype=float)
    target = np.asarray(target, dtype=float)
    v = np.cross(base, target)
    s = float(np.linalg.norm(v))
    c = float(np.dot(base, target))
    if s < 1e-14:
        if c < 0.0:
            raise ValueError("boxminus_s2 is undefined for antipodal bearings")
        return tangent_basis(base).T @ v
    angle = np.arctan2(s, c)
    return tangent_basis(base).T @ ((angle / s) * v)
