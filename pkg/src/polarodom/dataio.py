"""CSV interchange formats and TUM trajectory files.

Radar: header `t,r,theta,phi,doppler`, one return per row, rows sharing a
timestamp form one scan, timestamps strictly increasing across scans.
IMU: header `t,wx,wy,wz,ax,ay,az`.
Trajectories: TUM lines `t x y z qx qy qz qw` (quaternion x-y-z-w on disk;
w-first in memory).  Malformed rows are rejected with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import ImuSample
from .manifold import Rotation
from .radar_model import PolarPoint, RadarScan

RADAR_HEADER = "t,r,theta,phi,doppler"
IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
LABEL_HEADER = "t,point_index,landmark_id"


class DataFormatError(ValueError):
    """Raised for malformed interchange files; message carries the location."""


@dataclass
class Trajectory:
    """Timestamped poses; quaternions are (w, x, y, z) in memory."""

    times: np.ndarray  # (n,)
    positions: np.ndarray  # (n,3)
    quaternions: np.ndarray  # (n,4) wxyz, unit

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        if not (len(self.times) == len(self.positions) == len(self.quaternions)):
            raise ValueError("trajectory arrays must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        norms = np.linalg.norm(self.quaternions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("trajectory quaternions must be unit")
        self.quaternions = self.quaternions / norms[:, None]

    def __len__(self) -> int:
        return len(self.times)

    def rotation(self, i: int) -> Rotation:
        return Rotation(self.quaternions[i])


def _parse_floats(parts, path, lineno):
    try:
        vals = [float(v) for v in parts]
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
    if not all(np.isfinite(v) for v in vals):
        raise DataFormatError(f"{path}:{lineno}: non-finite field")
    return vals


def read_radar_csv(path):
    """Yield RadarScan objects grouped by identical timestamps."""
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != RADAR_HEADER:
            raise DataFormatError(
                f"{path}:1: bad radar header {header!r}, expected {RADAR_HEADER!r}"
            )
        current: RadarScan | None = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise DataFormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            t, r, theta, phi, doppler = _parse_floats(parts, path, lineno)
            try:
                point = PolarPoint(r, theta, phi, doppler)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if current is None or t != current.t:
                if current is not None:
                    if t <= current.t:
                        raise DataFormatError(
                            f"{path}:{lineno}: non-monotone timestamp {t} after {current.t}"
                        )
                    yield current
                current = RadarScan(t, [point])
            else:
                current.points.append(point)
        if current is not None:
            yield current


def write_radar_csv(scans, path) -> None:
    with open(path, "w") as fh:
        fh.write(RADAR_HEADER + "\n")
        for scan in scans:
            t = float(scan.t)
            for p in scan.points:
                fh.write(f"{t!r},{float(p.r)!r},{float(p.theta)!r},"
                         f"{float(p.phi)!r},{float(p.doppler)!r}\n")


def read_imu_csv(path):
    """Yield ImuSample objects; timestamps must be strictly increasing."""
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != IMU_HEADER:
            raise DataFormatError(
                f"{path}:1: bad IMU header {header!r}, expected {IMU_HEADER!r}"
            )
        last_t = None
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataFormatError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            vals = _parse_floats(parts, path, lineno)
            t = vals[0]
            if last_t is not None and t <= last_t:
                raise DataFormatError(
                    f"{path}:{lineno}: out-of-order timestamp {t} after {last_t}"
                )
            last_t = t
            yield ImuSample(t, np.array(vals[1:4]), np.array(vals[4:7]))


def write_imu_csv(samples, path) -> None:
    with open(path, "w") as fh:
        fh.write(IMU_HEADER + "\n")
        for s in samples:
            vals = [float(s.t), *map(float, s.w), *map(float, s.a)]
            fh.write(",".join(repr(v) for v in vals) + "\n")


def write_labels_csv(times, labels, path) -> None:
    """Ground-truth correspondence sidecar: one row per scan point."""
    with open(path, "w") as fh:
        fh.write(LABEL_HEADER + "\n")
        for t, ids in zip(times, labels):
            for j, lid in enumerate(ids):
                fh.write(f"{float(t)!r},{j},{int(lid)}\n")


def write_tum(traj: Trajectory, path) -> None:
    """TUM format: `t x y z qx qy qz qw`, 9 significant digits."""
    with open(path, "w") as fh:
        for i in range(len(traj)):
            t = traj.times[i]
            x, y, z = traj.positions[i]
            qw, qx, qy, qz = traj.quaternions[i]
            fh.write(
                f"{t:.8f} {x:.9g} {y:.9g} {z:.9g} {qx:.9g} {qy:.9g} {qz:.9g} {qw:.9g}\n"
            )


def read_tum(path) -> Trajectory:
    times, positions, quats = [], [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataFormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            vals = _parse_floats(parts, path, lineno)
            times.append(vals[0])
            positions.append(vals[1:4])
            qx, qy, qz, qw = vals[4:8]
            quats.append([qw, qx, qy, qz])
    if not times:
        raise DataFormatError(f"{path}: empty trajectory file")
    try:
        return Trajectory(np.array(times), np.array(positions), np.array(quats))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
