"""Probability-guided point-to-landmark matching with 3-sigma gating.

A radar point carries an anisotropic world-frame covariance; the matched
landmark is the one maximizing the trivariate Gaussian density of the point
around it.  The Euclidean nearest-neighbor path is kept as the comparison
baseline.  Candidate gathering uses a KD-tree with radius
3*sqrt(lambda_max) + a fixed margin, which cannot prune any candidate that
would survive the 3-sigma Mahalanobis gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .factors import Extrinsics, NavState, point_residual_covariance
from .radar_model import PointCovariance, PolarPoint, polar_to_cartesian

MAHALANOBIS_GATE = 3.0
CANDIDATE_MARGIN = 0.1  # m, spatial-index slack past the 3-sigma radius
DEFAULT_RETIRE_COUNT = 1  # retire landmarks with <= this many observations

_DENSITY_NORM = (2.0 * np.pi) ** -1.5


@dataclass
class Landmark:
    id: int
    position: np.ndarray  # world frame, m
    observation_count: int = 1
    last_seen: int = 0  # frame index


@dataclass(frozen=True)
class MatchResult:
    point_index: int
    landmark_id: int | None
    density: float
    mahalanobis: float

    @property
    def matched(self) -> bool:
        return self.landmark_id is not None


_NO_MATCH = dict(landmark_id=None, density=0.0, mahalanobis=np.inf)


class LandmarkMap:
    """Landmark store with a lazily rebuilt spatial index.

    Mutation (adding, removing, or moving landmarks) invalidates the index;
    it is rebuilt on the next query, so queries always see the current set.
    """

    def __init__(self):
        self._landmarks: dict[int, Landmark] = {}
        self._next_id = 0
        self._tree = None
        self._tree_ids = None

    def __len__(self) -> int:
        return len(self._landmarks)

    def __contains__(self, landmark_id: int) -> bool:
        return landmark_id in self._landmarks

    def __getitem__(self, landmark_id: int) -> Landmark:
        return self._landmarks[landmark_id]

    def landmarks(self) -> list[Landmark]:
        return [self._landmarks[i] for i in sorted(self._landmarks)]

    def add(self, position, frame_index: int = 0) -> Landmark:
        lm = Landmark(self._next_id, np.asarray(position, dtype=float).copy(),
                      observation_count=1, last_seen=frame_index)
        self._landmarks[lm.id] = lm
        self._next_id += 1
        self._tree = None
        return lm

    def remove(self, landmark_id: int) -> None:
        del self._landmarks[landmark_id]
        self._tree = None

    def record_observation(self, landmark_id: int, frame_index: int) -> None:
        lm = self._landmarks[landmark_id]
        lm.observation_count += 1
        lm.last_seen = max(lm.last_seen, frame_index)

    def mark_moved(self) -> None:
        """Invalidate the index after landmark positions were optimized."""
        self._tree = None

    def _ensure_tree(self):
        if self._tree is None and self._landmarks:
            ids = sorted(self._landmarks)
            self._tree_ids = np.array(ids)
            self._tree = cKDTree(np.array([self._landmarks[i].position for i in ids]))

    def query_radius(self, center, radius: float) -> np.ndarray:
        """Ids of all landmarks within `radius` of `center`, ascending."""
        if not self._landmarks:
            return np.array([], dtype=int)
        self._ensure_tree()
        idx = self._tree.query_ball_point(np.asarray(center, dtype=float), radius)
        return np.sort(self._tree_ids[idx])


def match_density(landmark_pos, point_world, cov_world) -> float:
    """Trivariate Gaussian density of the point model at the landmark."""
    cov = np.asarray(cov_world, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular point covariance (flooring bypassed?)") from exc
    diff = np.asarray(landmark_pos, dtype=float) - np.asarray(point_world, dtype=float)
    y = np.linalg.solve(chol, diff)
    m2 = float(y @ y)
    det_sqrt = float(np.prod(np.diag(chol)))
    return _DENSITY_NORM / det_sqrt * np.exp(-0.5 * m2)


def point_in_world(p: PolarPoint, pose: NavState, ext: Extrinsics) -> np.ndarray:
    c = ext.rotation.matrix @ polar_to_cartesian(p) + ext.translation
    return pose.q.matrix @ c + pose.p


def associate(
    p: PolarPoint,
    pose: NavState,
    ext: Extrinsics,
    cov: PointCovariance,
    lmap: LandmarkMap,
    point_index: int = 0,
) -> MatchResult:
    """Probability-guided match of one point against the map.

    The winner is the density argmax over candidates within the index radius;
    it is discarded if its Mahalanobis distance exceeds the 3-sigma gate.
    Ties break toward the lowest landmark id.
    """
    p_world = point_in_world(p, pose, ext)
    cov_world = point_residual_covariance(pose, ext, cov)
    lam_max = float(np.linalg.eigvalsh(cov_world)[-1])
    radius = MAHALANOBIS_GATE * np.sqrt(lam_max) + CANDIDATE_MARGIN
    ids = lmap.query_radius(p_world, radius)
    if ids.size == 0:
        return MatchResult(point_index, **_NO_MATCH)

    try:
        chol = np.linalg.cholesky(cov_world)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular point covariance (flooring bypassed?)") from exc
    positions = np.array([lmap[i].position for i in ids])
    diffs = positions - p_world
    ys = np.linalg.solve(chol, diffs.T)
    m2 = np.einsum("ij,ij->j", ys, ys)
    det_sqrt = float(np.prod(np.diag(chol)))
    densities = _DENSITY_NORM / det_sqrt * np.exp(-0.5 * m2)

    best = int(np.argmax(densities))  # ids ascending, argmax takes the first
    mahal = float(np.sqrt(m2[best]))
    if mahal > MAHALANOBIS_GATE:
        return MatchResult(point_index, **_NO_MATCH)
    return MatchResult(point_index, int(ids[best]), float(densities[best]), mahal)


def associate_euclidean(
    p: PolarPoint,
    pose: NavState,
    ext: Extrinsics,
    lmap: LandmarkMap,
    gate_radius: float,
    point_index: int = 0,
) -> MatchResult:
    """Nearest-neighbor baseline, gated by a fixed Euclidean radius."""
    p_world = point_in_world(p, pose, ext)
    ids = lmap.query_radius(p_world, gate_radius)
    if ids.size == 0:
        return MatchResult(point_index, **_NO_MATCH)
    positions = np.array([lmap[i].position for i in ids])
    dists = np.linalg.norm(positions - p_world, axis=1)
    best = int(np.argmin(dists))
    return MatchResult(point_index, int(ids[best]), float(dists[best]), float(dists[best]))


def update_map(
    lmap: LandmarkMap,
    unmatched_points: list[PolarPoint],
    pose: NavState,
    ext: Extrinsics,
    frame_index: int,
    window: int,
    retire_count: int = DEFAULT_RETIRE_COUNT,
) -> LandmarkMap:
    """Spawn landmarks for unmatched points; retire stale barely-seen ones.

    A landmark unseen for `window` frames with no more than `retire_count`
    observations is removed.
    """
    for lm in lmap.landmarks():
        if (frame_index - lm.last_seen >= window
                and lm.observation_count <= retire_count):
            lmap.remove(lm.id)
    for p in unmatched_points:
        lmap.add(point_in_world(p, pose, ext), frame_index)
    return lmap
