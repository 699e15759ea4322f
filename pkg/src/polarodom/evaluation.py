"""APE and RPE trajectory metrics.

APE optionally applies a closed-form SE(3) alignment (Umeyama without scale)
before comparing; RPE is computed per consecutive frame pair, which makes it
invariant to any rigid offset between the trajectories.  Timestamp pairing is
nearest-neighbor within a tolerance, greedy-unique on both sides.
"""

from __future__ import annotations

import numpy as np

from .dataio import Trajectory
from .manifold import Rotation

PAIRING_TOLERANCE = 0.01  # s, below half a 20 Hz-class scan period


def associate_timestamps(t_a, t_b, tol: float = PAIRING_TOLERANCE):
    """Greedy-unique nearest-timestamp pairing within `tol` seconds."""
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    cands = []
    for i, t in enumerate(t_a):
        j = int(np.searchsorted(t_b, t))
        for jj in (j - 1, j):
            if 0 <= jj < len(t_b):
                d = abs(t_b[jj] - t)
                if d <= tol:
                    cands.append((d, i, jj))
    cands.sort()
    used_a, used_b = set(), set()
    pairs = []
    for d, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    ia = np.array([p[0] for p in pairs], dtype=int)
    ib = np.array([p[1] for p in pairs], dtype=int)
    return ia, ib


def umeyama_se3(src, dst):
    """Rotation R and translation t minimizing ||dst - (R src + t)||^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, mu_d - r @ mu_s


def _rotation_angle(rel: np.ndarray) -> float:
    return float(np.linalg.norm(Rotation.from_matrix(rel).log()))


def _paired(est: Trajectory, gt: Trajectory, tol: float):
    ia, ib = associate_timestamps(est.times, gt.times, tol)
    if ia.size == 0:
        raise ValueError("no overlapping timestamps between trajectories")
    return ia, ib


def ape_rmse(est: Trajectory, gt: Trajectory, align: bool = True,
             tol: float = PAIRING_TOLERANCE):
    """Absolute pose error RMSE: (translation m, rotation deg)."""
    ia, ib = _paired(est, gt, tol)
    p_est = est.positions[ia]
    p_gt = gt.positions[ib]
    r_est = [est.rotation(int(i)).matrix for i in ia]
    r_gt = [gt.rotation(int(j)).matrix for j in ib]
    if align:
        if len(ia) < 3:
            raise ValueError("SE(3) alignment needs at least 3 matched poses")
        r_a, t_a = umeyama_se3(p_est, p_gt)
        p_est = p_est @ r_a.T + t_a
        r_est = [r_a @ m for m in r_est]
    trans = np.linalg.norm(p_gt - p_est, axis=1)
    rots = np.array([_rotation_angle(re.T @ rg) for re, rg in zip(r_est, r_gt)])
    return (float(np.sqrt(np.mean(trans**2))),
            float(np.degrees(np.sqrt(np.mean(rots**2)))))


def rpe_rmse(est: Trajectory, gt: Trajectory, tol: float = PAIRING_TOLERANCE):
    """Relative pose error RMSE over consecutive frame pairs (delta = 1)."""
    ia, ib = _paired(est, gt, tol)
    if ia.size < 2:
        raise ValueError("RPE needs at least 2 matched poses")
    trans_err, rot_err = [], []
    for k in range(ia.size - 1):
        i0, i1 = int(ia[k]), int(ia[k + 1])
        j0, j1 = int(ib[k]), int(ib[k + 1])
        re0 = est.rotation(i0).matrix
        rg0 = gt.rotation(j0).matrix
        dp_e = re0.T @ (est.positions[i1] - est.positions[i0])
        dr_e = re0.T @ est.rotation(i1).matrix
        dp_g = rg0.T @ (gt.positions[j1] - gt.positions[j0])
        dr_g = rg0.T @ gt.rotation(j1).matrix
        # error transform E = rel_gt^-1 rel_est
        e_rot = dr_g.T @ dr_e
        e_trans = dr_g.T @ (dp_e - dp_g)
        trans_err.append(np.linalg.norm(e_trans))
        rot_err.append(_rotation_angle(e_rot))
    trans_err = np.array(trans_err)
    rot_err = np.array(rot_err)
    return (float(np.sqrt(np.mean(trans_err**2))),
            float(np.degrees(np.sqrt(np.mean(rot_err**2)))))
