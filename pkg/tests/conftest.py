import numpy as np
import pytest

from polarodom.config import RunConfig, TrajectorySpec
from polarodom.factors import Extrinsics, NavState
from polarodom.manifold import Rotation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n=3):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_state(rng, bias_scale=0.02):
    return NavState(
        p=rng.normal(size=3),
        q=Rotation.from_rotvec(rng.normal(size=3) * 0.7),
        v=rng.normal(size=3),
        b_a=rng.normal(size=3) * bias_scale,
        b_g=rng.normal(size=3) * bias_scale * 0.2,
        t=0.0,
    )


def random_extrinsics(rng):
    return Extrinsics(Rotation.from_rotvec(rng.normal(size=3) * 0.5),
                      rng.normal(size=3) * 0.2)


def fd_jacobian(f, dim, h=1e-6):
    """Central finite differences of f: R^dim -> R^k at zero."""
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        cols.append((np.atleast_1d(f(e)) - np.atleast_1d(f(-e))) / (2 * h))
    return np.column_stack(cols)


@pytest.fixture(scope="session")
def noiseless_short_run():
    """One shared short noiseless end-to-end run (estimator + ground truth)."""
    from polarodom import simworld
    from polarodom.pipeline import run_streams

    cfg = RunConfig(
        trajectory=TrajectorySpec(duration=10.0, noisy=False, landmark_count=120),
        seeds=(0,),
    )
    gt, scans, imu = simworld.generate(cfg.scenario(seed=0))
    traj, reports = run_streams(cfg, scans, imu)
    return cfg, gt, traj, reports
