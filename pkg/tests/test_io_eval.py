import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarodom import config as cf
from polarodom import dataio, evaluation
from polarodom.dataio import DataFormatError, Trajectory
from polarodom.factors import ImuSample
from polarodom.manifold import Rotation, so3_exp
from polarodom.radar_model import PolarPoint, RadarScan


class TestRadarCsv:
    def test_empty_body(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t,r,theta,phi,doppler\n")
        assert list(dataio.read_radar_csv(path)) == []

    def test_rows_sharing_timestamp_group(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t,r,theta,phi,doppler\n"
                        "0.5,10.0,0.1,0.0,1.0\n"
                        "0.5,12.0,-0.1,0.0,0.5\n"
                        "0.6,11.0,0.0,0.0,0.0\n")
        scans = list(dataio.read_radar_csv(path))
        assert [len(s) for s in scans] == [2, 1]
        assert scans[0].t == 0.5

    def test_nonpositive_range_rejected_with_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t,r,theta,phi,doppler\n0.5,10.0,0.1,0.0,1.0\n0.5,-2.0,0.1,0.0,1.0\n")
        with pytest.raises(DataFormatError, match=":3:"):
            list(dataio.read_radar_csv(path))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("time,r,az,el,v\n")
        with pytest.raises(DataFormatError, match="header"):
            list(dataio.read_radar_csv(path))

    def test_non_monotone_timestamps(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("t,r,theta,phi,doppler\n1.0,5,0,0,0\n0.5,5,0,0,0\n")
        with pytest.raises(DataFormatError, match="non-monotone"):
            list(dataio.read_radar_csv(path))

    def test_roundtrip(self, tmp_path):
        scans = [
            RadarScan(0.5, [PolarPoint(10.0, 0.1, -0.2, 1.5),
                            PolarPoint(3.0, -1.0, 0.3, -0.25)]),
            RadarScan(0.6, [PolarPoint(0.123456789123, 0.7, 0.0, 0.0)]),
        ]
        path = tmp_path / "r.csv"
        dataio.write_radar_csv(scans, path)
        back = list(dataio.read_radar_csv(path))
        assert all(a.t == b.t and a.points == b.points for a, b in zip(scans, back))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list(dataio.read_radar_csv(tmp_path / "absent.csv"))


class TestImuCsv:
    def test_roundtrip(self, tmp_path):
        samples = [ImuSample(0.01 * k, np.array([0.1, -0.2, 0.3]) * k,
                             np.array([0.0, 0.1, 9.81])) for k in range(5)]
        path = tmp_path / "i.csv"
        dataio.write_imu_csv(samples, path)
        back = list(dataio.read_imu_csv(path))
        assert all(a.t == b.t and np.array_equal(a.w, b.w) and np.array_equal(a.a, b.a)
                   for a, b in zip(samples, back))

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "i.csv"
        path.write_text("t,wx,wy,wz,ax,ay,az\n0.0,0,0,nan,0,0,9.81\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            list(dataio.read_imu_csv(path))

    def test_out_of_order_rejected(self, tmp_path):
        path = tmp_path / "i.csv"
        path.write_text("t,wx,wy,wz,ax,ay,az\n1.0,0,0,0,0,0,9.81\n0.5,0,0,0,0,0,9.81\n")
        with pytest.raises(DataFormatError, match="out-of-order"):
            list(dataio.read_imu_csv(path))


class TestTum:
    def test_identity_pose_fixture(self, tmp_path):
        traj = Trajectory(np.array([0.0]), np.zeros((1, 3)),
                          np.array([[1.0, 0, 0, 0]]))
        path = tmp_path / "t.tum"
        dataio.write_tum(traj, path)
        assert path.read_text() == "0.00000000 0 0 0 0 0 0 1\n"

    def test_eight_fields_every_line(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 20
        traj = Trajectory(np.arange(n) * 0.1, rng.normal(size=(n, 3)),
                          np.array([so3_exp(rng.normal(size=3)).q for _ in range(n)]))
        path = tmp_path / "t.tum"
        dataio.write_tum(traj, path)
        for line in path.read_text().splitlines():
            assert len(line.split()) == 8

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        n = 30
        traj = Trajectory(np.arange(n) * 0.1 + 1000.0, rng.normal(size=(n, 3)) * 5,
                          np.array([so3_exp(rng.normal(size=3)).q for _ in range(n)]))
        path = tmp_path / "t.tum"
        dataio.write_tum(traj, path)
        back = dataio.read_tum(path)
        assert np.allclose(back.times, traj.times, atol=1e-8)
        assert np.allclose(back.positions, traj.positions, atol=1e-7)
        for i in range(n):
            assert Rotation(back.quaternions[i]).angle_to(
                Rotation(traj.quaternions[i])) < 1e-7

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "t.tum"
        path.write_text("0.0 1 2 3 0 0 0\n")
        with pytest.raises(DataFormatError, match="8 fields"):
            dataio.read_tum(path)


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = cf.standard_trend_config()
        path = tmp_path / "c.yaml"
        cf.save_config(cfg, path)
        assert cf.load_config(path) == cfg

    def test_default_roundtrip(self, tmp_path):
        cfg = cf.default_config()
        path = tmp_path / "c.yaml"
        cf.save_config(cfg, path)
        assert cf.load_config(path) == cfg

    def test_unknown_top_level_key(self):
        with pytest.raises(cf.ConfigError, match="unknown top-level"):
            cf.from_dict({"nois": {}})

    def test_unknown_nested_key(self):
        with pytest.raises(cf.ConfigError, match="sigma_rr"):
            cf.from_dict({"noise": {"sigma_rr": 0.1}})

    def test_invalid_values(self):
        with pytest.raises(cf.ConfigError):
            cf.from_dict({"trajectory": {"duration": -5.0}})
        with pytest.raises(cf.ConfigError):
            cf.from_dict({"estimator": {"matching": "psychic"}})
        with pytest.raises(cf.ConfigError):
            cf.from_dict({"solver": {"max_iterations": 0}})
        with pytest.raises(cf.ConfigError):
            cf.from_dict({"seeds": []})

    def test_overrides(self):
        cfg = cf.default_config().with_overrides(ablation="none", alpha=2.0,
                                                 seeds=(7,))
        assert cfg.estimator.ablation == "none"
        assert cfg.estimator.alpha == 2.0
        assert cfg.seeds == (7,)


def make_traj(rng, n=40, dt=0.1):
    times = np.arange(n) * dt
    positions = np.cumsum(rng.normal(0, 0.1, size=(n, 3)), axis=0)
    quats = []
    q = Rotation.identity()
    for _ in range(n):
        q = q @ so3_exp(rng.normal(0, 0.05, 3))
        quats.append(q.q)
    return Trajectory(times, positions, np.array(quats))


def transformed(traj, rot: Rotation, t):
    pos = traj.positions @ rot.matrix.T + t
    quats = np.array([(rot @ Rotation(q)).q for q in traj.quaternions])
    return Trajectory(traj.times, pos, quats)


class TestMetrics:
    def test_identical_trajectories_zero(self, rng):
        t = make_traj(rng)
        assert evaluation.ape_rmse(t, t) == pytest.approx((0.0, 0.0), abs=1e-12)
        assert evaluation.rpe_rmse(t, t) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_constant_offset_without_alignment(self, rng):
        gt = make_traj(rng)
        est = Trajectory(gt.times, gt.positions + [1.0, 0, 0], gt.quaternions)
        ape_t, ape_r = evaluation.ape_rmse(est, gt, align=False)
        assert ape_t == pytest.approx(1.0, abs=1e-12)
        assert ape_r == pytest.approx(0.0, abs=1e-12)
        # the relative metric kills constant offsets entirely
        rpe_t, rpe_r = evaluation.rpe_rmse(est, gt)
        assert rpe_t == pytest.approx(0.0, abs=1e-12)
        assert rpe_r == pytest.approx(0.0, abs=1e-12)

    def test_alignment_removes_rigid_transform(self, rng):
        gt = make_traj(rng)
        est = transformed(gt, so3_exp([0.2, -0.1, 0.5]), np.array([3.0, -2.0, 1.0]))
        ape_t, ape_r = evaluation.ape_rmse(est, gt, align=True)
        assert ape_t < 1e-9
        assert ape_r < 1e-6

    def test_metrics_invariant_to_common_rigid_frame(self, rng):
        gt = make_traj(rng)
        est = Trajectory(gt.times,
                         gt.positions + rng.normal(0, 0.05, gt.positions.shape),
                         gt.quaternions)
        base_ape = evaluation.ape_rmse(est, gt, align=True)
        base_rpe = evaluation.rpe_rmse(est, gt)
        rot = so3_exp([0.3, 0.2, -0.4])
        t = np.array([5.0, 6.0, -7.0])
        ape2 = evaluation.ape_rmse(transformed(est, rot, t), transformed(gt, rot, t),
                                   align=True)
        rpe2 = evaluation.rpe_rmse(transformed(est, rot, t), transformed(gt, rot, t))
        assert ape2 == pytest.approx(base_ape, rel=1e-9)
        assert rpe2 == pytest.approx(base_rpe, rel=1e-9)

    def test_matches_independent_reference(self, rng):
        """Cross-check against a from-scratch reference built on
        scipy.spatial.transform (stand-in for the standard evaluation tool,
        which is not installable in this environment)."""
        from scipy.spatial.transform import Rotation as SR

        gt = make_traj(rng)
        est = Trajectory(gt.times,
                         gt.positions + rng.normal(0, 0.1, gt.positions.shape),
                         np.array([(Rotation(q) @ so3_exp(rng.normal(0, 0.02, 3))).q
                                   for q in gt.quaternions]))

        def reference_ape(est, gt, align):
            p_est, p_gt = est.positions, gt.positions
            r_est = SR.from_quat(np.roll(est.quaternions, -1, axis=1))
            r_gt = SR.from_quat(np.roll(gt.quaternions, -1, axis=1))
            if align:
                mu_e, mu_g = p_est.mean(0), p_gt.mean(0)
                h = (p_est - mu_e).T @ (p_gt - mu_g)
                u, _, vt = np.linalg.svd(h)
                d = np.sign(np.linalg.det(vt.T @ u.T))
                rot = vt.T @ np.diag([1, 1, d]) @ u.T
                p_est = p_est @ rot.T + (mu_g - rot @ mu_e)
                r_est = SR.from_matrix(rot) * r_est
            trans = np.linalg.norm(p_gt - p_est, axis=1)
            rots = (r_est.inv() * r_gt).magnitude()
            return (np.sqrt(np.mean(trans**2)),
                    np.degrees(np.sqrt(np.mean(rots**2))))

        def reference_rpe(est, gt):
            r_est = SR.from_quat(np.roll(est.quaternions, -1, axis=1))
            r_gt = SR.from_quat(np.roll(gt.quaternions, -1, axis=1))
            te, re_ = [], []
            for k in range(len(est) - 1):
                de = r_est[k].inv().apply(est.positions[k + 1] - est.positions[k])
                dg = r_gt[k].inv().apply(gt.positions[k + 1] - gt.positions[k])
                qe = r_est[k].inv() * r_est[k + 1]
                qg = r_gt[k].inv() * r_gt[k + 1]
                te.append(np.linalg.norm(qg.inv().apply(de - dg)))
                re_.append((qg.inv() * qe).magnitude())
            return (np.sqrt(np.mean(np.square(te))),
                    np.degrees(np.sqrt(np.mean(np.square(re_)))))

        for align in (True, False):
            got = evaluation.ape_rmse(est, gt, align=align)
            want = reference_ape(est, gt, align)
            assert got == pytest.approx(want, abs=1e-6)
        assert evaluation.rpe_rmse(est, gt) == pytest.approx(reference_rpe(est, gt),
                                                             abs=1e-6)

    def test_timestamp_pairing_tolerance(self, rng):
        gt = make_traj(rng)
        est = Trajectory(gt.times + 0.004, gt.positions, gt.quaternions)
        ape_t, _ = evaluation.ape_rmse(est, gt, align=False)
        assert ape_t == pytest.approx(0.0, abs=1e-12)
        far = Trajectory(gt.times + 5000.0, gt.positions, gt.quaternions)
        with pytest.raises(ValueError, match="overlap"):
            evaluation.ape_rmse(far, gt)

    def test_rpe_needs_two_pairs(self, rng):
        gt = make_traj(rng, n=5)
        est = Trajectory(gt.times[:1], gt.positions[:1], gt.quaternions[:1])
        with pytest.raises(ValueError):
            evaluation.rpe_rmse(est, gt)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_umeyama_recovers_random_rigid_transforms(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.normal(size=(12, 3))
        rot = so3_exp(rng.normal(size=3)).matrix
        t = rng.normal(size=3) * 4
        r_got, t_got = evaluation.umeyama_se3(src, src @ rot.T + t)
        assert np.allclose(r_got, rot, atol=1e-9)
        assert np.allclose(t_got, t, atol=1e-8)
