import numpy as np
import pytest

from polarodom import factors as fc
from polarodom.manifold import Rotation, so3_exp
from polarodom.radar_model import (
    NoiseParams,
    PointCovariance,
    PolarPoint,
    bearing_of,
    point_covariance,
    sample_noisy_cartesian,
)

from conftest import fd_jacobian, random_extrinsics, random_state

G_W = np.array([0.0, 0.0, -9.81])
BLOCKS = {"p": slice(0, 3), "theta": slice(3, 6), "v": slice(6, 9),
          "b_a": slice(9, 12), "b_g": slice(12, 15)}


def identity_state(v=(0, 0, 0)):
    return fc.NavState(np.zeros(3), Rotation.identity(), np.array(v, dtype=float),
                       np.zeros(3), np.zeros(3), 0.0)


class TestDopplerResidual:
    def test_static_world_static_sensor(self):
        x = identity_state()
        x.b_g = np.array([0.01, -0.02, 0.03])
        ext = fc.Extrinsics(Rotation.identity(), np.array([0.3, 0.0, 0.1]))
        p = PolarPoint(5.0, 0.3, 0.1, 0.0)
        assert fc.doppler_residual(x, p, ext, omega_meas=x.b_g) == pytest.approx(0.0, abs=1e-15)

    def test_boresight_projection(self):
        x = identity_state(v=(1, 0, 0))
        p = PolarPoint(5.0, 0.0, 0.0, doppler=1.0)
        r = fc.doppler_residual(x, p, fc.Extrinsics.identity(), np.zeros(3))
        assert r == pytest.approx(0.0, abs=1e-15)

    def test_off_axis_projection_oracle(self):
        x = identity_state(v=(1, 0, 0))
        for vd in (0.0, 0.2, 0.5):
            p = PolarPoint(5.0, np.pi / 3, 0.0, doppler=vd)
            r = fc.doppler_residual(x, p, fc.Extrinsics.identity(), np.zeros(3))
            assert r == pytest.approx(np.cos(np.pi / 3) - vd, abs=1e-12)

    def test_tangential_term(self, rng):
        # pure rotation with a lever arm produces a nonzero radial speed
        x = identity_state()
        ext = fc.Extrinsics(Rotation.identity(), np.array([0.5, 0.0, 0.0]))
        omega = np.array([0.0, 0.0, 1.0])
        p = PolarPoint(4.0, np.pi / 2, 0.0, doppler=0.0)
        # sensor origin moves at omega x t_E = (0,0.5,0); bearing +y
        r = fc.doppler_residual(x, p, ext, omega)
        assert r == pytest.approx(0.5, abs=1e-12)


class TestDopplerCovariance:
    def test_radial_motion_hits_floor(self):
        x = identity_state(v=(2.0, 0.0, 0.0))
        p = PolarPoint(8.0, 0.0, 0.0)
        cov = point_covariance(p, NoiseParams(0.1, 0.02, 0.01))
        var = fc.doppler_residual_covariance(x, p, fc.Extrinsics.identity(),
                                             np.zeros(3), cov)
        assert var == pytest.approx(fc.DOPPLER_SIGMA_FLOOR**2)

    def test_stationary_hits_floor(self):
        x = identity_state()
        p = PolarPoint(8.0, 0.7, 0.2)
        cov = point_covariance(p, NoiseParams(0.1, 0.02, 0.01))
        var = fc.doppler_residual_covariance(x, p, fc.Extrinsics.identity(),
                                             np.zeros(3), cov)
        assert var == pytest.approx(fc.DOPPLER_SIGMA_FLOOR**2)

    def test_monte_carlo_variance(self, rng):
        # configurations with the propagated term well above the floor
        noise = NoiseParams(0.1, 0.03, 0.02)
        checked = 0
        while checked < 3:
            ext = random_extrinsics(rng)
            x = random_state(rng)
            x.v = rng.normal(size=3) * 4.0
            omega = rng.normal(size=3) * 0.3
            gt = PolarPoint(rng.uniform(5, 20), rng.uniform(-1, 1), rng.uniform(-0.4, 0.4))
            k = fc.radar_frame_velocity(x, ext, omega)
            gt = PolarPoint(gt.r, gt.theta, gt.phi,
                            doppler=float(bearing_of(gt.theta, gt.phi) @ k))
            cov = point_covariance(gt, noise)
            var = fc.doppler_residual_covariance(x, gt, ext, omega, cov)
            if var < 4 * fc.DOPPLER_SIGMA_FLOOR**2:
                continue
            pts = sample_noisy_cartesian(gt, noise, np.random.default_rng(3 + checked),
                                         200_000)
            dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
            residuals = dirs @ k - gt.doppler
            assert abs(np.var(residuals) / var - 1.0) < 0.05
            checked += 1

    def test_first_order_noise_expansion(self, rng):
        # residual(point + n) - residual(point) - J n shrinks quadratically
        x = random_state(rng)
        ext = random_extrinsics(rng)
        omega = rng.normal(size=3) * 0.2
        p = PolarPoint(9.0, 0.5, -0.3, doppler=0.7)
        k = fc.radar_frame_velocity(x, ext, omega)
        j = fc.doppler_noise_jacobian(p, k)
        base = fc.doppler_residual(x, p, ext, omega)
        cart = p.r * bearing_of(p.theta, p.phi)
        n_dir = rng.normal(size=3)
        n_dir /= np.linalg.norm(n_dir)
        errs = []
        for eps in (1e-1, 1e-2, 1e-3):
            n = eps * n_dir
            from polarodom.radar_model import cartesian_to_polar
            moved = cartesian_to_polar(cart + n, doppler=p.doppler)
            r_moved = fc.doppler_residual(x, moved, ext, omega)
            errs.append(abs(r_moved - base - float(j @ n)))
        assert 0.002 < errs[1] / errs[0] < 0.05
        assert 0.002 < errs[2] / errs[1] < 0.05

    def test_monotone_in_range(self, rng):
        # same geometry, growing range: weights must not tighten with distance
        x = random_state(rng)
        x.v = np.array([1.0, 0.8, -0.2])
        ext = random_extrinsics(rng)
        omega = rng.normal(size=3) * 0.1
        noise = NoiseParams(0.1, 0.02, 0.01)
        prev_d, prev_p = -np.inf, -np.inf
        for r in (2.0, 5.0, 10.0, 20.0, 30.0):
            p = PolarPoint(r, 0.4, 0.1)
            cov = point_covariance(p, noise)
            var_d = fc.doppler_residual_covariance(x, p, ext, omega, cov)
            tr_p = float(np.trace(fc.point_residual_covariance(x, ext, cov)))
            assert var_d >= prev_d - 1e-12
            assert tr_p > prev_p
            prev_d, prev_p = var_d, tr_p


class TestPointResidual:
    def test_identity_consistency(self):
        x = identity_state()
        p = PolarPoint(6.0, 0.3, -0.2)
        from polarodom.radar_model import polar_to_cartesian
        r = fc.point_residual(x, polar_to_cartesian(p), p, fc.Extrinsics.identity())
        assert np.allclose(r, 0.0, atol=1e-12)

    def test_translated_pose(self):
        x = identity_state()
        x.p = np.array([1.0, 0.0, 0.0])
        p = PolarPoint(2.0, 0.0, 0.0)
        r = fc.point_residual(x, [3.0, 0.0, 0.0], p, fc.Extrinsics.identity())
        assert np.allclose(r, 0.0, atol=1e-12)

    def test_transform_chain_oracle(self, rng):
        from scipy.spatial.transform import Rotation as SR
        for _ in range(50):
            x = random_state(rng)
            ext = random_extrinsics(rng)
            p = PolarPoint(rng.uniform(1, 20), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))
            l = rng.normal(size=3) * 5
            got = fc.point_residual(x, l, p, ext)
            cart = p.r * np.array([np.cos(p.phi) * np.cos(p.theta),
                                   np.cos(p.phi) * np.sin(p.theta), np.sin(p.phi)])
            ri = SR.from_quat(np.roll(x.q.q, -1)).as_matrix()
            re = SR.from_quat(np.roll(ext.rotation.q, -1)).as_matrix()
            want = l - (ri @ (re @ cart + ext.translation) + x.p)
            assert np.allclose(got, want, atol=1e-12)

    def test_covariance_similarity(self, rng):
        cov = point_covariance(PolarPoint(10.0, 0.2, 0.1), NoiseParams(0.1, 0.02, 0.01))
        x = identity_state()
        out = fc.point_residual_covariance(x, fc.Extrinsics.identity(), cov)
        assert np.array_equal(out, cov.sigma)
        for _ in range(100):
            x = random_state(rng)
            ext = random_extrinsics(rng)
            out = fc.point_residual_covariance(x, ext, cov)
            assert np.allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(cov.sigma),
                               atol=1e-10)
            assert np.trace(out) == pytest.approx(np.trace(cov.sigma), abs=1e-10)


class TestJacobians:
    def test_doppler_vs_finite_differences(self, rng):
        worst = 0.0
        for _ in range(30):
            x = random_state(rng)
            ext = random_extrinsics(rng)
            omega = rng.normal(size=3) * 0.3
            p = PolarPoint(rng.uniform(1, 20), rng.uniform(-1, 1),
                           rng.uniform(-0.5, 0.5), rng.normal())
            _, jac = fc.doppler_jacobians(x, p, ext, omega)
            for key, blk in (("theta", "theta"), ("v", "v"), ("b_g", "b_g")):
                def f(d):
                    d15 = np.zeros(15)
                    d15[BLOCKS[blk]] = d
                    return fc.doppler_residual(x.retract(d15), p, ext, omega)
                num = fd_jacobian(f, 3).ravel()
                rel = np.linalg.norm(num - jac[key]) / max(np.linalg.norm(num), 1e-12)
                worst = max(worst, rel)
        assert worst < 1e-5

    def test_point_vs_finite_differences(self, rng):
        worst = 0.0
        for _ in range(30):
            x = random_state(rng)
            ext = random_extrinsics(rng)
            p = PolarPoint(rng.uniform(1, 20), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))
            l = rng.normal(size=3) * 5
            _, jac = fc.point_jacobians(x, l, p, ext)
            assert np.array_equal(jac["p"], -np.eye(3))
            assert np.array_equal(jac["l"], np.eye(3))

            def f(d):
                d15 = np.zeros(15)
                d15[BLOCKS["theta"]] = d
                return fc.point_residual(x.retract(d15), l, p, ext)
            num = fd_jacobian(f, 3)
            worst = max(worst, np.linalg.norm(num - jac["theta"]) / np.linalg.norm(num))
        assert worst < 1e-5

    def test_imu_vs_finite_differences(self, rng):
        worst = 0.0
        for _ in range(10):
            xi, xj = random_state(rng), random_state(rng)
            samples = [fc.ImuSample(t, rng.normal(size=3) * 0.4,
                                    rng.normal(size=3) * 2 + [0, 0, 9.81])
                       for t in np.arange(21) * 0.005]
            pre = fc.preintegrate(samples, xi.b_a + rng.normal(size=3) * 0.02,
                                  xi.b_g + rng.normal(size=3) * 0.005,
                                  gravity_body=xi.q.matrix.T @ G_W)
            _, ji, jj = fc.imu_residual_jacobians(pre, xi, xj, G_W)
            num_i = fd_jacobian(lambda d: fc.imu_residual(pre, xi.retract(d), xj, G_W), 15)
            num_j = fd_jacobian(lambda d: fc.imu_residual(pre, xi, xj.retract(d), G_W), 15)
            for num, ana in ((num_i, ji), (num_j, jj)):
                worst = max(worst, np.linalg.norm(num - ana) / np.linalg.norm(num))
        assert worst < 1e-5

    def test_prior_vs_finite_differences(self, rng):
        x, ref = random_state(rng), random_state(rng)
        ana = fc.state_prior_jacobian(x, ref)
        num = fd_jacobian(lambda d: fc.state_prior_residual(x.retract(d), ref), 15)
        assert np.linalg.norm(num - ana) / np.linalg.norm(num) < 1e-6


class TestPreintegration:
    def test_stationary_is_identity(self):
        samples = [fc.ImuSample(t, np.zeros(3), np.array([0, 0, 9.81]))
                   for t in np.arange(0, 1.0001, 0.005)]
        pre = fc.preintegrate(samples, np.zeros(3), np.zeros(3), gravity_body=G_W)
        assert np.linalg.norm(pre.delta_p) < 1e-9
        assert np.linalg.norm(pre.delta_v) < 1e-9
        assert np.linalg.norm(pre.delta_q.log()) < 1e-9

    def test_stationary_with_biases(self):
        b_a = np.array([0.05, -0.02, 0.01])
        b_g = np.array([0.002, 0.001, -0.003])
        samples = [fc.ImuSample(t, b_g, np.array([0, 0, 9.81]) + b_a)
                   for t in np.arange(0, 1.0001, 0.005)]
        pre = fc.preintegrate(samples, b_a, b_g, gravity_body=G_W)
        assert np.linalg.norm(pre.delta_p) < 1e-9
        assert np.linalg.norm(pre.delta_q.log()) < 1e-9

    def test_constant_rate_closed_form(self):
        samples = [fc.ImuSample(t, np.array([0, 0, 0.1]), np.array([0, 0, 9.81]))
                   for t in np.arange(0, 1.0001, 0.005)]
        pre = fc.preintegrate(samples, np.zeros(3), np.zeros(3), gravity_body=G_W)
        assert pre.delta_q.angle_to(so3_exp([0, 0, 0.1])) < 1e-12
        assert np.linalg.norm(pre.delta_p) < 1e-9
        assert np.linalg.norm(pre.delta_v) < 1e-9

    def test_split_and_compose(self, rng):
        samples = [fc.ImuSample(t, rng.normal(size=3) * 0.4,
                                rng.normal(size=3) * 2 + [0, 0, 9.81])
                   for t in np.arange(41) * 0.005]
        whole = fc.preintegrate(samples, np.zeros(3), np.zeros(3), gravity_body=G_W)
        first = fc.preintegrate(samples[:21], np.zeros(3), np.zeros(3), gravity_body=G_W)
        second = fc.preintegrate(samples[20:], np.zeros(3), np.zeros(3),
                                 gravity_body=first.delta_rot.matrix.T @ G_W)
        comp = first.compose(second)
        assert np.linalg.norm(comp.dp_f - whole.dp_f) < 1e-8
        assert np.linalg.norm(comp.dv_f - whole.dv_f) < 1e-8
        assert comp.delta_rot.angle_to(whole.delta_rot) < 1e-8
        assert np.linalg.norm(comp.delta_p - whole.delta_p) < 1e-8

    def test_covariance_is_symmetric_psd(self, rng):
        samples = [fc.ImuSample(t, rng.normal(size=3) * 0.3,
                                rng.normal(size=3) + [0, 0, 9.81])
                   for t in np.arange(21) * 0.005]
        pre = fc.preintegrate(samples, np.zeros(3), np.zeros(3), gravity_body=G_W)
        cov = pre.covariance
        assert np.max(np.abs(cov - cov.T)) < 1e-15
        assert np.linalg.eigvalsh(cov)[0] > 0

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            fc.preintegrate([], np.zeros(3), np.zeros(3), gravity_body=G_W)
        s = fc.ImuSample(0.0, np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            fc.preintegrate([s, s], np.zeros(3), np.zeros(3), gravity_body=G_W)
        with pytest.raises(ValueError, match="degenerate"):
            fc.preintegrate([s], np.zeros(3), np.zeros(3), gravity_body=G_W,
                            t_start=0.0, t_end=0.0)


def test_weighted_residual_validation():
    fc.WeightedResidual(np.zeros(3), np.eye(3), {})
    with pytest.raises(ValueError):
        fc.WeightedResidual(np.zeros(3), np.eye(2), {})
    with pytest.raises(ValueError):
        fc.WeightedResidual(np.array([np.nan, 0, 0]), np.eye(3), {})


def test_navstate_retract_keeps_unit_quaternion(rng):
    x = random_state(rng)
    y = x.retract(rng.normal(size=15))
    assert abs(np.linalg.norm(y.q.q) - 1.0) < 1e-12
    z = x.retract(np.zeros(15))
    assert np.allclose(z.p, x.p) and z.q.angle_to(x.q) == 0.0
