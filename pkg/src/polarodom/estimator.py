"""Sliding-window radar-inertial estimator.

Each radar scan triggers: IMU propagation for the new frame's initial guess,
per-point covariance construction, Doppler factor creation for gated points,
data association (probability-guided or Euclidean baseline) producing point
factors and landmark births, a damped Gauss-Newton solve over all in-window
states and landmarks, and finally a window slide.

Weighting: every residual carries the inverse of its propagated covariance
(the preintegration covariance, the Doppler variance, the rotated point
covariance); covariances are frozen at factor construction using the
IMU-propagated pose.  Ablation modes collapse the sigmas used for these
weights; association always uses the unablated (alpha-scaled) noise model so
the 3-sigma gate keeps its meaning.

Gauge: the objective is invariant to a global translation and a yaw about
gravity, so each solve anchors the oldest in-window state at its pre-solve
estimate (tight on pose, soft on velocity and biases).  No marginalization
prior is formed; dropped frames simply leave the problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import threadpoolctl
from scipy import linalg as sla
from scipy.sparse import coo_matrix

# The solver works on many small dense blocks; multithreaded BLAS loses far
# more to worker wake-up latency than it gains (10x slowdown measured on a
# 2-core box), so BLAS is pinned to one thread while this module is in use.
_BLAS_LIMIT = threadpoolctl.threadpool_limits(limits=1, user_api="blas")

from .association import LandmarkMap, associate, associate_euclidean
from .config import RunConfig
from .dataio import Trajectory
from .factors import (
    Extrinsics,
    ImuSample,
    NavState,
    PreintegratedImu,
    doppler_residual,
    doppler_residual_covariance,
    imu_residual,
    imu_residual_jacobians,
    point_residual_covariance,
    preintegrate,
    state_prior_jacobian,
    state_prior_residual,
)
from .manifold import Rotation, rotation_between, skew, so3_right_jacobian_inv
from .radar_model import (
    PolarPoint,
    RadarScan,
    ablate,
    bearing_of,
    point_covariance,
    polar_to_cartesian,
)

E3 = np.array([0.0, 0.0, 1.0])

# anchor prior sigmas on the oldest in-window state:
# [position m, orientation rad, velocity m/s, accel bias, gyro bias]
ANCHOR_SIGMAS = np.concatenate(
    [np.full(3, 1e-3), np.full(3, 1e-3), np.full(3, 0.1),
     np.full(3, 0.05), np.full(3, 0.005)]
)

BIAS_LIMIT = 1.0  # hard bound on estimated bias magnitudes

MIN_FACTOR_RANGE = 0.05  # m, skip returns closer than this (ill-conditioned)

DAMPING_MIN = 1e-12
DAMPING_MAX = 1e12


class OutOfOrderImu(ValueError):
    pass


class NoImuData(ValueError):
    pass


class SolverDiverged(RuntimeError):
    pass


@dataclass
class SolverReport:
    frame: int = -1
    t: float = 0.0
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = True
    breakdown: dict = field(default_factory=dict)
    matches: int = 0
    landmarks: int = 0
    message: str = ""


@dataclass
class ImuFactor:
    i: int  # frame indices
    j: int
    pre: PreintegratedImu
    whitener: np.ndarray  # (15,15) lower-triangular M with M^T M = cov^-1


@dataclass
class DopplerBatch:
    frame: int
    u: np.ndarray  # (n,3) bearings in the body frame (R_E @ omega)
    doppler: np.ndarray  # (n,)
    omega_meas: np.ndarray  # (3,) gyro sample at the frame time
    inv_std: np.ndarray  # (n,)
    j_bg: np.ndarray  # (n,3), constant rows u @ skew(t_E)


@dataclass
class PointBatch:
    frame: int
    c_body: np.ndarray  # (n,3) points mapped into the body frame
    lm_ids: np.ndarray  # (n,)
    whitener: np.ndarray  # (n,3,3)


@dataclass
class FactorSet:
    imu: list = field(default_factory=list)
    doppler: dict = field(default_factory=dict)  # frame -> DopplerBatch
    points: dict = field(default_factory=dict)  # frame -> PointBatch


@dataclass
class WindowState:
    states: list = field(default_factory=list)  # NavState per in-window frame
    frames: list = field(default_factory=list)  # absolute frame indices
    lmap: LandmarkMap = field(default_factory=LandmarkMap)
    factors: FactorSet = field(default_factory=FactorSet)
    frame_counter: int = 0


def _chol_whitener(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular M with ||M r||^2 == r^T cov^-1 r."""
    lc = np.linalg.cholesky(cov)
    return sla.solve_triangular(lc, np.eye(cov.shape[0]), lower=True)


def _batched_whitener(covs: np.ndarray) -> np.ndarray:
    return np.linalg.inv(np.linalg.cholesky(covs))


def _skew_batch(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


class RadarInertialEstimator:
    """One estimator instance per stream; calls must be externally serialized."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        est = cfg.estimator
        self.ext: Extrinsics = cfg.extrinsics
        self.gravity_w = np.array([0.0, 0.0, -est.gravity])
        self.window_size = est.window
        self.assoc_noise = cfg.noise.scaled(est.alpha)
        self.weight_noise = ablate(self.assoc_noise, est.ablation)
        self.window = WindowState()
        self._imu_buffer: list[ImuSample] = []
        self._last_imu_t = -np.inf
        self._last_scan_t = -np.inf
        self._records: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._finished = False

    # ------------------------------------------------------------------ input

    def push_imu(self, sample: ImuSample) -> None:
        if sample.t <= self._last_imu_t:
            raise OutOfOrderImu(
                f"IMU timestamp {sample.t} not newer than {self._last_imu_t}"
            )
        if sample.t < self._last_scan_t:
            raise OutOfOrderImu(
                f"IMU timestamp {sample.t} older than the last scan {self._last_scan_t}"
            )
        self._last_imu_t = sample.t
        self._imu_buffer.append(sample)

    def push_scan(self, scan: RadarScan) -> SolverReport:
        if scan.t <= self._last_scan_t:
            raise OutOfOrderImu(
                f"scan timestamp {scan.t} not newer than {self._last_scan_t}"
            )
        window = self.window
        frame = window.frame_counter
        window.frame_counter += 1

        if not window.states:
            state = self._bootstrap(scan.t)
        else:
            state = self._propagate(scan.t)
        omega_meas = self._frame_gyro(scan.t)
        window.states.append(state)
        window.frames.append(frame)

        matches = self._build_radar_factors(frame, state, scan, omega_meas)
        report = self._solve()
        report.frame = frame
        report.t = scan.t
        report.matches = matches
        report.landmarks = len(window.lmap)
        window.lmap.mark_moved()

        if self.cfg.estimator.report_newest:
            newest = window.states[-1]
            self._records.append((newest.t, newest.p.copy(), newest.q.q.copy()))
        if len(window.states) > self.window_size:
            self._slide()
        self._last_scan_t = scan.t
        self._imu_buffer = [s for s in self._imu_buffer if s.t >= scan.t - 1e-12]
        return report

    def finish(self) -> Trajectory:
        """Flush remaining window states and return the full trajectory."""
        if not self._finished:
            if not self.cfg.estimator.report_newest:
                for st in self.window.states:
                    self._records.append((st.t, st.p.copy(), st.q.q.copy()))
            self._finished = True
        return self.estimated_trajectory()

    def estimated_trajectory(self) -> Trajectory:
        if not self._records:
            raise ValueError("no poses estimated yet")
        ts = np.array([r[0] for r in self._records])
        ps = np.array([r[1] for r in self._records])
        qs = np.array([r[2] for r in self._records])
        return Trajectory(ts, ps, qs)

    # ------------------------------------------------------- frame construction

    def _bootstrap(self, t: float) -> NavState:
        est = self.cfg.estimator
        lo = t - est.gravity_align_window - 1e-9
        samples = [s for s in self._imu_buffer if lo <= s.t <= t + 1e-9]
        if not samples:
            raise NoImuData("no IMU data available before the first scan")
        f_mean = np.mean([s.a for s in samples], axis=0)
        norm = np.linalg.norm(f_mean)
        if norm < 1e-6:
            rot = Rotation.identity()
        else:
            rot = Rotation.from_matrix(rotation_between(f_mean / norm, E3))
        return NavState(np.zeros(3), rot, np.zeros(3), np.zeros(3), np.zeros(3), t)

    def _propagate(self, t: float) -> NavState:
        prev = self.window.states[-1]
        seg = [s for s in self._imu_buffer if prev.t - 1e-9 <= s.t <= t + 1e-9]
        if not any(s.t > prev.t + 1e-12 for s in seg):
            raise NoImuData(f"no IMU data between scans at {prev.t} and {t}")
        pre = preintegrate(
            seg, prev.b_a, prev.b_g,
            gravity_body=prev.q.matrix.T @ self.gravity_w,
            noise=self.cfg.imu_noise, t_start=prev.t, t_end=t,
        )
        whitener = _chol_whitener(pre.covariance)
        self.window.factors.imu.append(
            ImuFactor(self.window.frames[-1], self.window.frame_counter - 1, pre, whitener)
        )
        dt = pre.dt
        rot = prev.q.matrix
        return NavState(
            prev.p + prev.v * dt + rot @ pre.delta_p,
            prev.q @ pre.delta_q,
            prev.v + rot @ pre.delta_v,
            prev.b_a.copy(), prev.b_g.copy(), t,
        )

    def _frame_gyro(self, t: float) -> np.ndarray:
        if not self._imu_buffer:
            return np.zeros(3)
        nearest = min(self._imu_buffer, key=lambda s: abs(s.t - t))
        return np.asarray(nearest.w, dtype=float)

    def _build_radar_factors(self, frame: int, state: NavState, scan: RadarScan,
                             omega_meas: np.ndarray) -> int:
        est = self.cfg.estimator
        ext = self.ext
        r_ext = ext.rotation.matrix
        points = [p for p in scan.points if p.r > MIN_FACTOR_RANGE]

        dop_u, dop_vd, dop_istd = [], [], []
        pt_c, pt_ids, pt_whts = [], [], []
        matches = 0
        # association runs against the map snapshot from previous frames;
        # births happen afterwards so points of one scan cannot self-match
        results = []
        for idx, p in enumerate(points):
            cov_w = point_covariance(p, self.weight_noise)
            # Doppler factor, gated on the propagated-guess residual
            rd = doppler_residual(state, p, ext, omega_meas)
            if abs(rd) <= est.doppler_gate:
                var = doppler_residual_covariance(
                    state, p, ext, omega_meas, cov_w, sigma_floor=est.doppler_floor
                )
                dop_u.append(r_ext @ bearing_of(p.theta, p.phi))
                dop_vd.append(p.doppler)
                dop_istd.append(1.0 / np.sqrt(var))

            if est.matching == "probability":
                cov_a = (
                    cov_w if self.weight_noise is self.assoc_noise
                    else point_covariance(p, self.assoc_noise)
                )
                res = associate(p, state, ext, cov_a, self.window.lmap, idx)
            else:
                res = associate_euclidean(p, state, ext, self.window.lmap,
                                          est.euclidean_gate, idx)
            results.append(res)
            pt_c.append(r_ext @ polar_to_cartesian(p) + ext.translation)
            pt_whts.append(point_residual_covariance(state, ext, cov_w))

        # one-to-one correspondence: when several points claim one landmark,
        # the highest-density claim wins and the rest spawn new landmarks
        order = sorted(
            (i for i, r in enumerate(results) if r.matched),
            key=lambda i: (-results[i].density, results[i].landmark_id, i),
        )
        taken: set[int] = set()
        winner = {}
        for i in order:
            lid = results[i].landmark_id
            if lid not in taken:
                taken.add(lid)
                winner[i] = lid
        for i, (p, res) in enumerate(zip(points, results)):
            if i in winner:
                self.window.lmap.record_observation(winner[i], frame)
                pt_ids.append(winner[i])
                matches += 1
            else:
                lm = self.window.lmap.add(
                    state.q.matrix @ (r_ext @ polar_to_cartesian(p) + ext.translation)
                    + state.p,
                    frame,
                )
                pt_ids.append(lm.id)

        if dop_u:
            self.window.factors.doppler[frame] = DopplerBatch(
                frame, np.array(dop_u), np.array(dop_vd), omega_meas,
                np.array(dop_istd), np.array(dop_u) @ skew(ext.translation),
            )
        if pt_c:
            self.window.factors.points[frame] = PointBatch(
                frame, np.array(pt_c), np.array(pt_ids, dtype=int),
                _batched_whitener(np.array(pt_whts)),
            )
        return matches

    # ------------------------------------------------------------------ solving

    def _slide(self) -> None:
        window = self.window
        evicted_frame = window.frames.pop(0)
        evicted_state = window.states.pop(0)
        if not self.cfg.estimator.report_newest:
            self._records.append(
                (evicted_state.t, evicted_state.p.copy(), evicted_state.q.q.copy())
            )
        window.factors.imu = [f for f in window.factors.imu if f.i != evicted_frame]
        window.factors.doppler.pop(evicted_frame, None)
        batch = window.factors.points.pop(evicted_frame, None)
        if batch is not None:
            # retire landmarks whose only observation came from the evicted
            # frame; multiply-observed ones stay matchable in the map
            still_referenced = set()
            for b in window.factors.points.values():
                still_referenced.update(int(i) for i in b.lm_ids)
            for lm_id in sorted(set(int(i) for i in batch.lm_ids)):
                if lm_id in still_referenced or lm_id not in window.lmap:
                    continue
                if window.lmap[lm_id].observation_count <= 1:
                    window.lmap.remove(lm_id)

    def _solve(self) -> SolverReport:
        opts = self.cfg.solver
        window = self.window
        states = window.states
        n_states = len(states)
        frame_slot = {f: i for i, f in enumerate(window.frames)}

        lm_ids = sorted(
            {int(i) for b in window.factors.points.values() for i in b.lm_ids}
        )
        lm_slot = {lid: k for k, lid in enumerate(lm_ids)}
        lm_pos = (
            np.array([window.lmap[lid].position for lid in lm_ids])
            if lm_ids else np.zeros((0, 3))
        )
        n_cols = 15 * n_states + 3 * len(lm_ids)
        lm_base = 15 * n_states

        def state_cols(frame):
            b = 15 * frame_slot[frame]
            return np.arange(b, b + 15)

        anchor_ref = states[0].copy()
        anchor_inv = 1.0 / ANCHOR_SIGMAS

        # --- static row/col layout (the factor graph is fixed during a solve)
        rows_list, cols_list = [], []
        row_base = 0

        cols_s0 = state_cols(window.frames[0])
        rows_list.append(row_base + np.repeat(np.arange(15), 15))
        cols_list.append(np.tile(cols_s0, 15))
        row_base += 15

        imu_factors = [f for f in window.factors.imu if f.i in frame_slot]
        for f in imu_factors:
            ci = np.concatenate([state_cols(f.i), state_cols(f.j)])
            rows_list.append(row_base + np.repeat(np.arange(15), 30))
            cols_list.append(np.tile(ci, 15))
            row_base += 15

        dop_batches = [window.factors.doppler[k] for k in sorted(window.factors.doppler)]
        for b in dop_batches:
            n = len(b.doppler)
            sc = state_cols(b.frame)
            cols9 = np.concatenate([sc[3:6], sc[6:9], sc[12:15]])
            rows_list.append(row_base + np.repeat(np.arange(n), 9))
            cols_list.append(np.tile(cols9, n))
            row_base += n

        pt_batches = [window.factors.points[k] for k in sorted(window.factors.points)]
        for b in pt_batches:
            n = len(b.lm_ids)
            sc = state_cols(b.frame)
            colmat = np.empty((n, 9), dtype=int)
            colmat[:, 0:3] = sc[0:3]
            colmat[:, 3:6] = sc[3:6]
            slots = np.array([lm_slot[int(i)] for i in b.lm_ids])
            colmat[:, 6:9] = lm_base + 3 * slots[:, None] + np.arange(3)
            rows3 = (row_base + 3 * np.arange(n)[:, None] + np.arange(3)).ravel()
            rows_list.append(np.repeat(rows3, 9))
            cols_list.append(np.repeat(colmat, 3, axis=0).ravel())
            row_base += 3 * n

        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        n_rows = row_base

        pt_slots = {
            b.frame: np.array([lm_slot[int(i)] for i in b.lm_ids]) for b in pt_batches
        }

        def evaluate(cur_states, cur_lm, with_jacobian=True):
            """Whitened residual stack; Jacobian values only when needed
            (rejected damping trials are cost-only)."""
            res_parts, val_parts = [], []
            bd = {"prior": 0.0, "imu": 0.0, "doppler": 0.0, "point": 0.0}

            s0 = cur_states[0]
            r0 = state_prior_residual(s0, anchor_ref) * anchor_inv
            res_parts.append(r0)
            bd["prior"] += float(r0 @ r0)
            if with_jacobian:
                j0 = state_prior_jacobian(s0, anchor_ref) * anchor_inv[:, None]
                val_parts.append(j0.ravel())

            for f in imu_factors:
                xi = cur_states[frame_slot[f.i]]
                xj = cur_states[frame_slot[f.j]]
                if with_jacobian:
                    r, ji, jj = imu_residual_jacobians(f.pre, xi, xj, self.gravity_w)
                    jw = f.whitener @ np.concatenate([ji, jj], axis=1)
                    val_parts.append(jw.ravel())
                else:
                    r = imu_residual(f.pre, xi, xj, self.gravity_w)
                rw = f.whitener @ r
                res_parts.append(rw)
                bd["imu"] += float(rw @ rw)

            for b in dop_batches:
                x = cur_states[frame_slot[b.frame]]
                ri = x.q.matrix
                body_v = ri.T @ x.v
                kb = body_v + np.cross(b.omega_meas - x.b_g, self.ext.translation)
                r = (b.u @ kb - b.doppler) * b.inv_std
                res_parts.append(r)
                bd["doppler"] += float(r @ r)
                if with_jacobian:
                    vals = np.concatenate(
                        [b.u @ skew(body_v), b.u @ ri.T, b.j_bg], axis=1
                    )
                    vals *= b.inv_std[:, None]
                    val_parts.append(vals.ravel())

            for b in pt_batches:
                x = cur_states[frame_slot[b.frame]]
                ri = x.q.matrix
                lpos = cur_lm[pt_slots[b.frame]]
                world = b.c_body @ ri.T + x.p
                r = lpos - world
                rw = np.matmul(b.whitener, r[:, :, None])[:, :, 0]
                res_parts.append(rw.ravel())
                bd["point"] += float(np.sum(rw * rw))
                if with_jacobian:
                    j_theta = np.matmul(ri[None, :, :], _skew_batch(b.c_body))
                    jw_theta = np.matmul(b.whitener, j_theta)
                    blocks = np.concatenate([-b.whitener, jw_theta, b.whitener], axis=2)
                    val_parts.append(blocks.ravel())

            res = np.concatenate(res_parts)
            vals = np.concatenate(val_parts) if with_jacobian else None
            return res, vals, bd

        n_lms = len(lm_ids)
        s_dim = lm_base

        def damped_step(h, g, lam):
            """Solve (H + lam I) delta = -g, eliminating the block-diagonal
            landmark block by Schur complement.

            Identity damping keeps weakly-observable directions (common-mode
            biases) from freezing under the huge random-walk weights on the
            diagonal.
            """
            if n_lms == 0:
                cf = sla.cho_factor(h + lam * np.eye(s_dim), lower=True)
                return sla.cho_solve(cf, -g)
            hss = h[:s_dim, :s_dim] + lam * np.eye(s_dim)
            hsl = h[:s_dim, s_dim:]
            ll = h[s_dim:, s_dim:].reshape(n_lms, 3, n_lms, 3)
            idx = np.arange(n_lms)
            ll_blocks = ll[idx, :, idx, :] + lam * np.eye(3)
            ll_inv = np.linalg.inv(ll_blocks)
            gs, gl = g[:s_dim], g[s_dim:].reshape(n_lms, 3)
            # w = hsl @ blockdiag(ll_inv), built with batched matmuls
            hsl_b = np.ascontiguousarray(
                hsl.reshape(s_dim, n_lms, 3).transpose(1, 0, 2)
            )  # (L, s, 3)
            w_b = np.matmul(hsl_b, ll_inv)  # (L, s, 3)
            w_flat = w_b.transpose(1, 0, 2).reshape(s_dim, 3 * n_lms)
            schur = hss - w_flat @ hsl.T
            rhs = -(gs - w_flat @ g[s_dim:])
            cf = sla.cho_factor(schur, lower=True)
            ds = sla.cho_solve(cf, rhs)
            rl = (hsl.T @ ds).reshape(n_lms, 3) + gl
            dl = -np.matmul(ll_inv, rl[:, :, None])[:, :, 0]
            return np.concatenate([ds, dl.ravel()])

        r_w, vals, bd = evaluate(states, lm_pos)
        cost = float(r_w @ r_w)
        init_cost = cost
        report = SolverReport(initial_cost=init_cost, breakdown=bd)
        if cost <= 1e-24:
            report.final_cost = cost
            return report

        lam = opts.damping_init
        iterations = 0
        converged = False
        message = ""
        for _ in range(opts.max_iterations):
            if vals is None:  # re-linearize after an accepted step
                r_w, vals, bd = evaluate(states, lm_pos)
            a_mat = coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
            h = (a_mat.T @ a_mat).toarray()
            g = a_mat.T @ r_w

            accepted = False
            retries = 0
            while retries <= opts.max_damping_retries:
                try:
                    delta = damped_step(h, g, lam)
                except np.linalg.LinAlgError:
                    lam = min(lam * 10.0, DAMPING_MAX)
                    retries += 1
                    continue
                if float(np.linalg.norm(delta)) < opts.step_tolerance:
                    converged = True
                    message = "step below tolerance"
                    break
                cand_states = [
                    s.retract(delta[15 * k:15 * k + 15]) for k, s in enumerate(states)
                ]
                cand_lm = lm_pos + delta[lm_base:].reshape(-1, 3)
                r_new, _, bd_new = evaluate(cand_states, cand_lm, with_jacobian=False)
                new_cost = float(r_new @ r_new)
                if new_cost <= cost and np.isfinite(new_cost):
                    states = cand_states
                    lm_pos = cand_lm
                    prev_cost = cost
                    cost, r_w, bd = new_cost, r_new, bd_new
                    vals = None
                    lam = max(lam * 0.5, DAMPING_MIN)
                    iterations += 1
                    accepted = True
                    if prev_cost - cost <= opts.cost_tolerance * max(prev_cost, 1e-300):
                        converged = True
                        message = "relative cost decrease below tolerance"
                    break
                lam = min(lam * 10.0, DAMPING_MAX)
                retries += 1

            if converged:
                break
            if not accepted:
                # nothing improved across all damping escalations: either we
                # are at a stationary point or the step model broke down
                pred = float(-g @ delta - 0.5 * delta @ (h @ delta))
                if pred <= opts.cost_tolerance * max(cost, 1e-300):
                    converged = True
                    message = "stationary (no descent direction)"
                    break
                raise SolverDiverged(
                    f"cost increased for {retries} damping escalations "
                    f"(cost {cost:.6g})"
                )
        else:
            message = "iteration limit reached"

        if any(np.max(np.abs(np.r_[s.b_a, s.b_g])) > BIAS_LIMIT for s in states):
            for s in states:
                np.clip(s.b_a, -BIAS_LIMIT, BIAS_LIMIT, out=s.b_a)
                np.clip(s.b_g, -BIAS_LIMIT, BIAS_LIMIT, out=s.b_g)
            message = (message + "; bias clipped to limit").strip("; ")

        window.states[:] = states
        for lid, k in lm_slot.items():
            window.lmap[lid].position = lm_pos[k].copy()
        report.iterations = iterations
        report.final_cost = cost
        report.converged = converged
        report.breakdown = bd
        report.message = message
        return report
