"""File-level pipeline: simulate to CSV, run the estimator from CSV, evaluate.

Simulated and real data flow through the same CSV formats, so every
experiment below (ablation table, alpha sweep) exercises the full
ingest -> estimate -> write -> evaluate path.
"""

from __future__ import annotations

import os

import numpy as np

from . import dataio
from .config import RunConfig
from .dataio import Trajectory
from .estimator import RadarInertialEstimator, SolverReport
from .evaluation import ape_rmse, rpe_rmse
from .radar_model import ABLATION_MODES
from .simworld import generate


def simulate_to_dir(cfg: RunConfig, out_dir, seed: int | None = None) -> dict:
    """Generate a dataset and write radar/IMU CSVs, ground-truth TUM, labels."""
    os.makedirs(out_dir, exist_ok=True)
    scenario = cfg.scenario(seed=seed)
    gt, scans, imu = generate(scenario)
    paths = {
        "radar": os.path.join(out_dir, "radar.csv"),
        "imu": os.path.join(out_dir, "imu.csv"),
        "groundtruth": os.path.join(out_dir, "groundtruth.tum"),
        "labels": os.path.join(out_dir, "labels.csv"),
    }
    dataio.write_radar_csv(scans, paths["radar"])
    dataio.write_imu_csv(imu, paths["imu"])
    dataio.write_tum(Trajectory(gt.times, gt.positions, gt.quaternions),
                     paths["groundtruth"])
    dataio.write_labels_csv(gt.times, gt.labels, paths["labels"])
    return paths


def run_streams(cfg: RunConfig, scans, imu) -> tuple[Trajectory, list[SolverReport]]:
    """Drive the estimator with interleaved streams (IMU first at equal t)."""
    est = RadarInertialEstimator(cfg)
    imu_iter = iter(imu)
    pending = next(imu_iter, None)
    reports = []
    for scan in scans:
        while pending is not None and pending.t <= scan.t + 1e-12:
            est.push_imu(pending)
            pending = next(imu_iter, None)
        reports.append(est.push_scan(scan))
    return est.finish(), reports


def run_files(cfg: RunConfig, radar_path, imu_path):
    return run_streams(cfg, dataio.read_radar_csv(radar_path),
                       dataio.read_imu_csv(imu_path))


def evaluate_files(est_path, gt_path, align: bool = True) -> dict:
    est = dataio.read_tum(est_path)
    gt = dataio.read_tum(gt_path)
    ape_t, ape_r = ape_rmse(est, gt, align=align)
    rpe_t, rpe_r = rpe_rmse(est, gt)
    return {"ape_trans_m": ape_t, "ape_rot_deg": ape_r,
            "rpe_trans_m": rpe_t, "rpe_rot_deg": rpe_r}


def _run_and_eval(cfg: RunConfig, paths: dict) -> dict:
    traj, _ = run_files(cfg, paths["radar"], paths["imu"])
    est_path = paths["radar"] + ".est.tum"
    dataio.write_tum(traj, est_path)
    return evaluate_files(est_path, paths["groundtruth"], align=True)


def ablation_table(cfg: RunConfig, data_dir) -> list[dict]:
    """Run the four ablation modes over cfg.seeds; report per-mode medians."""
    per_mode = {mode: [] for mode in ABLATION_MODES}
    for seed in cfg.seeds:
        paths = simulate_to_dir(cfg, os.path.join(data_dir, f"seed{seed}"), seed=seed)
        for mode in ABLATION_MODES:
            metrics = _run_and_eval(cfg.with_overrides(ablation=mode), paths)
            per_mode[mode].append(metrics)
    rows = []
    for mode in ABLATION_MODES:
        ms = per_mode[mode]
        rows.append({
            "mode": mode,
            "ape_trans_m": float(np.median([m["ape_trans_m"] for m in ms])),
            "ape_rot_deg": float(np.median([m["ape_rot_deg"] for m in ms])),
            "rpe_trans_m": float(np.median([m["rpe_trans_m"] for m in ms])),
            "rpe_rot_deg": float(np.median([m["rpe_rot_deg"] for m in ms])),
        })
    return rows


ALPHA_GRID = tuple(range(-3, 4))


def alpha_sweep_table(cfg: RunConfig, data_dir) -> list[dict]:
    """Integer alpha grid on shared per-seed datasets; adds a normalized column."""
    per_alpha = {a: [] for a in ALPHA_GRID}
    for seed in cfg.seeds:
        paths = simulate_to_dir(cfg, os.path.join(data_dir, f"seed{seed}"), seed=seed)
        for a in ALPHA_GRID:
            metrics = _run_and_eval(cfg.with_overrides(alpha=float(a)), paths)
            per_alpha[a].append(metrics)
    rows = []
    for a in ALPHA_GRID:
        ms = per_alpha[a]
        rows.append({
            "alpha": a,
            "ape_trans_m": float(np.median([m["ape_trans_m"] for m in ms])),
            "ape_rot_deg": float(np.median([m["ape_rot_deg"] for m in ms])),
            "rpe_trans_m": float(np.median([m["rpe_trans_m"] for m in ms])),
            "rpe_rot_deg": float(np.median([m["rpe_rot_deg"] for m in ms])),
        })
    vals = np.array([r["ape_trans_m"] for r in rows])
    span = vals.max() - vals.min()
    for r, v in zip(rows, vals):
        r["ape_trans_norm"] = float((v - vals.min()) / span) if span > 0 else 0.0
    return rows


def write_table(rows: list[dict], path) -> None:
    """Plain CSV with repr-formatted floats (byte-deterministic)."""
    if not rows:
        raise ValueError("empty table")
    cols = list(rows[0].keys())
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(
                repr(v) if isinstance(v, float) else str(v) for v in (row[c] for c in cols)
            ) + "\n")
