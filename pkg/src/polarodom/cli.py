"""Command-line front end.

Subcommands: simulate, run, eval, ablate, sweep-alpha, mc-cov.  Every
subcommand exits 0 on success and nonzero with a single-line `error: ...`
message otherwise; randomized subcommands are byte-reproducible for a fixed
config and seed.
"""

from __future__ import annotations

import argparse
import sys
import tempfile

import numpy as np

from . import dataio, pipeline
from .config import default_config, load_config, save_config
from .pipeline import ALPHA_GRID
from .radar_model import (
    ABLATION_MODES,
    NoiseParams,
    PolarPoint,
    frobenius_relative_error,
    monte_carlo_covariance,
    point_covariance,
)

MC_RANGES = (1.0, 5.0, 10.0, 30.0)
MC_SIGMA_ANG = (0.005, 0.01, 0.03)
MC_SIGMA_R = (0.05, 0.1)


def _load(args):
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    for name in ("matching", "ablation"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "alpha", None) is not None:
        overrides["alpha"] = float(args.alpha)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seeds=(int(args.seed),))
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    paths = pipeline.simulate_to_dir(cfg, args.out_dir, seed=cfg.seeds[0])
    for key in ("radar", "imu", "groundtruth", "labels"):
        print(f"{key}={paths[key]}")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    traj, reports = pipeline.run_files(cfg, args.radar, args.imu)
    dataio.write_tum(traj, args.out)
    for r in reports:
        print(
            f"frame={r.frame} t={r.t:.6f} cost={r.final_cost:.6e} "
            f"iters={r.iterations} matches={r.matches} landmarks={r.landmarks}"
        )
    print(f"trajectory={args.out} poses={len(traj)}")
    return 0


def cmd_eval(args) -> int:
    metrics = pipeline.evaluate_files(args.est, args.gt, align=not args.no_align)
    print(" ".join(f"{k}={v:.9e}" for k, v in metrics.items()))
    if args.out:
        pipeline.write_table([metrics], args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    with _data_dir(args) as data_dir:
        rows = pipeline.ablation_table(cfg, data_dir)
    pipeline.write_table(rows, args.out)
    for row in rows:
        print(f"mode={row['mode']} ape_trans_m={row['ape_trans_m']:.6g}")
    if args.plot:
        from .svgplot import line_plot
        xs = list(range(len(rows)))
        line_plot(
            [("APE trans (m)", xs, [r["ape_trans_m"] for r in rows])],
            args.out + ".svg", title="Ablation of uncertainty modeling",
            xlabel="mode", ylabel="APE RMSE (m)", marker_only=True,
            x_labels=[r["mode"] for r in rows],
        )
        print(f"plot={args.out}.svg")
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = _load(args)
    with _data_dir(args) as data_dir:
        rows = pipeline.alpha_sweep_table(cfg, data_dir)
    pipeline.write_table(rows, args.out)
    for row in rows:
        print(f"alpha={row['alpha']} ape_trans_m={row['ape_trans_m']:.6g} "
              f"normalized={row['ape_trans_norm']:.6g}")
    if args.plot:
        from .svgplot import line_plot
        line_plot(
            [("normalized APE trans", list(ALPHA_GRID),
              [r["ape_trans_norm"] for r in rows])],
            args.out + ".svg", title="Covariance scale sweep",
            xlabel="alpha (covariance x 2^alpha)", ylabel="normalized RMSE",
        )
        print(f"plot={args.out}.svg")
    return 0


def cmd_mc_cov(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds[0]
    ranges = (args.range,) if args.range is not None else MC_RANGES
    sig_r = (args.sigma_r,) if args.sigma_r is not None else MC_SIGMA_R
    sig_a = (args.sigma_ang,) if args.sigma_ang is not None else MC_SIGMA_ANG
    rows = []
    for r in ranges:
        for sr in sig_r:
            for sa in sig_a:
                gt = PolarPoint(r, 0.3, -0.1)
                noise = NoiseParams(sr, sa, sa)
                analytic = point_covariance(gt, noise).sigma
                empirical = monte_carlo_covariance(gt, noise, args.samples,
                                                   seed=seed)
                rows.append({
                    "r_m": float(r), "sigma_r": float(sr), "sigma_ang": float(sa),
                    "frobenius_rel_err": frobenius_relative_error(empirical, analytic),
                })
                seed += 1
    pipeline.write_table(rows, args.out)
    worst = max(r["frobenius_rel_err"] for r in rows)
    print(f"cells={len(rows)} worst_frobenius_rel_err={worst:.6g}")
    return 0


def cmd_make_config(args) -> int:
    save_config(default_config(), args.out)
    print(f"config={args.out}")
    return 0


class _data_dir:
    """Use --data-dir when given, otherwise a temp dir cleaned up after."""

    def __init__(self, args):
        self.explicit = getattr(args, "data_dir", None)
        self._tmp = None

    def __enter__(self):
        if self.explicit:
            return self.explicit
        self._tmp = tempfile.TemporaryDirectory(prefix="polarodom-")
        return self._tmp.name

    def __exit__(self, *exc):
        if self._tmp is not None:
            self._tmp.cleanup()
        return False


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="polarodom",
        description="Radar-inertial odometry with polar point uncertainty",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, seed=True):
        p.add_argument("--config", help="YAML run configuration (defaults used if omitted)")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed list with one seed")

    p = sub.add_parser("simulate", help="synthesize a dataset to CSV/TUM files")
    add_common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the estimator on radar+IMU CSV files")
    add_common(p)
    p.add_argument("--radar", required=True)
    p.add_argument("--imu", required=True)
    p.add_argument("--out", required=True, help="output trajectory (TUM)")
    p.add_argument("--matching", choices=("probability", "euclidean"))
    p.add_argument("--ablation", choices=ABLATION_MODES)
    p.add_argument("--alpha", type=float, help="covariance scale exponent")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="APE/RPE between an estimate and ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--no-align", action="store_true", help="disable SE(3) alignment for APE")
    p.add_argument("--out", help="also write the metrics as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run all four ablation modes, emit a table")
    add_common(p)
    p.add_argument("--out", required=True, help="output CSV table")
    p.add_argument("--data-dir", help="keep per-seed datasets here (temp dir otherwise)")
    p.add_argument("--plot", choices=("svg",), help="also emit an SVG plot")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-alpha", help="alpha in -3..3 covariance-scale sweep")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--plot", choices=("svg",))
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("mc-cov", help="Monte-Carlo check of the point covariance model")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=200000)
    p.add_argument("--range", type=float, help="restrict the grid to one range")
    p.add_argument("--sigma-r", type=float, help="restrict the grid to one range sigma")
    p.add_argument("--sigma-ang", type=float, help="restrict the grid to one angular sigma")
    p.set_defaults(func=cmd_mc_cov)

    p = sub.add_parser("make-config", help="write the default config as YAML")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one parsable line per the CLI contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
