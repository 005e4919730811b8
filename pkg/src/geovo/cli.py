"""``geovo`` command line: synth, solve, eval, noise-sweep, opv.

Every subcommand accepts ``--config PATH`` plus one ``--<key>`` flag per
configuration key (underscores become dashes, e.g. ``--n-points``,
``--outliers``, ``--wd``). Flags override the file, the file overrides the
defaults, and the resolved configuration is written to ``<out>/config.json``.

Exit status: 0 success, 2 configuration error, 3 input/format/IO error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as gio
from .config import KEYS, RunConfig, from_dict, load_config, parse_flag
from .errors import ConfigError, DimensionMismatch, GeovoError, PathError
from .flow import make_position_grids, opv_to_flow
from .pipeline import solve_correspondences, solve_dense
from .sweep import run_rows, run_sweep, summarize, thread_count
from .synthetic import generate_dense_scene, generate_scene, make_opv_from_flow
from .trajectory import evaluate

log = logging.getLogger("geovo")

COMMANDS = ("synth", "solve", "eval", "noise-sweep", "opv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geovo", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "render a synthetic two-view scene bundle",
        "solve": "estimate the relative pose from flow and inverse depth",
        "eval": "score an estimated trajectory against ground truth",
        "noise-sweep": "multi-seed robustness sweep over noise or stride",
        "opv": "convert a flow probability volume into a .flo file",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", metavar="PATH", help="JSON configuration file")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key in KEYS:
            p.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: parse_flag(k, v) for k, v in vars(args).items() if k in KEYS}
    return from_dict(overrides, base)


# filesystem helpers


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("--out is required")
    out = Path(cfg.out)
    if not out.is_dir():
        raise PathError(out, "output directory does not exist")
    return out


def _input_path(cfg: RunConfig, key: str, default_name: str) -> Path:
    explicit = getattr(cfg, key)
    if explicit is not None:
        path = Path(explicit)
    elif cfg.input is not None:
        path = Path(cfg.input) / default_name
    else:
        raise ConfigError(f"--{key.replace('_', '-')} or --input is required")
    if not path.is_file():
        raise PathError(path, "no such file")
    return path


def _write_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.json").write_text(cfg.to_json())


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])


# commands


def cmd_synth(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    _write_config(out, cfg)
    spec = cfg.scene_spec()
    if cfg.dense:
        scene = generate_dense_scene(spec)
        gio.write_flo(out / "flow_fwd.flo", scene.flow_fwd)
        gio.write_flo(out / "flow_bwd.flo", scene.flow_bwd)
        gio.write_pfm(out / "inv_depth.pfm", scene.inv_depth)
        if cfg.write_opv:
            gio.write_opv(out / "flow_fwd.opv", make_opv_from_flow(scene.flow_fwd, cfg.k))
        np.savetxt(out / "inlier_flags.txt", scene.inlier_flags.astype(int), fmt="%d")
        pose, flags = scene.pose, scene.inlier_flags
    else:
        gt = generate_scene(spec)
        gio.write_correspondences(out / "correspondences.csv", gt.correspondences())
        np.savetxt(out / "inlier_flags.txt", gt.inlier_flags.astype(int), fmt="%d")
        pose, flags = gt.pose, gt.inlier_flags
    gio.write_kitti_poses([pose], out / "pose_gt.txt")
    return {"outliers": int(np.sum(~flags)), "points": int(flags.size)}


def cmd_solve(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    _write_config(out, cfg)
    K = cfg.intrinsics()
    pcfg = cfg.pipeline()
    sparse = cfg.correspondences is not None or (
        cfg.flow_fwd is None and cfg.input is not None and (Path(cfg.input) / "correspondences.csv").is_file()
        and not (Path(cfg.input) / "flow_fwd.flo").is_file()
    )
    if sparse:
        corr = gio.read_correspondences(_input_path(cfg, "correspondences", "correspondences.csv"))
        result = solve_correspondences(corr, K, pcfg)
    else:
        fwd = gio.read_flo(_input_path(cfg, "flow_fwd", "flow_fwd.flo"))
        bwd = gio.read_flo(_input_path(cfg, "flow_bwd", "flow_bwd.flo"))
        inv_depth = gio.read_pfm(_input_path(cfg, "inv_depth", "inv_depth.pfm"))
        shapes = {fwd.shape[:2], bwd.shape[:2], inv_depth.shape, (K.height, K.width)}
        if len(shapes) != 1:
            raise DimensionMismatch(
                f"flow {fwd.shape[:2]}, backward flow {bwd.shape[:2]}, inverse depth {inv_depth.shape} "
                f"and camera {(K.height, K.width)} disagree"
            )
        result = solve_dense(fwd, bwd, inv_depth, K, pcfg)
    sol = result.solution
    gio.write_kitti_poses([result.pose], out / "pose.txt")
    corr = result.correspondences
    rows = [
        {"px": p[0], "py": p[1], "inv_depth_initial": d0, "inv_depth_refined": d1}
        for p, d0, d1 in zip(corr.p.tolist(), corr.inv_depth.tolist(), sol.refined_inverse_depths.tolist())
    ]
    _write_rows(out / "depths.csv", rows)
    gio.write_trace(out / "trace.csv", sol.trace)
    summary = {
        "n_correspondences": len(corr),
        "initial_cost": sol.initial_cost,
        "final_cost": sol.final_cost,
        "accepted_steps": sol.accepted_steps,
        "initial_lambda": sol.initial_lambda,
        "w_d": cfg.wd,
        "init": cfg.init,
        "init_pose": gio.format_kitti_pose(result.init_pose),
    }
    _write_json(out / "summary.json", summary)
    return summary


def cmd_eval(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    _write_config(out, cfg)
    est = gio.read_kitti_poses(_input_path(cfg, "est", "pose_est.txt"))
    gt = gio.read_kitti_poses(_input_path(cfg, "gt", "pose_gt.txt"))
    report = evaluate(est, gt, cfg.align, cfg.eval_step, cfg.segment_lengths)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "metrics.txt").write_text(report.to_table() + "\n")
    rows = [
        {"frame": i, "gt_x": g[0], "gt_y": g[1], "gt_z": g[2], "est_x": e[0], "est_y": e[1], "est_z": e[2]}
        for i, (g, e) in enumerate(zip(gt.positions().tolist(), est.positions().tolist()))
    ]
    _write_rows(out / "trajectory.csv", rows)
    print(report.to_table())
    return json.loads(report.to_json())


def cmd_noise_sweep(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    _write_config(out, cfg)
    threads = thread_count()
    results = run_sweep(cfg, threads)
    runs = [r.run for r in results]
    _write_rows(out / "sweep_runs.csv", run_rows(runs))
    summary = summarize(runs)
    _write_rows(out / "sweep_summary.csv", summary)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for r in results:
        tag = f"seed{r.run.seed}"
        gio.write_kitti_poses(r.ground_truth, traj_dir / f"{tag}_{r.run.mode}{r.run.level:g}_gt.txt")
        gio.write_kitti_poses(r.estimated, traj_dir / f"{tag}_{r.run.mode}{r.run.level:g}_est.txt")
    for row in summary:
        print(
            f"{row['mode']} {row['level']:g}: ATE {row['ate_mean']:.4g} +- {row['ate_std']:.4g}, "
            f"rot {row['rot_err_deg_mean']:.4g} deg, t_err {row['t_err_mean']:.4g} %"
        )
    return {"runs": len(runs), "threads": threads}


def cmd_opv(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    _write_config(out, cfg)
    opv = gio.read_opv(_input_path(cfg, "opv", "flow_fwd.opv"))
    k = (opv.shape[2] - 1) // 2
    flow = opv_to_flow(opv, make_position_grids(k))
    gio.write_flo(out / "flow.flo", flow)
    return {"k": k, "height": flow.shape[0], "width": flow.shape[1]}


HANDLERS = {
    "synth": cmd_synth,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "noise-sweep": cmd_noise_sweep,
    "opv": cmd_opv,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        HANDLERS[args.command](cfg)
    except GeovoError as exc:
        print(f"geovo {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        where = exc.filename if exc.filename is not None else "?"
        print(f"geovo {args.command}: PathError: {where}: {exc.strerror}", file=sys.stderr)
        return PathError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
