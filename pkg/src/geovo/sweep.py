"""Multi-seed robustness sweeps over geometric noise or frame stride.

Each seed drives a short forward-moving synthetic sequence. Every frame pair
gets its own dense scene (smooth depth surface, exact flows) posed by the
ground-truth relative motion; the pipeline estimates each relative pose from
the (possibly corrupted) flows and the chained estimate is scored against the
ground-truth trajectory.

Runs are pure functions of ``(config, seed, mode, level)``; the thread pool
only changes how fast they finish, never their order in the output.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .config import RunConfig
from .errors import ConfigError, TooShort
from .pipeline import solve_dense
from .se3 import Pose, pose_errors
from .synthetic import (
    apply_geometric_noise,
    distort_second_frame,
    generate_dense_scene,
    make_relative_motion,
    stride_sample,
    strided_relative_poses,
)
from .trajectory import Trajectory, ate, compose_trajectory, kitti_rel_errors

THREADS_ENV = "GEOVO_THREADS"


@dataclass
class SweepRun:
    mode: str
    level: float
    seed: int
    t_err: float
    r_err: float
    ate: float
    rot_err_deg: float  # mean over frame pairs
    trans_err: float  # mean over frame pairs


@dataclass
class SequenceResult:
    run: SweepRun
    estimated: Trajectory
    ground_truth: Trajectory


def thread_count(env=None) -> int:
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _child_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def estimate_pair(cfg: RunConfig, pose: Pose, scene_seed: int, delta_g: float, noise_seed: int) -> Pose:
    """Pipeline estimate of one relative pose from a fresh dense scene."""
    scene = generate_dense_scene(cfg.scene_spec(scene_seed), pose=pose)
    fwd, bwd = scene.flow_fwd, scene.flow_bwd
    if delta_g > 0:
        if cfg.noise_model == "paired":
            fwd, bwd = distort_second_frame(fwd, bwd, delta_g, noise_seed)
        else:
            fwd = apply_geometric_noise(fwd, delta_g, noise_seed)
    return solve_dense(fwd, bwd, scene.inv_depth, scene.intrinsics, cfg.pipeline()).pose


def run_sequence(cfg: RunConfig, seed: int, mode: str, level: float) -> SequenceResult:
    relative = make_relative_motion(cfg.n_steps, cfg.step_length, seed)
    if mode == "geometric":
        pairs = relative
        delta_g, stride = float(level), 1
    elif mode == "stride":
        stride = int(level)
        pairs = strided_relative_poses(relative, stride)
        delta_g = 0.0
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}")
    if not pairs:
        raise TooShort(f"stride {stride} leaves no frame pairs in {cfg.n_steps} steps")
    estimates = []
    rot, trans = [], []
    for i, gt_pose in enumerate(pairs):
        # scene and noise seeds ignore the noise level so the sweep is paired
        est = estimate_pair(cfg, gt_pose, _child_seed(seed, stride, i), delta_g, _child_seed(seed, stride, i, 1))
        estimates.append(est)
        r, t = pose_errors(est, gt_pose)
        rot.append(np.rad2deg(r))
        trans.append(t)
    gt_traj = compose_trajectory(pairs)
    est_traj = compose_trajectory(estimates)
    try:
        t_err, r_err = kitti_rel_errors(est_traj, gt_traj, cfg.segment_lengths, cfg.eval_step)
    except TooShort:
        t_err = r_err = math.nan
    run = SweepRun(mode, float(level), seed, t_err, r_err, ate(est_traj, gt_traj, cfg.align),
                   float(np.mean(rot)), float(np.mean(trans)))
    return SequenceResult(run, est_traj, gt_traj)


def sweep_tasks(cfg: RunConfig) -> list[tuple[int, str, float]]:
    levels = cfg.noise_levels if cfg.sweep_mode == "geometric" else cfg.strides
    seeds = range(cfg.seed, cfg.seed + cfg.sweep_seeds)
    return [(s, cfg.sweep_mode, lv) for lv in levels for s in seeds]


def run_sweep(cfg: RunConfig, threads: int = 1) -> list[SequenceResult]:
    tasks = sweep_tasks(cfg)
    if threads <= 1:
        return [run_sequence(cfg, *t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_sequence, cfg, *t) for t in tasks]
        return [f.result() for f in futures]


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if np.all(np.isnan(a)):
        return math.nan, math.nan
    a = a[~np.isnan(a)]
    return float(np.mean(a)), float(np.std(a))


SUMMARY_METRICS = ("t_err", "r_err", "ate", "rot_err_deg", "trans_err")


def summarize(runs: list[SweepRun]) -> list[dict]:
    """Per-level mean and standard deviation of every metric, in first-seen level order."""
    levels = list(dict.fromkeys(r.level for r in runs))
    rows = []
    for lv in levels:
        cell = [r for r in runs if r.level == lv]
        row = {"mode": cell[0].mode, "level": lv, "n": len(cell)}
        for name in SUMMARY_METRICS:
            row[f"{name}_mean"], row[f"{name}_std"] = _mean_std([getattr(r, name) for r in cell])
        rows.append(row)
    return rows


def run_rows(runs: list[SweepRun]) -> list[dict]:
    return [asdict(r) for r in runs]


def stride_consistency(relative: list[Pose], stride: int) -> float:
    """Largest deviation between composed strided poses and the strided ground-truth trajectory."""
    full = compose_trajectory(relative)
    kept = stride_sample(full.poses, stride)
    composed = compose_trajectory(strided_relative_poses(relative, stride))
    return max(
        float(np.max(np.abs(a.as_matrix() - b.as_matrix()))) for a, b in zip(kept, composed.poses)
    )
