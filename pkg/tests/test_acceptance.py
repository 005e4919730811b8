"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``. The full suite
takes a few minutes because several criteria sweep 50 to 200 seeds.
"""

import json
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.stats import spearmanr

from geovo import io as gio
from geovo.ba import BAProblem, _make_state, ba_solve, jacobians, lambda_from_error, lm_step
from geovo.flow import make_position_grids, opv_to_flow
from geovo.losses import (
    ALPHA,
    cross_task_loss,
    edge_aware_smoothness,
    geometric_consistency,
    normalized_photometric,
    photometric_r,
    pointwise_depth_loss,
    rigid_correspondence,
    self_supervised_loss,
    ssim,
)
from geovo.p3p import RansacConfig, p3p_ransac
from geovo.pipeline import PipelineConfig, solve_correspondences, solve_dense
from geovo.se3 import Intrinsics, Pose, exp_map, log_map, pose_errors, translation_direction_error
from geovo.sweep import stride_consistency
from geovo.synthetic import (
    SceneSpec,
    distort_second_frame,
    generate_dense_scene,
    generate_scene,
    make_opv_from_flow,
    make_relative_motion,
)
from geovo.trajectory import Trajectory, ate, compose_trajectory, kitti_rel_errors
from oracles import (
    dense_step,
    finite_difference,
    naive_cross,
    naive_geometric,
    naive_normalized,
    naive_r,
    naive_smoothness,
    naive_ssim,
    naive_weighted_sum,
    relative_error,
)

K = Intrinsics.centered(100.0, 128, 96)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail

    return emit


def test_criterion_01_exact_recovery(report):
    worst_rot = worst_trans = worst_cost = worst_time = 0.0
    passed = 0
    for seed in range(100):
        spec = SceneSpec(seed=seed, n_points=3000, intrinsics=K,
                         pose_magnitude=(np.deg2rad(30.0), 1.0), pose_minimum=(0.0, 1.0))
        gt = generate_scene(spec)
        assert abs(np.linalg.norm(gt.pose.translation) - 1.0) < 1e-12
        corr = gt.correspondences()
        t0 = time.perf_counter()
        init = p3p_ransac(corr, K, RansacConfig(seed=seed)).pose
        sol = ba_solve(BAProblem(corr, K, init, max_iterations=30))
        elapsed = time.perf_counter() - t0
        rot, trans = pose_errors(sol.pose, gt.pose)
        ok = rot < 1e-6 and trans < 1e-6 and sol.final_cost < 1e-10 and elapsed < 1.0
        passed += ok
        worst_rot, worst_trans = max(worst_rot, rot), max(worst_trans, trans)
        worst_cost, worst_time = max(worst_cost, sol.final_cost), max(worst_time, elapsed)
    report(1, passed == 100,
           f"{passed}/100 seeds; worst rot {worst_rot:.2e} rad, trans {worst_trans:.2e}, "
           f"cost {worst_cost:.2e}, time {worst_time:.3f} s")


def test_criterion_01_pose_range():
    # the synthetic poses used above respect the stated rotation bound
    for seed in range(100):
        spec = SceneSpec(seed=seed, intrinsics=K, pose_magnitude=(np.deg2rad(30.0), 1.0), pose_minimum=(0.0, 1.0))
        pose = generate_scene(replace(spec, n_points=10)).pose
        assert np.linalg.norm(log_map(pose)[:3]) <= np.deg2rad(30.0) + 1e-12


def test_criterion_02_jacobians(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        T = exp_map(np.concatenate([rng.normal(scale=0.2, size=3), rng.normal(scale=0.5, size=3)]))
        p = rng.uniform([0, 0], [127, 95])
        q = p + rng.normal(scale=2.0, size=2)
        d = 1.0 / rng.uniform(2, 10)
        JT, Jd = jacobians(p[None], T, np.array([d]), K)
        fJT, fJd = finite_difference(p, q, T, d, K, h=1e-6)
        worst = max(worst, relative_error(JT[0], fJT), relative_error(Jd[0], fJd))
    report(2, worst < 1e-4, f"max relative error {worst:.2e} over 1000 configurations")


def test_criterion_03_schur_vs_dense(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(6, 51))  # BA needs at least six points
        gt = generate_scene(SceneSpec(seed=10_000 + i, n_points=n, noise_sigma_px=0.5, intrinsics=K))
        corr = gt.correspondences()
        corr.inv_depth = corr.inv_depth * rng.uniform(0.9, 1.1, n)
        init = exp_map(rng.normal(scale=0.02, size=6)) @ gt.pose
        problem = BAProblem(corr, K, init)
        lam = float(10 ** rng.uniform(-6, 4))
        state = _make_state(init, corr.inv_depth, corr, K, problem.huber_delta, problem.robust)
        step = lm_step(state, lam, problem).delta
        ref = dense_step(state, problem, lam)
        worst = max(worst, np.max(np.abs(step - ref)) / np.max(np.abs(ref)))
    report(3, worst < 1e-8, f"max relative deviation {worst:.2e} over 200 problems (N <= 50)")


def test_criterion_04_lambda_schedule(report):
    grid = np.linspace(0, 60, 6001)
    lams = np.array([lambda_from_error(e) for e in grid])
    strictly = bool(np.all(np.diff(lams) < 0))
    at_five = abs(lambda_from_error(5.0) - (1 + 9999 * np.exp(-1))) < 1e-6
    at_zero = lambda_from_error(0.0) == 1e4
    lo, hi = np.inf, -np.inf
    for seed in range(30):
        gt = generate_scene(SceneSpec(seed=seed, n_points=300, intrinsics=K, outlier_fraction=0.2, noise_sigma_px=1.0))
        for policy in ("accept_reject", "unconditional"):
            init = exp_map(np.random.default_rng(seed).normal(scale=0.05, size=6)) @ gt.pose
            sol = ba_solve(BAProblem(gt.correspondences(), K, init, lm_policy=policy))
            values = [rec.lam for rec in sol.trace] + [sol.initial_lambda]
            lo, hi = min(lo, min(values)), max(hi, max(values))
    bounded = 1.0 <= lo and hi <= 1e4
    report(4, at_zero and strictly and at_five and bounded,
           f"lambda(0)={lambda_from_error(0.0):g}, strictly decreasing={strictly}, "
           f"lambda(5)={lambda_from_error(5.0):.6f}, trace range [{lo:.4g}, {hi:.4g}]")


def test_criterion_05_robustness_ablation(report):
    full = PipelineConfig()
    base = PipelineConfig(use_masks=False, robust=False)
    rows = []
    for seed in range(50):
        scene = generate_dense_scene(SceneSpec(seed=seed, intrinsics=K, outlier_fraction=0.3))
        errs = []
        for cfg in (full, base):
            pose = solve_dense(scene.flow_fwd, scene.flow_bwd, scene.inv_depth, K, replace(cfg, seed=seed)).pose
            errs += [np.rad2deg(pose_errors(pose, scene.pose)[0]), np.rad2deg(translation_direction_error(pose, scene.pose))]
        rows.append(errs)
    med = np.median(rows, axis=0)
    ok = med[0] < 0.5 and med[1] < 1.0 and med[2] >= 5 * med[0] and med[3] >= 5 * med[1]
    report(5, ok, f"median full rot {med[0]:.3g} deg, dir {med[1]:.3g} deg; "
                  f"baseline rot {med[2]:.3g} deg, dir {med[3]:.3g} deg (50 seeds)")


def test_criterion_06_p3p_init(report):
    wins = 0
    for seed in range(100):
        spec = SceneSpec(seed=seed, intrinsics=K, pose_magnitude=(np.deg2rad(30.0), 1.0),
                         pose_minimum=(np.deg2rad(20.0), 0.5), noise_sigma_px=0.5)
        gt = generate_scene(spec)
        assert np.linalg.norm(log_map(gt.pose)[:3]) >= np.deg2rad(20.0) - 1e-12
        corr = gt.correspondences()
        p3p = solve_correspondences(corr, K, PipelineConfig(init="p3p", seed=seed)).solution.final_cost
        ident = solve_correspondences(corr, K, PipelineConfig(init="identity", seed=seed)).solution.final_cost
        wins += p3p <= ident
    report(6, wins >= 90, f"P3P init cost <= identity init cost on {wins}/100 seeds")


def test_criterion_07_opv(report):
    rng = np.random.default_rng(7)
    k = 4
    grids = make_position_grids(k)
    worst = 0.0
    for _ in range(20):
        flow = rng.uniform(-k, k, size=(12, 16, 2))
        worst = max(worst, np.max(np.abs(opv_to_flow(make_opv_from_flow(flow, k), grids) - flow)))
    uniform = opv_to_flow(np.full((6, 7, 9, 9), 1 / 81), grids)
    zero = bool(np.all(uniform == 0.0))
    a, b = rng.normal(size=(6, 7, 9, 9)), rng.normal(size=(6, 7, 9, 9))
    lin = np.max(np.abs(opv_to_flow(2.5 * a - 0.75 * b, grids) - (2.5 * opv_to_flow(a, grids) - 0.75 * opv_to_flow(b, grids))))
    report(7, worst < 1e-9 and zero and lin < 1e-12,
           f"round trip {worst:.2e}, uniform exactly zero={zero}, linearity {lin:.2e}")


def test_criterion_08_losses(report):
    rng = np.random.default_rng(8)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    g, w = rng.random((16, 16)), rng.random((16, 16))
    m = (rng.random((16, 16)) > 0.3).astype(float)
    da, db = a + 0.1, b + 0.1
    ys, xs = np.mgrid[0:16, 0:16].astype(float)
    Ks = Intrinsics.centered(20.0, 16, 16)
    T = exp_map(np.concatenate([rng.normal(scale=0.02, size=3), rng.normal(scale=0.1, size=3)]))
    inv = 1.0 / rng.uniform(3, 6, (16, 16))
    rigid = rigid_correspondence(T, inv, Ks)[0] - Ks.pixel_grid()
    noisy = rigid + rng.normal(size=rigid.shape)
    vec = rng.random(40)

    zeros = {
        "r(I,I)": np.max(np.abs(photometric_r(a, a))),
        "ssim(I,I)-1": np.max(np.abs(ssim(a, a) - 1)),
        "L_rp equal": abs(self_supervised_loss(a, a, w)) + abs(normalized_photometric(a, a, m)),
        "L_s constant k=1": edge_aware_smoothness(np.full((16, 16), 2.0), g, 10.0, 1),
        "L_s constant k=2": edge_aware_smoothness(np.full((16, 16), 2.0), g, 10.0, 2),
        "L_s ramp k=2": edge_aware_smoothness(0.3 * xs - 0.2 * ys, g, 10.0, 2),
        "L_dc equal": geometric_consistency(da, da, m),
        "L_dc ratio 2 - 1/3": abs(geometric_consistency(2 * da, da, m) - 1 / 3),
        "L_cross rigid": cross_task_loss(rigid, T, inv, Ks, w),
        "L_ba equal": pointwise_depth_loss(vec, vec),
    }
    oracles = {
        "ssim": np.max(np.abs(ssim(a, b) - naive_ssim(a, b))),
        "r": np.max(np.abs(photometric_r(a, b) - naive_r(a, b, ALPHA))),
        "L_rp weighted": abs(self_supervised_loss(a, b, w) - naive_weighted_sum(w, naive_r(a, b, ALPHA))),
        "L_rp normalised": abs(normalized_photometric(a, b, m) - naive_normalized(a, b, m, ALPHA)),
        "L_s k=1": abs(edge_aware_smoothness(a, g, 10.0, 1) - naive_smoothness(a, g, 10.0, 1)),
        "L_s k=2": abs(edge_aware_smoothness(a, g, 10.0, 2) - naive_smoothness(a, g, 10.0, 2)),
        "L_dc": abs(geometric_consistency(da, db, m) - naive_geometric(da, db, m)),
        "L_cross": abs(cross_task_loss(noisy, T, inv, Ks, w) - naive_cross(noisy, T, inv, Ks, w)),
        "L_ba": abs(pointwise_depth_loss(vec, vec[::-1]) - sum(abs(x - y) for x, y in zip(vec, vec[::-1])) / 40),
    }
    worst_zero = max(zeros, key=zeros.get)
    worst_oracle = max(oracles, key=oracles.get)
    ok = zeros[worst_zero] < 1e-12 and oracles[worst_oracle] < 1e-12
    report(8, ok, f"worst identity {worst_zero} = {zeros[worst_zero]:.1e}, "
                  f"worst oracle gap {worst_oracle} = {oracles[worst_oracle]:.1e}")


def test_criterion_09_metrics(report, tmp_path):
    line = Trajectory([Pose(np.eye(3), [0.0, 0.0, float(i)]) for i in range(1001)])
    rng = np.random.default_rng(9)
    rel = [exp_map(np.concatenate([rng.normal(scale=0.01, size=3), [0, 0, -1.0]])) for _ in range(300)]
    curvy = compose_trajectory(rel)
    ident = max(kitti_rel_errors(curvy, curvy))
    scaled = Trajectory([Pose(np.eye(3), 1.05 * p.translation) for p in line.poses])
    t_err, _ = kitti_rel_errors(scaled, line)
    drift = Trajectory([Pose(Rotation.from_euler("y", 0.01 * i, degrees=True).as_matrix(), p.translation)
                        for i, p in enumerate(line.poses)])
    _, r_err = kitti_rel_errors(drift, line)
    doubled = Trajectory([Pose(p.rotation, 2.0 * p.translation) for p in curvy.poses])
    sim = ate(doubled, curvy, "similarity")
    gio.write_kitti_poses(curvy, tmp_path / "poses.txt")
    back = gio.read_kitti_poses(tmp_path / "poses.txt")
    rt = max(np.max(np.abs(a.as_matrix() - b.as_matrix())[:3] / np.maximum(1.0, np.abs(a.as_matrix()[:3])))
             for a, b in zip(curvy.poses, back.poses))
    ok = ident < 1e-12 and abs(t_err - 5.0) <= 0.1 and abs(r_err - 1.0) <= 0.02 and sim < 1e-9 and rt <= 1e-8
    report(9, ok, f"identical {ident:.1e}, t_err {t_err:.4f} %, r_err {r_err:.4f} deg/100m, "
                  f"similarity ATE {sim:.1e}, KITTI round trip {rt:.1e} (relative)")


def test_criterion_10_noise_monotonicity(report):
    levels = (0.0, 1.0, 2.0, 3.0)
    n_seeds = 50
    E = np.zeros((n_seeds, len(levels)))
    for s in range(n_seeds):
        scene = generate_dense_scene(SceneSpec(seed=s, intrinsics=K))
        for j, dg in enumerate(levels):
            fwd, bwd = distort_second_frame(scene.flow_fwd, scene.flow_bwd, dg, seed=1000 + s)
            pose = solve_dense(fwd, bwd, scene.inv_depth, K, PipelineConfig(seed=s)).pose
            E[s, j] = np.linalg.norm(log_map(pose.inverse() @ scene.pose))
    med = np.median(E, axis=0)
    increasing = bool(np.all(np.diff(med) > 0))
    per_seed = np.median([spearmanr(levels, e)[0] for e in E])
    pooled = spearmanr(np.tile(levels, n_seeds), E.ravel())[0]
    stride = max(stride_consistency(make_relative_motion(12, 0.5, seed), st) for seed in range(10) for st in (1, 2, 3))
    ok = increasing and per_seed > 0.9 and pooled > 0 and stride < 1e-12
    report(10, ok, f"median errors {np.array2string(med, precision=4)}, per-seed rho {per_seed:.3f}, "
                   f"pooled rho {pooled:.3f}, stride composition {stride:.1e}")


def _cli(args, out, threads):
    env = {**os.environ, "GEOVO_THREADS": str(threads)}
    proc = subprocess.run([sys.executable, "-m", "geovo", *map(str, args), "--out", str(out)],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def _outputs(d):
    result = {}
    for p in sorted(d.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "config.json":
                cfg = json.loads(data)
                cfg["out"] = None
                data = json.dumps(cfg, sort_keys=True).encode()
            result[p.relative_to(d).as_posix()] = data
    return result


def test_criterion_11_cli_determinism(report, tmp_path):
    scene = tmp_path / "scene"
    scene.mkdir()
    _cli(["synth", "--seed", 5, "--outliers", 0.1], scene, 1)
    gio.write_kitti_poses(compose_trajectory(make_relative_motion(30, 1.0, 0)), tmp_path / "gt.txt")
    gio.write_kitti_poses(compose_trajectory(make_relative_motion(30, 1.1, 1)), tmp_path / "est.txt")
    opv_flow = np.round(np.random.default_rng(0).uniform(-4, 4, (8, 9, 2)) * 64) / 64
    gio.write_opv(tmp_path / "f.opv", make_opv_from_flow(opv_flow, 4))
    commands = {
        "synth": ["synth", "--seed", 5, "--outliers", 0.1],
        "solve": ["solve", "--input", scene, "--noise-px", 0],
        "eval": ["eval", "--est", tmp_path / "est.txt", "--gt", tmp_path / "gt.txt", "--segment-lengths", "5,10"],
        "noise-sweep": ["noise-sweep", "--n-steps", 3, "--sweep-seeds", 3, "--noise-levels", "0,2",
                        "--segment-lengths", 1, "--n-samples", 500],
        "opv": ["opv", "--opv", tmp_path / "f.opv"],
    }
    differing = []
    for name, args in commands.items():
        runs = []
        for i, threads in enumerate((1, 4, 1)):
            out = tmp_path / f"{name}{i}"
            out.mkdir()
            stdout = _cli(args, out, threads)
            runs.append((_outputs(out), stdout))
        if not runs[0] == runs[1] == runs[2]:
            differing.append(name)
    report(11, not differing,
           "all five commands bit-identical across re-runs and GEOVO_THREADS=1/4" if not differing
           else f"outputs differ for {', '.join(differing)}")
