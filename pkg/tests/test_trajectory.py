import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from geovo.errors import DegenerateAlignment, LengthMismatch, TooShort
from geovo.se3 import Pose, compose, exp_map, rotation_angle
from geovo.trajectory import (
    Trajectory,
    ate,
    compose_trajectory,
    decompose_trajectory,
    evaluate,
    kitti_rel_errors,
    umeyama,
)


def straight_line(n, step=1.0):
    return Trajectory([Pose(np.eye(3), [0.0, 0.0, step * i]) for i in range(n)])


def random_relatives(rng, n, scale=0.1):
    return [exp_map(np.concatenate([rng.normal(scale=scale, size=3), rng.normal(size=3)])) for _ in range(n)]


def brute_force_rel_errors(est, gt, lengths):
    """Segment enumeration written independently of the module."""
    pos = np.array([p.translation for p in gt.poses])
    dist = [0.0]
    for a, b in zip(pos[:-1], pos[1:]):
        dist.append(dist[-1] + float(np.linalg.norm(b - a)))
    t, r = [], []
    for i in range(len(gt)):
        for L in lengths:
            j = next((k for k in range(i, len(gt)) if dist[k] > dist[i] + L), None)
            if j is None:
                continue
            dg = compose(gt.poses[i].inverse(), gt.poses[j])
            de = compose(est.poses[i].inverse(), est.poses[j])
            e = compose(de.inverse(), dg)
            t.append(np.linalg.norm(e.translation) / L)
            r.append(rotation_angle(e.rotation) / L)
    return 100 * np.mean(t), 100 * np.rad2deg(np.mean(r))


# composition


def test_identity_relatives():
    traj = compose_trajectory([Pose.identity()] * 5)
    assert len(traj) == 6
    for p in traj.poses:
        assert np.array_equal(p.as_matrix(), np.eye(4))


def test_constant_forward_step():
    traj = compose_trajectory([Pose(np.eye(3), [0.0, 0.0, 1.0])] * 10)
    pos = traj.positions()
    assert abs(np.linalg.norm(pos[-1]) - 10.0) < 1e-12
    assert np.max(np.abs(pos[:, :2])) == 0.0  # straight line


def test_decompose_inverts_compose():
    rel = random_relatives(np.random.default_rng(0), 50)
    back = decompose_trajectory(compose_trajectory(rel))
    for a, b in zip(rel, back):
        assert np.max(np.abs(a.as_matrix() - b.as_matrix())) < 1e-12


def test_compose_is_associative():
    rng = np.random.default_rng(1)
    a, b = random_relatives(rng, 4), random_relatives(rng, 5)
    whole = compose_trajectory(a + b)
    first, second = compose_trajectory(a), compose_trajectory(b)
    end_a = first.poses[-1]
    for k, p in enumerate(second.poses):
        assert np.max(np.abs(compose(end_a, p).as_matrix() - whole.poses[len(a) + k].as_matrix())) < 1e-10


# relative errors


def test_identical_trajectories_have_zero_error():
    rng = np.random.default_rng(2)
    rel = [exp_map(np.concatenate([rng.normal(scale=0.01, size=3), [0, 0, -10.0]])) for _ in range(120)]
    gt = compose_trajectory(rel)
    t_err, r_err = kitti_rel_errors(gt, gt)
    assert t_err < 1e-12 and r_err < 1e-12


def test_scale_drift_gives_five_percent():
    gt = straight_line(1001)
    est = Trajectory([Pose(np.eye(3), 1.05 * p.translation) for p in gt.poses])
    t_err, r_err = kitti_rel_errors(est, gt)
    assert abs(t_err - 5.0) < 0.1 and r_err == 0.0
    bt, _ = brute_force_rel_errors(est, gt, range(100, 801, 100))
    assert abs(t_err - bt) < 1e-9


def test_rotation_drift_gives_one_degree_per_100():
    gt = straight_line(1001)
    est = Trajectory(
        [Pose(Rotation.from_euler("y", 0.01 * i, degrees=True).as_matrix(), p.translation) for i, p in enumerate(gt.poses)]
    )
    t_err, r_err = kitti_rel_errors(est, gt)
    assert abs(r_err - 1.0) < 0.02
    bt, br = brute_force_rel_errors(est, gt, range(100, 801, 100))
    assert abs(r_err - br) < 1e-9 and abs(t_err - bt) < 1e-9


def test_rel_errors_match_brute_force_on_random_paths():
    rng = np.random.default_rng(3)
    rel = [exp_map(np.concatenate([rng.normal(scale=0.02, size=3), [0, 0, -1.0]])) for _ in range(60)]
    noisy = [exp_map(rng.normal(scale=0.01, size=6)) @ r for r in rel]
    gt, est = compose_trajectory(rel), compose_trajectory(noisy)
    lengths = (10, 20, 30)
    got = kitti_rel_errors(est, gt, lengths)
    ref = brute_force_rel_errors(est, gt, lengths)
    assert np.max(np.abs(np.array(got) - np.array(ref))) < 1e-9


def test_rel_errors_invariant_to_common_rigid_transform():
    rng = np.random.default_rng(4)
    rel = [exp_map(np.concatenate([rng.normal(scale=0.02, size=3), [0, 0, -1.0]])) for _ in range(60)]
    noisy = [exp_map(rng.normal(scale=0.01, size=6)) @ r for r in rel]
    gt, est = compose_trajectory(rel), compose_trajectory(noisy)
    G = exp_map(rng.normal(size=6))
    a = kitti_rel_errors(est, gt, (10, 20))
    b = kitti_rel_errors(est.transformed(G), gt.transformed(G), (10, 20))
    assert np.max(np.abs(np.array(a) - np.array(b))) < 1e-9
    for mode in ("rigid", "similarity"):
        assert abs(ate(est, gt, mode) - ate(est.transformed(G), gt.transformed(G), mode)) < 1e-9


def test_too_short():
    with pytest.raises(TooShort):
        kitti_rel_errors(straight_line(50), straight_line(50))
    with pytest.raises(TooShort):
        kitti_rel_errors(straight_line(1), straight_line(1))


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        kitti_rel_errors(straight_line(3), straight_line(4))
    with pytest.raises(LengthMismatch):
        ate(straight_line(3), straight_line(4))


# ATE


def test_ate_identical_is_zero():
    traj = compose_trajectory(random_relatives(np.random.default_rng(5), 20))
    assert ate(traj, traj, "none") == 0.0


def test_ate_scale_semantics():
    gt = compose_trajectory(random_relatives(np.random.default_rng(6), 20))
    est = Trajectory([Pose(p.rotation, 2.0 * p.translation) for p in gt.poses])
    assert ate(est, gt, "similarity") < 1e-9
    assert ate(est, gt, "rigid") > 0.1


def procrustes_oracle(P, G, with_scale):
    mp, mg = P.mean(0), G.mean(0)
    rot, _ = Rotation.align_vectors(G - mg, P - mp)
    R = rot.as_matrix()
    xs = (P - mp) @ R.T
    s = np.sum(xs * (G - mg)) / np.sum(xs * xs) if with_scale else 1.0
    return float(np.sqrt(np.mean(np.sum((s * xs + mg - G) ** 2, axis=1))))


def test_ate_matches_procrustes_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        gt = compose_trajectory(random_relatives(rng, 30))
        est = compose_trajectory(random_relatives(rng, 30))
        for mode in ("rigid", "similarity"):
            assert abs(ate(est, gt, mode) - procrustes_oracle(est.positions(), gt.positions(), mode == "similarity")) < 1e-9


def test_ate_alignment_ordering():
    rng = np.random.default_rng(8)
    for _ in range(20):
        gt = compose_trajectory(random_relatives(rng, 15))
        est = compose_trajectory(random_relatives(rng, 15))
        assert ate(est, gt, "similarity") <= ate(est, gt, "rigid") + 1e-12 <= ate(est, gt, "none") + 2e-12


def test_umeyama_recovers_similarity():
    rng = np.random.default_rng(9)
    P = rng.normal(size=(40, 3))
    R = exp_map(np.concatenate([rng.normal(size=3), [0, 0, 0]])).rotation
    G = 1.7 * P @ R.T + [1.0, -2.0, 0.5]
    s, R_est, t = umeyama(P, G, with_scale=True)
    assert abs(s - 1.7) < 1e-12 and np.max(np.abs(R_est - R)) < 1e-12
    np.testing.assert_allclose(t, [1.0, -2.0, 0.5], atol=1e-12)


def test_degenerate_alignment():
    same = Trajectory([Pose.identity()] * 5)
    with pytest.raises(DegenerateAlignment):
        ate(same, straight_line(5), "rigid")


def test_unknown_alignment():
    with pytest.raises(ValueError):
        ate(straight_line(3), straight_line(3), "affine")


def test_evaluate_report():
    gt = straight_line(301)
    est = Trajectory([Pose(np.eye(3), 1.05 * p.translation) for p in gt.poses])
    rep = evaluate(est, gt, "similarity", lengths=(100, 200))
    # segments end at the first frame beyond L, so the error is slightly above 5%
    bt, _ = brute_force_rel_errors(est, gt, (100, 200))
    assert abs(rep.t_err - bt) < 1e-9 and abs(rep.t_err - 5.0) < 0.1
    assert rep.ate_similarity < 1e-9 and rep.ate_rigid > 1
    assert rep.ate == rep.ate_similarity
    assert evaluate(est, gt, "rigid", lengths=(100,)).ate == rep.ate_rigid
    table = rep.to_table()
    assert "t_err" in table and "ATE rigid" in table
