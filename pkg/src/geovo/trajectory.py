"""Trajectories from relative poses and the odometry error metrics.

Absolute poses are camera-to-world. A relative pose ``T_{i-1 -> i}`` maps
frame ``i-1`` coordinates into frame ``i``, so the absolute pose of frame ``i``
is ``poses[i-1] @ inverse(T_{i-1 -> i})``.

Relative errors follow the KITTI odometry protocol: every start frame and
every segment length in 100, 200, ..., 800 (length units of the ground truth).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateAlignment, LengthMismatch, TooShort
from .se3 import Pose, compose, rotation_angle

SEGMENT_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


@dataclass
class Trajectory:
    poses: list[Pose]
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        if not self.poses:
            raise ValueError("a trajectory needs at least one pose")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def transformed(self, G: Pose) -> "Trajectory":
        """Apply a world-frame rigid transform ``G`` to every pose."""
        return Trajectory([compose(G, p) for p in self.poses], self.timestamps)


@dataclass
class MetricReport:
    t_err: float  # percent
    r_err: float  # degrees per 100 length units
    ate: float
    ate_rigid: float
    ate_similarity: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("t_err (%)", self.t_err),
            ("r_err (deg/100m)", self.r_err),
            ("ATE", self.ate),
            ("ATE rigid", self.ate_rigid),
            ("ATE similarity", self.ate_similarity),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:12.6f}" for name, value in rows)


def compose_trajectory(relative_poses: list[Pose]) -> Trajectory:
    """Chain relative motions into absolute poses starting at the identity."""
    poses = [Pose.identity()]
    for rel in relative_poses:
        poses.append(compose(poses[-1], rel.inverse()))
    return Trajectory(poses)


def decompose_trajectory(traj: Trajectory) -> list[Pose]:
    """Inverse of :func:`compose_trajectory` (up to the first pose)."""
    return [compose(b.inverse(), a) for a, b in zip(traj.poses[:-1], traj.poses[1:])]


def _path_distances(positions: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def kitti_rel_errors(
    est: Trajectory, gt: Trajectory, lengths=SEGMENT_LENGTHS, step: int = 1
) -> tuple[float, float]:
    """Average translational error (%) and rotational error (deg / 100 units)."""
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimated vs {len(gt)} ground-truth poses")
    if len(gt) < 2:
        raise TooShort("need at least two poses")
    dist = _path_distances(gt.positions())
    gt_m = [p.as_matrix() for p in gt.poses]
    est_m = [p.as_matrix() for p in est.poses]
    t_errs = []
    r_errs = []
    for first in range(0, len(gt), step):
        for length in lengths:
            beyond = np.flatnonzero(dist > dist[first] + length)
            if len(beyond) == 0:
                continue
            last = beyond[0]
            delta_gt = np.linalg.inv(gt_m[first]) @ gt_m[last]
            delta_est = np.linalg.inv(est_m[first]) @ est_m[last]
            err = np.linalg.inv(delta_est) @ delta_gt
            t_errs.append(np.linalg.norm(err[:3, 3]) / length)
            r_errs.append(rotation_angle(err[:3, :3]) / length)
    if not t_errs:
        raise TooShort(f"ground-truth path length {dist[-1]:.3g} is below the shortest segment")
    return float(np.mean(t_errs) * 100.0), float(np.rad2deg(np.mean(r_errs)) * 100.0)


def umeyama(source: np.ndarray, target: np.ndarray, with_scale: bool) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares ``(s, R, t)`` with ``target ~ s R source + t``."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    var_s = np.mean(np.sum(xs**2, axis=1))
    if var_s <= 1e-300:
        raise DegenerateAlignment("all estimated positions coincide")
    cov = xt.T @ xs / len(source)
    U, S, Vt = np.linalg.svd(cov)
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = U @ np.diag(D) @ Vt
    s = float(np.sum(S * D) / var_s) if with_scale else 1.0
    t = mu_t - s * R @ mu_s
    return s, R, t


def ate(est: Trajectory, gt: Trajectory, align: str = "similarity") -> float:
    """RMSE of positions after ``none``, ``rigid`` or ``similarity`` alignment."""
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimated vs {len(gt)} ground-truth poses")
    P = est.positions()
    G = gt.positions()
    if align == "none":
        aligned = P
    elif align in ("rigid", "similarity"):
        s, R, t = umeyama(P, G, with_scale=align == "similarity")
        aligned = s * P @ R.T + t
    else:
        raise ValueError(f"unknown alignment {align!r}")
    return float(np.sqrt(np.mean(np.sum((aligned - G) ** 2, axis=1))))


def evaluate(
    est: Trajectory, gt: Trajectory, align: str = "similarity", step: int = 1, lengths=SEGMENT_LENGTHS
) -> MetricReport:
    t_err, r_err = kitti_rel_errors(est, gt, lengths, step)
    rigid = ate(est, gt, "rigid")
    sim = ate(est, gt, "similarity")
    chosen = {"rigid": rigid, "similarity": sim}.get(align)
    if chosen is None:
        chosen = ate(est, gt, align)
    return MetricReport(t_err, r_err, chosen, rigid, sim)
