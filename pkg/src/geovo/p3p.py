"""Perspective-three-point pose initialisation.

Minimal solver after Grunert: the three unknown point distances are reduced
to a quartic in the ratio ``s3 / s1``, every real root is polished with a few
Newton steps on the distance equations, and the pose is recovered from the
resulting 3D-3D alignment. The RANSAC wrapper samples four correspondences
per hypothesis and uses the fourth to pick among the quartic's candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import CollinearPoints, InsufficientCorrespondences, NoConsensus, NoRealSolution
from .se3 import Intrinsics, Pose, pixel_rays, unproject


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 100
    inlier_threshold: float = 1.0
    min_inlier_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")


@dataclass
class RansacResult:
    pose: Pose
    inliers: np.ndarray
    rms: float


def _kabsch(X: np.ndarray, Y: np.ndarray) -> Pose:
    """Rigid ``T`` minimising ``sum |Y - (R X + t)|^2``."""
    mx = X.mean(axis=0)
    my = Y.mean(axis=0)
    C = (Y - my).T @ (X - mx)
    U, _, Vt = np.linalg.svd(C)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return Pose(R, my - R @ mx)


def _polish_distances(s: np.ndarray, j: np.ndarray, X: np.ndarray, steps: int = 5) -> np.ndarray:
    pairs = ((0, 1), (0, 2), (1, 2))
    target = np.array([np.sum((X[a] - X[b]) ** 2) for a, b in pairs])
    for _ in range(steps):
        Y = s[:, None] * j
        r = np.array([np.sum((Y[a] - Y[b]) ** 2) for a, b in pairs]) - target
        Jm = np.zeros((3, 3))
        for row, (a, b) in enumerate(pairs):
            diff = Y[a] - Y[b]
            Jm[row, a] = 2.0 * diff @ j[a]
            Jm[row, b] = -2.0 * diff @ j[b]
        try:
            ds = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            break
        s = s + ds
        if np.max(np.abs(ds)) <= 1e-15 * np.max(np.abs(s)):
            break
    return s


def p3p_minimal(points: np.ndarray, pixels: np.ndarray, K: Intrinsics) -> list[Pose]:
    """All real poses mapping the three frame-``t`` points onto the three pixels."""
    X = np.asarray(points, dtype=float).reshape(3, 3)
    rays = pixel_rays(np.asarray(pixels, dtype=float).reshape(3, 2), K)
    j = rays / np.linalg.norm(rays, axis=1, keepdims=True)

    if np.linalg.norm(np.cross(X[1] - X[0], X[2] - X[0])) <= 1e-9 * max(
        np.sum((X[1] - X[0]) ** 2), np.sum((X[2] - X[0]) ** 2), 1e-300
    ):
        raise CollinearPoints("the three points are collinear")

    a2 = np.sum((X[1] - X[2]) ** 2)
    b2 = np.sum((X[0] - X[2]) ** 2)
    c2 = np.sum((X[0] - X[1]) ** 2)
    ca = j[1] @ j[2]
    cb = j[0] @ j[2]
    cg = j[0] @ j[1]

    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    A4 = (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca**2
    A3 = 4.0 * (
        amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca**2 * cb
    )
    A2 = 2.0 * (
        amc**2
        - 1.0
        + 2.0 * amc**2 * cb**2
        + 2.0 * (b2 - c2) / b2 * ca**2
        - 4.0 * apc * ca * cb * cg
        + 2.0 * (b2 - a2) / b2 * cg**2
    )
    A1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg**2 * cb - (1.0 - apc) * ca * cg)
    A0 = (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg**2

    coeffs = np.array([A4, A3, A2, A1, A0])
    scale = np.max(np.abs(coeffs))
    if scale == 0:
        raise NoRealSolution("quartic vanishes identically")
    roots = np.roots(coeffs / scale)
    tol = 1e-6 * max(1.0, np.max(np.abs(roots)) if len(roots) else 1.0)

    poses: list[Pose] = []
    for root in roots:
        if abs(root.imag) > tol:
            continue
        v = root.real
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((-1.0 + amc) * v**2 - 2.0 * amc * cb * v + 1.0 + amc) / den
        s1_sq = b2 / (1.0 + v**2 - 2.0 * v * cb)
        if s1_sq <= 0 or u <= 0 or v <= 0:
            continue
        s1 = np.sqrt(s1_sq)
        s = _polish_distances(np.array([s1, u * s1, v * s1]), j, X)
        if np.any(s <= 0):
            continue
        Y = s[:, None] * j
        poses.append(_kabsch(X, Y))
    if not poses:
        raise NoRealSolution("no real positive solution for the three-point problem")
    return poses


def _reprojection_errors(pose: Pose, X: np.ndarray, q: np.ndarray, K: Intrinsics) -> np.ndarray:
    Y = X @ pose.rotation.T + pose.translation
    z = Y[:, 2]
    front = z > 1e-12
    zs = np.where(front, z, 1.0)
    proj = np.stack([K.fx * Y[:, 0] / zs + K.cx, K.fy * Y[:, 1] / zs + K.cy], axis=1)
    err = np.linalg.norm(proj - q, axis=1)
    return np.where(front, err, np.inf)


def canonical_order(corr: CorrespondenceSet) -> np.ndarray:
    """Indices sorting correspondences by descending score, then by pixel values."""
    keys = (corr.q[:, 1], corr.q[:, 0], corr.p[:, 1], corr.p[:, 0], -corr.score)
    return np.lexsort(keys)


def p3p_ransac(corr: CorrespondenceSet, K: Intrinsics, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """Pose maximising the reprojection inlier count over the correspondence set."""
    n = len(corr)
    if n < 4:
        raise InsufficientCorrespondences("P3P-RANSAC needs at least four correspondences")
    order = canonical_order(corr)
    X = unproject(corr.p[order], corr.inv_depth[order], K)
    q = corr.q[order]
    rng = np.random.default_rng(cfg.seed)

    best_count = -1
    best_rms = np.inf
    best_pose = None
    best_inliers = None
    for _ in range(cfg.max_iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            candidates = p3p_minimal(X[idx[:3]], q[idx[:3]], K)
        except (CollinearPoints, NoRealSolution):
            continue
        fourth = [_reprojection_errors(T, X[idx[3:]], q[idx[3:]], K)[0] for T in candidates]
        pose = candidates[int(np.argmin(fourth))]
        err = _reprojection_errors(pose, X, q, K)
        inliers = err <= cfg.inlier_threshold
        count = int(inliers.sum())
        rms = float(np.sqrt(np.mean(err[inliers] ** 2))) if count else np.inf
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_pose, best_inliers = count, rms, pose, inliers

    if best_pose is None or best_count < cfg.min_inlier_ratio * n:
        ratio = max(best_count, 0) / n
        raise NoConsensus(f"best inlier ratio {ratio:.3f} below {cfg.min_inlier_ratio}")
    inliers = np.zeros(n, dtype=bool)
    inliers[order] = best_inliers
    return RansacResult(best_pose, inliers, best_rms)
