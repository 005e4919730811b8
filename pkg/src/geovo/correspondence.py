"""Filtering, scoring and sampling of dense correspondences before BA.

Three screens are applied in order: flow consistency (``so``), epipolar
inlier score against a fundamental matrix (``sr``), and a ray-angle /
cheirality mask (``ma``). The best ``n`` pixels under ``ma * sr * so`` are
then handed to pose initialisation and bundle adjustment.

Ties are always broken by row-major pixel order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateConfiguration, EmptyMask, InsufficientCorrespondences
from .se3 import Intrinsics, Pose, camera_center, pixel_rays, ray_angle_cosine

EPIPOLAR_THRESHOLD = 0.5
COS_MAX = float(np.cos(np.deg2rad(1.0)))
MIN_CORRESPONDENCES = 6


@dataclass
class CorrespondenceSet:
    p: np.ndarray  # (N, 2) pixels in frame t
    q: np.ndarray  # (N, 2) matched pixels in frame t'
    inv_depth: np.ndarray  # (N,)
    score: np.ndarray  # (N,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 2)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 2)
        self.inv_depth = np.asarray(self.inv_depth, dtype=float).reshape(-1)
        n = len(self.p)
        self.score = (
            np.ones(n) if self.score is None else np.asarray(self.score, dtype=float).reshape(-1)
        )
        if not (len(self.q) == len(self.inv_depth) == len(self.score) == n):
            raise ValueError("correspondence arrays have inconsistent lengths")

    def __len__(self):
        return len(self.p)

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.p[idx], self.q[idx], self.inv_depth[idx], self.score[idx], dict(self.meta)
        )


class ScoreMaps(NamedTuple):
    de: np.ndarray
    sr: np.ndarray


def _ranked(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Flat indices of ``candidates`` sorted by descending score, row-major on ties."""
    flat = np.flatnonzero(candidates.ravel())
    order = np.argsort(-scores.ravel()[flat], kind="stable")
    return flat[order]


def select_top_fraction(so: np.ndarray, fraction: float, mask: np.ndarray | None = None) -> np.ndarray:
    """``(M, 2)`` integer pixels ``(x, y)`` whose score is in the top ``fraction`` of the mask."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    so = np.asarray(so, dtype=float)
    mask = so > 0 if mask is None else np.asarray(mask, dtype=bool)
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise EmptyMask("no pixel passes the consistency mask")
    keep = max(1, int(np.floor(fraction * n_valid + 1e-9)))
    idx = _ranked(so, mask)[:keep]
    W = so.shape[1]
    return np.stack([idx % W, idx // W], axis=-1)


def _hartley(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    if mean_dist <= 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _homog(p: np.ndarray) -> np.ndarray:
    return np.concatenate([p, np.ones((len(p), 1))], axis=1)


def estimate_fundamental(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Normalised eight-point estimate of ``F`` with ``q^T F p = 0``.

    The result has rank 2 and unit Frobenius norm.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    q = np.asarray(q, dtype=float).reshape(-1, 2)
    if len(p) < 8 or len(p) != len(q):
        raise DegenerateConfiguration("at least eight matched pairs are required")
    Tp = _hartley(p)
    Tq = _hartley(q)
    a = _homog(p) @ Tp.T
    b = _homog(q) @ Tq.T
    A = (b[:, :, None] * a[:, None, :]).reshape(-1, 9)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[7] <= 1e-10 * s[0]:
        raise DegenerateConfiguration("design matrix rank is below eight")
    F = Vt[-1].reshape(3, 3)
    U, sf, Vt = np.linalg.svd(F)
    F = U @ np.diag([sf[0], sf[1], 0.0]) @ Vt
    F = Tq.T @ F @ Tp
    F /= np.linalg.norm(F)
    # fix the sign so repeated estimates are comparable
    if F.flat[np.argmax(np.abs(F))] < 0:
        F = -F
    return F


def estimate_fundamental_ransac(
    p: np.ndarray, q: np.ndarray, threshold: float = EPIPOLAR_THRESHOLD, iterations: int = 200, seed: int = 0
) -> np.ndarray:
    """Eight-point inside RANSAC, refit on the largest inlier set."""
    rng = np.random.default_rng(seed)
    n = len(p)
    best = None
    best_count = -1
    for _ in range(iterations):
        idx = rng.choice(n, size=8, replace=False)
        try:
            F = estimate_fundamental(p[idx], q[idx])
        except DegenerateConfiguration:
            continue
        inliers = epipolar_distance(p, q, F) < threshold
        count = int(inliers.sum())
        if count > best_count:
            best, best_count = inliers, count
    if best is None or best_count < 8:
        raise DegenerateConfiguration("RANSAC found no usable fundamental matrix")
    return estimate_fundamental(p[best], q[best])


def epipolar_distance(p: np.ndarray, q: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Distance (pixels) from ``q`` to the epipolar line ``F p``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    ph = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    lines = ph @ F.T
    num = np.abs(lines[..., 0] * q[..., 0] + lines[..., 1] * q[..., 1] + lines[..., 2])
    den = np.hypot(lines[..., 0], lines[..., 1])
    return num / np.maximum(den, 1e-300)


def inlier_score(de: np.ndarray, threshold: float = EPIPOLAR_THRESHOLD) -> np.ndarray:
    de = np.asarray(de, dtype=float)
    return np.where(de < threshold, 1.0 / (1.0 + de), 0.0)


def epipolar_scores(flow: np.ndarray, F: np.ndarray, threshold: float = EPIPOLAR_THRESHOLD) -> ScoreMaps:
    H, W = flow.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    p = np.stack([xs, ys], axis=-1)
    de = epipolar_distance(p, p + flow, F)
    return ScoreMaps(de, inlier_score(de, threshold))


def triangulate_midpoint(p: np.ndarray, q: np.ndarray, T: Pose, K: Intrinsics):
    """Midpoint triangulation in frame ``t``.

    Returns ``(X, depth_t, depth_t')``; depths are ``nan`` for parallel rays.
    """
    r1 = pixel_rays(p, K)
    r2 = pixel_rays(q, K) @ T.rotation
    c2 = camera_center(T)
    a = np.sum(r1 * r1, axis=-1)
    b = np.sum(r1 * r2, axis=-1)
    c = np.sum(r2 * r2, axis=-1)
    d = r1 @ c2
    e = r2 @ c2
    den = a * c - b * b
    ok = den > 1e-14 * a * c
    safe = np.where(ok, den, 1.0)
    s1 = np.where(ok, (c * d - b * e) / safe, np.nan)
    s2 = np.where(ok, (b * d - a * e) / safe, np.nan)
    X = 0.5 * (s1[..., None] * r1 + (c2 + s2[..., None] * r2))
    X2 = X @ T.rotation.T + T.translation
    return X, X[..., 2], X2[..., 2]


def ray_angle_mask(
    p: np.ndarray, q: np.ndarray, T: Pose, K: Intrinsics, cos_max: float = COS_MAX
) -> np.ndarray:
    """True where the two rays subtend more than ``arccos(cos_max)`` and the
    triangulated point lies in front of both cameras."""
    cos = ray_angle_cosine(p, q, T, K)
    _, z1, z2 = triangulate_midpoint(p, q, T, K)
    with np.errstate(invalid="ignore"):
        cheiral = (z1 > 0) & (z2 > 0)
    return (cos < cos_max) & cheiral


def sample_correspondences(
    flow: np.ndarray,
    inv_depth: np.ndarray,
    score: np.ndarray,
    n: int = 3000,
    seed: int = 0,
) -> CorrespondenceSet:
    """Best ``n`` pixels by combined score, returned in a seeded random order.

    ``score`` is the combined ``ma * sr * so`` map.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    score = np.asarray(score, dtype=float)
    positive = (score > 0) & (inv_depth > 0)
    n_pos = int(positive.sum())
    if n_pos < min(n, MIN_CORRESPONDENCES):
        raise InsufficientCorrespondences(f"only {n_pos} pixels have a positive score")
    idx = _ranked(score, positive)[:n]
    rng = np.random.default_rng(seed)
    idx = idx[rng.permutation(len(idx))]
    W = score.shape[1]
    rows, cols = idx // W, idx % W
    p = np.stack([cols, rows], axis=-1).astype(float)
    q = p + flow[rows, cols]
    return CorrespondenceSet(
        p, q, inv_depth[rows, cols], score[rows, cols], {"seed": int(seed), "requested": int(n)}
    )
