"""Self-supervised losses and depth validity masks as pure array functions.

Images are ``(H, W)`` or ``(H, W, C)`` arrays with intensities in ``[0, 1]``.
Nothing here computes gradients; the functions score reconstructions and are
checked against direct summation in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DimensionMismatch, EmptyMask, LengthMismatch
from .se3 import Intrinsics, Pose, pixel_rays

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
ALPHA = 0.85
INTENSITY_FLOOR = 1e-3


def _check_same(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def _pool(x: np.ndarray) -> np.ndarray:
    size = (3, 3) if x.ndim == 2 else (3, 3, 1)
    return uniform_filter(x, size=size, mode="mirror")


def ssim(a, b) -> np.ndarray:
    """Per-pixel SSIM with 3x3 mean pooling and reflected borders (same shape as inputs)."""
    a, b = _check_same(a, b)
    mu_a = _pool(a)
    mu_b = _pool(b)
    var_a = _pool(a * a) - mu_a**2
    var_b = _pool(b * b) - mu_b**2
    cov = _pool(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return np.clip(num / den, -1.0, 1.0)


def _channel_mean(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-1) if x.ndim == 3 else x


def photometric_r(a, b, alpha: float = ALPHA, convention: str = "literal") -> np.ndarray:
    """Per-pixel ``(alpha/2)(1 - SSIM) + alpha |a - b|``, averaged over channels.

    ``convention="standard"`` weights the L1 term by ``1 - alpha`` instead.
    """
    a, b = _check_same(a, b)
    if convention == "literal":
        l1_weight = alpha
    elif convention == "standard":
        l1_weight = 1.0 - alpha
    else:
        raise ValueError(f"unknown convention {convention!r}")
    r = 0.5 * alpha * (1.0 - ssim(a, b)) + l1_weight * np.abs(a - b)
    return _channel_mean(r)


def self_supervised_loss(target, synthesized, weight, alpha: float = ALPHA) -> float:
    """Weighted sum of the photometric metric between a target and its synthesis."""
    r = photometric_r(target, synthesized, alpha)
    w = np.asarray(weight, dtype=float)
    if w.shape != r.shape:
        raise DimensionMismatch("weight map does not match the image grid")
    return float(np.sum(w * r))


def normalized_photometric(a, b, mask, alpha: float = ALPHA) -> float:
    """Masked mean of ``r(a, b) / a``, with ``a`` floored at ``1e-3``."""
    a, b = _check_same(a, b)
    m = np.asarray(mask, dtype=float)
    total = m.sum()
    if total <= 0:
        raise EmptyMask("mask is empty")
    r = photometric_r(a, b, alpha)
    intensity = np.maximum(_channel_mean(a), INTENSITY_FLOOR)
    return float(np.sum(m * r / intensity) / total)


def _diff(x: np.ndarray, axis: int, order: int) -> np.ndarray:
    return np.diff(x, n=order, axis=axis)


def edge_aware_smoothness(v, guide, beta: float, k_order: int) -> float:
    """Sum of |k-th forward difference of v| damped by ``exp(-beta |d guide|)`` along x and y."""
    v = np.asarray(v, dtype=float)
    guide = np.asarray(guide, dtype=float)
    if v.shape[:2] != guide.shape[:2]:
        raise DimensionMismatch("field and guide image sizes differ")
    if k_order not in (1, 2):
        raise ValueError("k_order must be 1 or 2")
    g = guide if guide.ndim == 3 else guide[..., None]
    vv = v if v.ndim == 3 else v[..., None]
    total = 0.0
    for axis in (1, 0):  # x then y
        dv = np.abs(_diff(vv, axis, k_order)).sum(axis=-1)
        dg = np.abs(_diff(g, axis, 1)).mean(axis=-1)
        n = dv.shape[axis]
        dg = dg[:, :n] if axis == 1 else dg[:n, :]
        total += float(np.sum(dv * np.exp(-beta * dg)))
    return total


def geometric_consistency(d_warped, d_target, mask) -> float:
    d_warped, d_target = _check_same(d_warped, d_target)
    m = np.asarray(mask, dtype=float)
    total = m.sum()
    if total <= 0:
        raise EmptyMask("mask is empty")
    diff = np.abs(d_warped - d_target) / (d_warped + d_target)
    return float(np.sum(m * diff) / total)


def pointwise_depth_loss(d_pred, d_ba) -> float:
    d_pred = np.asarray(d_pred, dtype=float).ravel()
    d_ba = np.asarray(d_ba, dtype=float).ravel()
    if d_pred.shape != d_ba.shape:
        raise LengthMismatch(f"{d_pred.size} predicted vs {d_ba.size} refined depths")
    return float(np.mean(np.abs(d_pred - d_ba)))


def rigid_correspondence(pose: Pose, inv_depth, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel in frame t' reached by each frame-t pixel through depth and pose, plus its depth."""
    grid = K.pixel_grid()
    d = np.asarray(inv_depth, dtype=float)
    X = pixel_rays(grid, K) / d[..., None]
    Y = X @ pose.rotation.T + pose.translation
    z = Y[..., 2]
    zs = np.where(z > 1e-12, z, 1.0)
    q = np.stack([K.fx * Y[..., 0] / zs + K.cx, K.fy * Y[..., 1] / zs + K.cy], axis=-1)
    return q, z


def cross_task_loss(flow, pose: Pose, inv_depth, K: Intrinsics, sr) -> float:
    """``sr``-weighted mean L1 distance between rigid and flow correspondences."""
    flow = np.asarray(flow, dtype=float)
    sr = np.asarray(sr, dtype=float)
    if flow.shape[:2] != sr.shape or np.shape(inv_depth) != sr.shape:
        raise DimensionMismatch("flow, inverse depth and score map sizes differ")
    q_depth, z = rigid_correspondence(pose, inv_depth, K)
    q_flow = K.pixel_grid() + flow
    w = np.where(z > 1e-12, sr, 0.0)
    total = w.sum()
    if total <= 0:
        raise EmptyMask("score map is empty")
    return float(np.sum(w * np.abs(q_depth - q_flow).sum(axis=-1)) / total)


def auto_mask(target, warped, source, alpha: float = ALPHA) -> np.ndarray:
    """True where the warped reconstruction beats the unwarped source frame."""
    target, warped = _check_same(target, warped)
    _check_same(target, source)
    return photometric_r(target, warped, alpha) < photometric_r(target, source, alpha)


def projection_mask(pose: Pose, inv_depth, K: Intrinsics) -> np.ndarray:
    q, z = rigid_correspondence(pose, inv_depth, K)
    # the tolerance keeps border pixels that land a rounding error outside
    return (z > 1e-12) & K.in_bounds(q, tol=1e-9)


@dataclass(frozen=True)
class LossWeights:
    flow: float = 1.0
    flow_smooth: float = 0.1
    depth_photometric: float = 0.2
    depth_smooth: float = 1e-3
    depth_consistency: float = 0.5
    depth_ba: float = 0.5
    cross: float = 0.002


def flow_loss(self_fwd: float, self_bwd: float, smooth: float, weights: LossWeights = LossWeights()) -> float:
    return 0.5 * (self_fwd + self_bwd) + weights.flow_smooth * smooth


def depth_loss(per_frame: list[dict], weights: LossWeights = LossWeights()) -> float:
    """Average over the two frames of the weighted photometric, smoothness, consistency and BA terms.

    Each entry of ``per_frame`` holds keys ``rp``, ``smooth``, ``dc`` and ``ba``.
    """
    total = 0.0
    for terms in per_frame:
        total += (
            weights.depth_photometric * terms["rp"]
            + weights.depth_smooth * terms["smooth"]
            + weights.depth_consistency * terms["dc"]
            + weights.depth_ba * terms["ba"]
        )
    return total / len(per_frame)


def total_loss(l_flow: float, l_cross: float, weights: LossWeights = LossWeights()) -> float:
    return weights.flow * l_flow + weights.cross * l_cross


def combine_losses(terms: dict, weights: LossWeights = LossWeights()) -> dict:
    """Assemble the flow, depth and fine-tuning objectives from already computed terms.

    Expected keys: ``self_fwd``, ``self_bwd``, ``flow_smooth``, ``depth`` (a
    list as taken by :func:`depth_loss`) and ``cross``; missing groups are skipped.
    """
    out = {}
    if {"self_fwd", "self_bwd", "flow_smooth"} <= terms.keys():
        out["flow"] = flow_loss(terms["self_fwd"], terms["self_bwd"], terms["flow_smooth"], weights)
    if "depth" in terms:
        out["depth"] = depth_loss(terms["depth"], weights)
    if "flow" in out and "cross" in terms:
        out["total"] = total_loss(out["flow"], terms["cross"], weights)
    return out
