"""Position-aware flow math: position grids, OPV -> flow, warping and
forward-backward consistency.

Flow fields are ``(H, W, 2)`` float arrays holding ``(dx, dy)`` per pixel.
Probability volumes are ``(H, W, K, K)`` arrays with ``K = 2k + 1``; the last
two axes are indexed ``[row, col]`` exactly like the position grids.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, InvalidRadius

FB_ALPHA1 = 0.01
FB_ALPHA2 = 0.5
SO_EPS = 1e-3


class PositionGrids(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray

    @property
    def k(self) -> int:
        return (self.gx.shape[0] - 1) // 2


class ConsistencyMaps(NamedTuple):
    mc: np.ndarray  # bool (H, W)
    so: np.ndarray  # float (H, W), zero where mc is False


def make_position_grids(k: int) -> PositionGrids:
    """Candidate offsets: ``gx`` runs -k..k left to right, ``gy`` runs k..-k top to bottom."""
    if int(k) != k or k < 1:
        raise InvalidRadius(f"radius must be a positive integer, got {k!r}")
    k = int(k)
    offsets = np.arange(-k, k + 1, dtype=float)
    gx = np.tile(offsets, (2 * k + 1, 1))
    gy = np.tile(offsets[::-1, None], (1, 2 * k + 1))
    return PositionGrids(gx, gy)


def opv_to_flow(opv: np.ndarray, grids: PositionGrids) -> np.ndarray:
    """Weighted average of the probability volume over the position grids.

    The ``1/K^2`` normalisation is applied as written; a volume whose cells sum
    to one therefore yields flows of at most ``k / K^2`` pixels.
    """
    opv = np.asarray(opv, dtype=float)
    side = grids.gx.shape[0]
    if opv.ndim != 4 or opv.shape[2:] != (side, side):
        raise DimensionMismatch(
            f"probability volume of shape {opv.shape} does not match grids of side {side}"
        )
    norm = 1.0 / side**2
    ox, oy = grids.gx[0], grids.gy[:, 0]
    standard = (
        np.all(grids.gx == ox) and np.all(grids.gy == oy[:, None])
        and np.array_equal(ox, -ox[::-1]) and np.array_equal(oy, -oy[::-1])
    )
    if not standard:
        fx = np.einsum("hwuv,uv->hw", opv, grids.gx) * norm
        fy = np.einsum("hwuv,uv->hw", opv, grids.gy) * norm
        return np.stack([fx, fy], axis=-1)
    # pair each offset with its mirror so symmetric volumes cancel exactly
    half = side // 2
    hi = np.arange(side - 1, half, -1)
    lo = side - 1 - hi
    cols = opv.sum(axis=2)
    rows = opv.sum(axis=3)
    fx = ((cols[..., hi] - cols[..., lo]) @ ox[hi]) * norm
    fy = ((rows[..., hi] - rows[..., lo]) @ oy[hi]) * norm
    return np.stack([fx, fy], axis=-1)


def bilinear_sample(field: np.ndarray, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``field`` (``(H, W)`` or ``(H, W, C)``) at continuous ``(x, y)`` coordinates.

    Returns ``(values, valid)``; samples outside ``[0, W-1] x [0, H-1]`` are
    flagged invalid and filled with zeros.
    """
    field = np.asarray(field, dtype=float)
    H, W = field.shape[:2]
    x = coords[..., 0]
    y = coords[..., 1]
    valid = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1)
    xc = np.where(valid, x, 0.0)
    yc = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), W - 1)
    y0 = np.minimum(np.floor(yc).astype(np.intp), H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = xc - x0
    ay = yc - y0
    if field.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    top = field[y0, x0] * (1.0 - ax) + field[y0, x1] * ax
    bottom = field[y1, x0] * (1.0 - ax) + field[y1, x1] * ax
    out = top * (1.0 - ay) + bottom * ay
    mask = valid if field.ndim == 2 else valid[..., None]
    return np.where(mask, out, 0.0), valid


def warp_field(field: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample ``field`` at ``p + flow(p)`` for every pixel ``p``."""
    field = np.asarray(field, dtype=float)
    flow = np.asarray(flow, dtype=float)
    if field.shape[:2] != flow.shape[:2] or flow.shape[-1] != 2:
        raise DimensionMismatch(f"field {field.shape} and flow {flow.shape} disagree")
    H, W = flow.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    coords = np.stack([xs + flow[..., 0], ys + flow[..., 1]], axis=-1)
    return bilinear_sample(field, coords)


def splat_counts(flow: np.ndarray) -> np.ndarray:
    """Nearest-pixel forward splatting: how many source pixels land on each target pixel."""
    H, W = flow.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    tx = np.rint(xs + flow[..., 0]).astype(np.intp)
    ty = np.rint(ys + flow[..., 1]).astype(np.intp)
    inside = (tx >= 0) & (tx < W) & (ty >= 0) & (ty < H)
    counts = np.bincount(ty[inside] * W + tx[inside], minlength=H * W)
    return counts.reshape(H, W)


def flow_consistency(
    fwd: np.ndarray,
    bwd: np.ndarray,
    alpha1: float = FB_ALPHA1,
    alpha2: float = FB_ALPHA2,
    eps: float = SO_EPS,
) -> ConsistencyMaps:
    """Forward-backward and occlusion masks for frame ``t`` plus the consistency score."""
    fwd = np.asarray(fwd, dtype=float)
    bwd = np.asarray(bwd, dtype=float)
    if fwd.shape != bwd.shape or fwd.ndim != 3 or fwd.shape[-1] != 2:
        raise DimensionMismatch(f"forward {fwd.shape} and backward {bwd.shape} flows disagree")
    bwd_w, inside = warp_field(bwd, fwd)
    diff = fwd + bwd_w
    diff_sq = np.sum(diff**2, axis=-1)
    bound = alpha1 * (np.sum(fwd**2, axis=-1) + np.sum(bwd_w**2, axis=-1)) + alpha2
    fb_mask = inside & (diff_sq < bound)
    occ_mask = splat_counts(bwd) >= 1
    mc = fb_mask & occ_mask
    so = np.where(mc, 1.0 / (np.sqrt(diff_sq) + eps), 0.0)
    return ConsistencyMaps(mc, so)
