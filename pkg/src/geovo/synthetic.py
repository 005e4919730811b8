"""Ground-truth rigid scenes standing in for learned depth and flow.

Two generators share one :class:`SceneSpec`:

* :func:`generate_scene` draws ``n_points`` random points in the camera-t
  frustum and returns per-point correspondences (the BA input directly);
* :func:`generate_dense_scene` renders a smooth depth surface over the whole
  image, exact forward flow, and exact backward flow obtained by inverting the
  rigid pixel map with Newton iterations.

Everything is a pure function of the SceneSpec, seed included.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import FlowOutOfRange
from .flow import bilinear_sample
from .se3 import Intrinsics, Pose, compose, exp_map, pixel_rays, random_rotation


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_points: int = 3000
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics.centered(100.0, 128, 96))
    depth_range: tuple[float, float] = (2.0, 10.0)
    pose_magnitude: tuple[float, float] = (np.deg2rad(5.0), 0.5)  # (max rotation rad, max translation)
    pose_minimum: tuple[float, float] = (0.0, 0.2)
    outlier_fraction: float = 0.0
    noise_sigma_px: float = 0.0

    def __post_init__(self):
        if not 0 < self.depth_range[0] <= self.depth_range[1]:
            raise ValueError("depth range must be positive and ordered")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.noise_sigma_px < 0:
            raise ValueError("noise_sigma_px must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        d["pose_magnitude"] = list(self.pose_magnitude)
        d["pose_minimum"] = list(self.pose_minimum)
        return d


@dataclass
class GroundTruth:
    """Per-point scene: pixels ``p`` in frame t, flow targets ``q`` in frame t'."""

    pose: Pose
    p: np.ndarray
    q: np.ndarray
    inv_depth: np.ndarray
    inlier_flags: np.ndarray

    @property
    def flow(self) -> np.ndarray:
        return self.q - self.p

    def correspondences(self) -> CorrespondenceSet:
        return CorrespondenceSet(self.p, self.q, self.inv_depth, np.ones(len(self.p)))


@dataclass
class DenseScene:
    pose: Pose
    intrinsics: Intrinsics
    inv_depth: np.ndarray  # (H, W), frame t
    flow_fwd: np.ndarray  # (H, W, 2), t -> t'
    flow_bwd: np.ndarray  # (H, W, 2), t' -> t
    inlier_flags: np.ndarray  # (H, W) bool
    surface: dict = field(repr=False, default_factory=dict)


def sample_pose(rng: np.random.Generator, spec: SceneSpec) -> Pose:
    R = random_rotation(rng, spec.pose_magnitude[0], spec.pose_minimum[0])
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    norm = rng.uniform(spec.pose_minimum[1], spec.pose_magnitude[1])
    return Pose(R, direction * norm)


def _rigid_targets(p, d, pose: Pose, K: Intrinsics):
    X = pixel_rays(p, K) / d[..., None]
    Y = X @ pose.rotation.T + pose.translation
    z = Y[..., 2]
    zs = np.where(z > 1e-12, z, 1.0)
    q = np.stack([K.fx * Y[..., 0] / zs + K.cx, K.fy * Y[..., 1] / zs + K.cy], axis=-1)
    return q, z


def pixel_noise(rng: np.random.Generator, sigma: float, shape: tuple) -> np.ndarray:
    """Isotropic 2D Gaussian pixel noise, redrawn wherever its norm exceeds ``3 * sigma``."""
    noise = rng.normal(scale=sigma, size=shape)
    while True:
        bad = np.linalg.norm(noise, axis=-1) > 3.0 * sigma
        if not bad.any():
            return noise
        noise[bad] = rng.normal(scale=sigma, size=(int(bad.sum()), 2))


def generate_scene(spec: SceneSpec, pose: Pose | None = None) -> GroundTruth:
    """Random per-point two-view scene with planted outliers and pixel noise."""
    rng = np.random.default_rng(spec.seed)
    K = spec.intrinsics
    if pose is None:
        pose = sample_pose(rng, spec)
    zmin, zmax = spec.depth_range
    n = spec.n_points
    p = np.empty((0, 2))
    d = np.empty(0)
    # rejection sampling keeps points in front of camera t' with a margin
    while len(p) < n:
        m = 2 * (n - len(p)) + 16
        cand = rng.uniform([0.0, 0.0], [K.width - 1, K.height - 1], size=(m, 2))
        cd = 1.0 / rng.uniform(zmin, zmax, size=m)
        _, z = _rigid_targets(cand, cd, pose, K)
        ok = z > 0.1 * zmin
        p = np.concatenate([p, cand[ok]])
        d = np.concatenate([d, cd[ok]])
    p, d = p[:n], d[:n]
    q, _ = _rigid_targets(p, d, pose, K)
    outlier = rng.random(n) < spec.outlier_fraction
    random_q = rng.uniform([0.0, 0.0], [K.width - 1, K.height - 1], size=(n, 2))
    noise = pixel_noise(rng, spec.noise_sigma_px, (n, 2)) if spec.noise_sigma_px > 0 else 0.0
    q = np.where(outlier[:, None], random_q, q + noise)
    return GroundTruth(pose, p, q, d, ~outlier)


def _surface_params(rng: np.random.Generator, n_waves: int = 3) -> dict:
    return {
        "amp": rng.uniform(0.5, 1.0, n_waves),
        "freq": rng.uniform(0.2, 0.7, (n_waves, 2)) * rng.choice([-1.0, 1.0], (n_waves, 2)),
        "phase": rng.uniform(0.0, 2 * np.pi, n_waves),
    }


def _surface_depth(p: np.ndarray, params: dict, K: Intrinsics, depth_range) -> np.ndarray:
    """Smooth depth surface, defined for any pixel coordinate (not only in-frame)."""
    u = p[..., 0] / K.width
    v = p[..., 1] / K.height
    s = np.zeros(p.shape[:-1])
    for a, (fu, fv), ph in zip(params["amp"], params["freq"], params["phase"]):
        s = s + a * np.sin(2 * np.pi * (fu * u + fv * v) + ph)
    s = 0.5 + 0.5 * s / np.sum(params["amp"])
    zmin, zmax = depth_range
    return zmin + (zmax - zmin) * s


def _invert_pixel_map(q_target, pose, K, params, depth_range, p0, iterations=60, h=1e-4):
    """Newton solve of ``F(p) = q_target`` for the rigid pixel map ``F``."""

    def F(p):
        d = 1.0 / _surface_depth(p, params, K, depth_range)
        return _rigid_targets(p, d, pose, K)[0]

    p = p0.copy()
    for _ in range(iterations):
        r = F(p) - q_target
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        jx = (F(p + ex) - F(p - ex)) / (2 * h)
        jy = (F(p + ey) - F(p - ey)) / (2 * h)
        det = jx[..., 0] * jy[..., 1] - jy[..., 0] * jx[..., 1]
        det = np.where(np.abs(det) > 1e-12, det, 1e-12)
        dx = (jy[..., 1] * r[..., 0] - jy[..., 0] * r[..., 1]) / det
        dy = (-jx[..., 1] * r[..., 0] + jx[..., 0] * r[..., 1]) / det
        step = np.stack([dx, dy], axis=-1)
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        step = step * np.minimum(1.0, 20.0 / np.maximum(norm, 1e-300))
        p = p - step
        if np.max(np.abs(r)) < 1e-11:
            break
    residual = np.linalg.norm(F(p) - q_target, axis=-1)
    return p, residual


def generate_dense_scene(spec: SceneSpec, pose: Pose | None = None) -> DenseScene:
    """Dense scene over the full image grid of ``spec.intrinsics``."""
    rng = np.random.default_rng(spec.seed)
    K = spec.intrinsics
    if pose is None:
        pose = sample_pose(rng, spec)
    params = _surface_params(rng)
    grid = K.pixel_grid()
    z = _surface_depth(grid, params, K, spec.depth_range)
    inv_depth = 1.0 / z
    q, z2 = _rigid_targets(grid, inv_depth, pose, K)
    if np.any(z2 <= 1e-6):
        raise ValueError("sampled pose puts part of the surface behind camera t'")
    fwd = q - grid

    # start each t' pixel from the plane at the median t' depth
    Y = pixel_rays(grid, K) * np.median(z2)
    X = (Y - pose.translation) @ pose.rotation
    p0 = np.stack([K.fx * X[..., 0] / X[..., 2] + K.cx, K.fy * X[..., 1] / X[..., 2] + K.cy], axis=-1)
    pre, res = _invert_pixel_map(grid, pose, K, params, spec.depth_range, p0)
    if np.max(res) > 1e-6:
        raise ValueError(f"backward flow inversion did not converge (residual {np.max(res):.2e})")
    bwd = pre - grid

    H, W = z.shape
    outlier = rng.random((H, W)) < spec.outlier_fraction
    random_q = rng.uniform([0.0, 0.0], [K.width - 1, K.height - 1], size=(H, W, 2))
    if spec.noise_sigma_px > 0:
        fwd = fwd + pixel_noise(rng, spec.noise_sigma_px, fwd.shape) * (~outlier)[..., None]
    fwd = np.where(outlier[..., None], random_q - grid, fwd)
    return DenseScene(pose, K, inv_depth, fwd, bwd, ~outlier, {"params": params, "depth_range": spec.depth_range})


def _texture(p: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.zeros(p.shape[:-1])
    for _ in range(6):
        f = rng.uniform(0.05, 0.4, 2) * rng.choice([-1.0, 1.0], 2)
        out = out + rng.uniform(0.5, 1.0) * np.sin(f[0] * p[..., 0] + f[1] * p[..., 1] + rng.uniform(0, 2 * np.pi))
    return 0.5 + 0.4 * out / 6.0


def render_images(scene: DenseScene, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Grey images ``(I_t, I_t')`` of a surface texture attached to frame-t pixel coordinates."""
    grid = scene.intrinsics.pixel_grid()
    I_t = _texture(grid, seed)
    I_tp = _texture(grid + scene.flow_bwd, seed)
    return I_t, I_tp


def make_opv_from_flow(flow: np.ndarray, k: int = 4) -> np.ndarray:
    """Probability volume whose grid-weighted average reproduces ``flow`` exactly.

    Bilinear weights go on the four grid cells around each target offset and
    are scaled by ``K^2`` to cancel the averaging normalisation.
    """
    flow = np.asarray(flow, dtype=float)
    if np.any(np.abs(flow) > k):
        raise FlowOutOfRange(f"flow components must lie within [-{k}, {k}]")
    side = 2 * k + 1
    H, W = flow.shape[:2]
    col = k + flow[..., 0]
    row = k - flow[..., 1]
    c0 = np.minimum(np.floor(col).astype(np.intp), side - 2)
    r0 = np.minimum(np.floor(row).astype(np.intp), side - 2)
    ac = col - c0
    ar = row - r0
    opv = np.zeros((H, W, side, side))
    hh, ww = np.mgrid[0:H, 0:W]
    scale = float(side * side)
    opv[hh, ww, r0, c0] += scale * (1 - ar) * (1 - ac)
    opv[hh, ww, r0, c0 + 1] += scale * (1 - ar) * ac
    opv[hh, ww, r0 + 1, c0] += scale * ar * (1 - ac)
    opv[hh, ww, r0 + 1, c0 + 1] += scale * ar * ac
    return opv


def _coarse_field(seed: int, coarse: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(coarse, coarse, 2))


def _field_at(coarse_field: np.ndarray, coords: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # bilinear upsampling, held constant beyond the image border
    H, W = shape
    n = coarse_field.shape[0]
    sx = np.clip(coords[..., 0], 0, W - 1) * (n - 1) / max(W - 1, 1)
    sy = np.clip(coords[..., 1], 0, H - 1) * (n - 1) / max(H - 1, 1)
    return bilinear_sample(coarse_field, np.stack([sx, sy], axis=-1))[0]


def _pixel_grid(shape: tuple[int, int]) -> np.ndarray:
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
    return np.stack([xs, ys], axis=-1)


def smooth_random_field(shape: tuple[int, int], seed: int, coarse: int = 8) -> np.ndarray:
    """Zero-mean 2-channel field: coarse Gaussian noise bilinearly upsampled to ``shape``."""
    field = _field_at(_coarse_field(seed, coarse), _pixel_grid(shape), shape)
    return field - field.reshape(-1, 2).mean(axis=0)


def _noise_scale(field: np.ndarray, delta_g: float) -> float:
    return delta_g / np.percentile(np.linalg.norm(field, axis=-1), 95)


def apply_geometric_noise(flow: np.ndarray, delta_g: float, seed: int) -> np.ndarray:
    """Add a smooth deformation whose 95th-percentile magnitude equals ``delta_g`` pixels."""
    if delta_g < 0:
        raise ValueError("delta_g must be non-negative")
    flow = np.asarray(flow, dtype=float)
    if delta_g == 0:
        return flow.copy()
    field = smooth_random_field(flow.shape[:2], seed)
    return flow + field * _noise_scale(field, delta_g)


def distort_second_frame(
    flow_fwd: np.ndarray, flow_bwd: np.ndarray, delta_g: float, seed: int, iterations: int = 30
) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward flow after warping image t' by a smooth deformation ``u``.

    A point seen at ``y`` in frame t' moves to ``y + u(y)``, so the forward flow
    gains ``u(p + f(p))`` and the backward flow is re-read at the undistorted
    position (found by fixed-point iteration). Unlike
    :func:`apply_geometric_noise` the pair stays mutually consistent, so the
    forward-backward check cannot screen the corruption out.
    """
    if delta_g < 0:
        raise ValueError("delta_g must be non-negative")
    fwd = np.asarray(flow_fwd, dtype=float)
    bwd = np.asarray(flow_bwd, dtype=float)
    if delta_g == 0:
        return fwd.copy(), bwd.copy()
    shape = fwd.shape[:2]
    H, W = shape
    coarse = _coarse_field(seed, 8)
    grid = _pixel_grid(shape)
    base = _field_at(coarse, grid, shape)
    mean = base.reshape(-1, 2).mean(axis=0)
    scale = _noise_scale(base - mean, delta_g)

    def u(coords):
        return (_field_at(coarse, coords, shape) - mean) * scale

    fwd_new = fwd + u(grid + fwd)
    y = grid.copy()
    for _ in range(iterations):
        y = grid - u(y)
    inside = np.stack([np.clip(y[..., 0], 0, W - 1), np.clip(y[..., 1], 0, H - 1)], axis=-1)
    bwd_at_y = bilinear_sample(bwd, inside)[0]
    bwd_new = y + bwd_at_y - grid
    return fwd_new, bwd_new


def stride_sample(items, delta_s: int):
    """Keep indices ``0, delta_s, 2 * delta_s, ...``."""
    if delta_s < 1:
        raise ValueError("delta_s must be at least 1")
    return items[::delta_s]


def strided_relative_poses(relative: list[Pose], delta_s: int) -> list[Pose]:
    """Relative poses between frames kept by :func:`stride_sample`.

    ``relative[i]`` maps frame-i coordinates into frame-(i+1); the result maps
    kept frame ``j * delta_s`` into ``(j + 1) * delta_s``.
    """
    if delta_s < 1:
        raise ValueError("delta_s must be at least 1")
    out = []
    for start in range(0, len(relative) - delta_s + 1, delta_s):
        T = Pose.identity()
        for rel in relative[start : start + delta_s]:
            T = compose(rel, T)
        out.append(T)
    return out


def make_relative_motion(
    n_steps: int, step_length: float, seed: int, max_yaw_deg: float = 2.0, jitter_deg: float = 0.3
) -> list[Pose]:
    """Forward-driving relative motions ``T_{i -> i+1}`` with gentle yaw."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_steps):
        yaw = np.deg2rad(rng.uniform(-max_yaw_deg, max_yaw_deg))
        jitter = np.deg2rad(jitter_deg) * rng.normal(size=2)
        omega = np.array([jitter[0], yaw, jitter[1]])
        motion = exp_map(np.concatenate([omega, [0.0, 0.0, 0.0]])).rotation
        # camera moves forward by step_length: frame-i points appear closer in frame i+1
        out.append(Pose(motion, -motion @ np.array([0.0, 0.0, step_length])))
    return out
