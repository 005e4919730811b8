"""Dense flow + inverse depth -> relative pose, the full two-view inference loop.

Stages: consistency masks, top-fraction selection, fundamental matrix,
epipolar scores, P3P-RANSAC initial pose, ray-angle mask, final sampling,
bundle adjustment. With ``use_masks=False`` the three screens are skipped and
correspondences are drawn uniformly at random, which is the ablation
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import correspondence as cs
from .ba import BAProblem, BASolution, ba_solve
from .correspondence import CorrespondenceSet
from .errors import GeovoError
from .flow import FB_ALPHA1, FB_ALPHA2, SO_EPS, flow_consistency
from .p3p import RansacConfig, p3p_ransac
from .se3 import Intrinsics, Pose


@dataclass(frozen=True)
class PipelineConfig:
    fb_alpha1: float = FB_ALPHA1
    fb_alpha2: float = FB_ALPHA2
    so_eps: float = SO_EPS
    top_fraction: float = 0.2
    f_count: int = 3000
    fundamental_ransac: bool = False
    cos_max: float = cs.COS_MAX
    n_samples: int = 3000
    use_masks: bool = True
    ransac: RansacConfig = field(default_factory=RansacConfig)
    init: str = "p3p"
    huber_delta: float = 1.0
    robust: bool = True
    lambda_bounds: tuple[float, float] = (1.0, 1e4)
    sigma: float = 5.0
    w_d: float = 1.0
    lm_iterations: int = 30
    lm_policy: str = "accept_reject"
    seed: int = 0


@dataclass
class PipelineResult:
    pose: Pose
    init_pose: Pose
    solution: BASolution
    correspondences: CorrespondenceSet
    maps: dict = field(default_factory=dict)
    fundamental: np.ndarray | None = None


class StageError(GeovoError):
    """Wraps a module error with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, error: GeovoError):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, GeovoError) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def initial_pose(corr: CorrespondenceSet, K: Intrinsics, cfg: PipelineConfig) -> Pose:
    if cfg.init == "identity":
        return Pose.identity()
    if cfg.init != "p3p":
        raise ValueError(f"unknown init {cfg.init!r}")
    return p3p_ransac(corr, K, cfg.ransac).pose


def refine(corr: CorrespondenceSet, K: Intrinsics, init: Pose, cfg: PipelineConfig) -> BASolution:
    problem = BAProblem(
        corr,
        K,
        init,
        w_d=cfg.w_d,
        huber_delta=cfg.huber_delta,
        max_iterations=cfg.lm_iterations,
        lambda_bounds=tuple(cfg.lambda_bounds),
        sigma=cfg.sigma,
        robust=cfg.robust,
        lm_policy=cfg.lm_policy,
    )
    return ba_solve(problem)


def solve_correspondences(corr: CorrespondenceSet, K: Intrinsics, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Pose initialisation plus BA on an already sampled correspondence set."""
    with _stage("pose-init"):
        T0 = initial_pose(corr, K, cfg)
    with _stage("bundle-adjustment"):
        sol = refine(corr, K, T0, cfg)
    return PipelineResult(sol.pose, T0, sol, corr)


def solve_dense(
    flow_fwd: np.ndarray,
    flow_bwd: np.ndarray,
    inv_depth: np.ndarray,
    K: Intrinsics,
    cfg: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    H, W = inv_depth.shape
    if cfg.use_masks:
        with _stage("consistency"):
            maps = flow_consistency(flow_fwd, flow_bwd, cfg.fb_alpha1, cfg.fb_alpha2, cfg.so_eps)
            top = cs.select_top_fraction(maps.so, cfg.top_fraction, maps.mc)
            in_top = np.zeros((H, W), dtype=bool)
            in_top[top[:, 1], top[:, 0]] = True
            so = np.where(in_top, maps.so, 0.0)
        with _stage("fundamental"):
            best = top[: cfg.f_count].astype(float)
            matched = best + flow_fwd[top[: cfg.f_count, 1], top[: cfg.f_count, 0]]
            if cfg.fundamental_ransac:
                F = cs.estimate_fundamental_ransac(best, matched, seed=cfg.seed)
            else:
                F = cs.estimate_fundamental(best, matched)
            scores = cs.epipolar_scores(flow_fwd, F)
        with _stage("pose-init"):
            pre = cs.sample_correspondences(flow_fwd, inv_depth, so * scores.sr, cfg.n_samples, cfg.seed)
            # the ray-angle mask always needs a real pose, whatever BA starts from
            T_mask = p3p_ransac(pre, K, cfg.ransac).pose
            T0 = T_mask if cfg.init == "p3p" else initial_pose(pre, K, cfg)
        with _stage("ray-angle"):
            candidates = (so * scores.sr) > 0
            rows, cols = np.nonzero(candidates)
            p = np.stack([cols, rows], axis=-1).astype(float)
            ma = np.zeros((H, W), dtype=bool)
            ma[rows, cols] = cs.ray_angle_mask(p, p + flow_fwd[rows, cols], T_mask, K, cfg.cos_max)
            combined = ma * scores.sr * so
        with _stage("sampling"):
            corr = cs.sample_correspondences(flow_fwd, inv_depth, combined, cfg.n_samples, cfg.seed)
        out_maps = {"mc": maps.mc, "so": so, "de": scores.de, "sr": scores.sr, "ma": ma}
    else:
        F = None
        rng = np.random.default_rng(cfg.seed)
        with _stage("sampling"):
            corr = cs.sample_correspondences(flow_fwd, inv_depth, rng.random((H, W)) + 1e-12, cfg.n_samples, cfg.seed)
        with _stage("pose-init"):
            T0 = initial_pose(corr, K, cfg)
        out_maps = {}
    with _stage("bundle-adjustment"):
        sol = refine(corr, K, T0, cfg)
    return PipelineResult(sol.pose, T0, sol, corr, out_maps, F)
