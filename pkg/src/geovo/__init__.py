"""Two-view geometric visual odometry from dense flow and inverse depth.

Forward-backward flow screening, epipolar scoring and ray-angle masking pick
reliable correspondences; P3P-RANSAC gives an initial pose; a Levenberg-
Marquardt bundle adjustment with Huber weights and a Schur-eliminated depth
block refines pose and inverse depths jointly.
"""

from .errors import ConfigError, GeovoError, InputFormatError, NumericalError
from .pipeline import PipelineConfig, PipelineResult, solve_correspondences, solve_dense
from .se3 import Intrinsics, Pose, exp_map, log_map

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GeovoError",
    "InputFormatError",
    "Intrinsics",
    "NumericalError",
    "PipelineConfig",
    "PipelineResult",
    "Pose",
    "exp_map",
    "log_map",
    "solve_correspondences",
    "solve_dense",
]
