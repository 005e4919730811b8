"""Rigid-body pose algebra and the pinhole camera model.

Conventions
-----------
* A :class:`Pose` ``T`` maps points from frame ``t`` into frame ``t'``:
  ``X' = R @ X + t``.
* Twists are 6-vectors ordered ``(omega, v)``; pose updates are applied on
  the left, ``T <- exp_map(xi) @ T``.
* Pixels are continuous ``(x, y)`` coordinates with the origin at the centre
  of the top-left pixel, ``x`` running along columns and ``y`` along rows.

All functions broadcast over leading axes of their point/pixel arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth, NonPositiveInverseDepth

DEPTH_EPS = 1e-12
_SMALL_ANGLE = 1e-3  # Taylor branches below this are exact to ~1e-18


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``X -> R X + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        return transform_point(self, points)

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, f: float, width: int, height: int) -> "Intrinsics":
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def in_bounds(self, pixels, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(pixels, dtype=float)
        return (
            (p[..., 0] >= -tol)
            & (p[..., 0] <= self.width - 1 + tol)
            & (p[..., 1] >= -tol)
            & (p[..., 1] <= self.height - 1 + tol)
        )

    def pixel_grid(self) -> np.ndarray:
        """``(H, W, 2)`` array of integer pixel coordinates ``(x, y)``."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(float)
        return np.stack([xs, ys], axis=-1)


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _so3_exp(omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R, V)`` where ``V`` is the left Jacobian used for translation."""
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = 2.0 * np.sin(0.5 * theta) ** 2 / theta**2  # (1 - cos) without cancellation
        c = (theta - np.sin(theta)) / theta**3
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return R, V


def exp_map(xi) -> Pose:
    """SE(3) exponential of the twist ``(omega, v)``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    R, V = _so3_exp(xi[:3])
    return Pose(R, V @ xi[3:])


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta**2 / 6.0 + 7.0 * theta**4 / 360.0)
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        M = 0.5 * (R + np.eye(3))
        axis = M[np.argmax(np.diag(M))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return w * (theta / s)


def log_map(pose: Pose) -> np.ndarray:
    """Inverse of :func:`exp_map`, valid for rotation angles below pi."""
    omega = so3_log(pose.rotation)
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        k = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        k = (1.0 - half / np.tan(half)) / theta**2
    V_inv = np.eye(3) - 0.5 * W + k * (W @ W)
    return np.concatenate([omega, V_inv @ pose.translation])


def compose(a: Pose, b: Pose) -> Pose:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_point(T: Pose, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p @ T.rotation.T + T.translation


def project(points, K: Intrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points; raises on ``z <= 1e-12``."""
    P = np.asarray(points, dtype=float)
    z = P[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise NonPositiveDepth("point at or behind the camera plane")
    return np.stack([K.fx * P[..., 0] / z + K.cx, K.fy * P[..., 1] / z + K.cy], axis=-1)


def pixel_rays(pixels, K: Intrinsics) -> np.ndarray:
    """``K^-1 [x, y, 1]`` for each pixel (unit depth, not unit length)."""
    p = np.asarray(pixels, dtype=float)
    return np.stack(
        [(p[..., 0] - K.cx) / K.fx, (p[..., 1] - K.cy) / K.fy, np.ones(p.shape[:-1])], axis=-1
    )


def unproject(pixels, inv_depth, K: Intrinsics) -> np.ndarray:
    d = np.asarray(inv_depth, dtype=float)
    if np.any(d <= DEPTH_EPS):
        raise NonPositiveInverseDepth("inverse depth must be positive")
    return pixel_rays(pixels, K) / d[..., None]


def camera_center(T: Pose) -> np.ndarray:
    """Centre of camera ``t'`` expressed in frame ``t``."""
    return -T.rotation.T @ T.translation


def ray_angle_cosine(p1, p2, T: Pose, K: Intrinsics) -> np.ndarray:
    """Cosine between the viewing ray of ``p1`` (camera t) and of ``p2`` (camera t').

    Both rays are expressed in frame ``t``; only the rotation of ``T`` matters.
    """
    r1 = pixel_rays(p1, K)
    r2 = pixel_rays(p2, K) @ T.rotation  # R^T r2, row-vector form
    num = np.sum(r1 * r2, axis=-1)
    den = np.linalg.norm(r1, axis=-1) * np.linalg.norm(r2, axis=-1)
    return np.clip(num / den, -1.0, 1.0)


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    return float(np.linalg.norm(so3_log(R)))


def pose_errors(est: Pose, gt: Pose) -> tuple[float, float]:
    """Rotation error (rad) and translation error (length units) between two poses."""
    rot = rotation_angle(est.rotation.T @ gt.rotation)
    return rot, float(np.linalg.norm(est.translation - gt.translation))


def translation_direction_error(est: Pose, gt: Pose) -> float:
    """Angle in radians between the translation directions of two poses."""
    a = est.translation / np.linalg.norm(est.translation)
    b = gt.translation / np.linalg.norm(gt.translation)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def random_rotation(rng: np.random.Generator, max_angle: float, min_angle: float = 0.0) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(min_angle, max_angle)
    return exp_map(np.concatenate([axis * angle, np.zeros(3)])).rotation
