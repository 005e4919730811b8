"""Two-view geometric bundle adjustment over one pose and N inverse depths.

The residual of correspondence ``i`` is the flow target minus the rigid
reprojection of its source pixel::

    E_i = q_i - project(T @ unproject(p_i, d_i))

Damped normal equations ``(H + lam * diag(H)) dx = -J^T W E`` are solved by
eliminating the N scalar depth blocks (Schur complement onto the 6x6 pose
block). Huber IRLS weights ``w = min(1, delta / |E|)`` are refreshed after
every accepted step.

Two numbers are tracked per iteration:

* ``cost`` = ``sum_i w_i |E_i|``, the weighted geometric error that also
  drives the damping initialisation;
* ``objective`` = ``sum_i rho(|E_i|)`` with ``rho`` the Huber penalty whose
  IRLS weights are ``w``. Steps are accepted when the objective decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import CorrespondenceSet
from .errors import DivergedInitialization, PointBehindCamera, SingularSystem
from .se3 import DEPTH_EPS, Intrinsics, Pose, exp_map, pixel_rays

LAMBDA_MIN = 1.0
LAMBDA_MAX = 1e4
SIGMA = 5.0
HUBER_DELTA = 1.0
LM_ITERATIONS = 30
MIN_INV_DEPTH = 1e-8
MAX_CONDITION = 1e14


@dataclass
class BAProblem:
    correspondences: CorrespondenceSet
    intrinsics: Intrinsics
    init_pose: Pose
    w_d: float = 1.0
    huber_delta: float = HUBER_DELTA
    max_iterations: int = LM_ITERATIONS
    lambda_bounds: tuple[float, float] = (LAMBDA_MIN, LAMBDA_MAX)
    sigma: float = SIGMA
    robust: bool = True
    lm_policy: str = "accept_reject"
    fixed_depths: np.ndarray | None = None

    def __post_init__(self):
        if len(self.correspondences) < 6:
            raise ValueError("bundle adjustment needs at least 6 correspondences")
        if self.w_d < 0:
            raise ValueError("w_d must be non-negative")
        lo, hi = self.lambda_bounds
        if not 0 < lo <= hi:
            raise ValueError("lambda bounds must satisfy 0 < min <= max")
        if self.lm_policy not in ("accept_reject", "unconditional"):
            raise ValueError(f"unknown lm_policy {self.lm_policy!r}")


@dataclass
class IterationRecord:
    iteration: int
    lam: float
    cost: float
    objective: float
    accepted: bool


@dataclass
class BASolution:
    pose: Pose
    refined_inverse_depths: np.ndarray
    final_cost: float
    initial_cost: float
    final_objective: float
    initial_objective: float
    per_iteration_costs: list[float]
    accepted_steps: int
    trace: list[IterationRecord] = field(default_factory=list)
    initial_lambda: float = 0.0
    clamped_depths: int = 0
    dropped_residuals: int = 0


def residuals(p, q, pose: Pose, inv_depth, K: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised residuals ``(N, 2)`` and a validity mask.

    Invalid entries (non-positive inverse depth or reprojected depth) are
    returned as zeros with ``valid == False``.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(inv_depth, dtype=float)
    ok_d = d > DEPTH_EPS
    X = pixel_rays(p, K) / np.where(ok_d, d, 1.0)[..., None]
    Y = X @ pose.rotation.T + pose.translation
    valid = ok_d & (Y[..., 2] > DEPTH_EPS)
    z = np.where(valid, Y[..., 2], 1.0)
    proj = np.stack([K.fx * Y[..., 0] / z + K.cx, K.fy * Y[..., 1] / z + K.cy], axis=-1)
    E = np.where(valid[..., None], np.asarray(q, dtype=float) - proj, 0.0)
    return E, valid


def residual(p, q, pose: Pose, inv_depth: float, K: Intrinsics) -> np.ndarray:
    """Residual of a single correspondence; raises if the point is not in front of both cameras."""
    E, valid = residuals(np.reshape(p, (1, 2)), np.reshape(q, (1, 2)), pose, np.atleast_1d(inv_depth), K)
    if not valid[0]:
        raise PointBehindCamera("reprojected point is not in front of camera t'")
    return E[0]


def huber_weight(r, delta: float = HUBER_DELTA) -> np.ndarray:
    """IRLS weight of the Huber penalty for residual vector(s) ``r`` (last axis)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    norm = np.linalg.norm(np.asarray(r, dtype=float), axis=-1)
    return np.where(norm <= delta, 1.0, delta / np.maximum(norm, 1e-300))


def huber_penalty(norm: np.ndarray, delta: float) -> np.ndarray:
    return np.where(norm <= delta, 0.5 * norm**2, delta * (norm - 0.5 * delta))


def jacobians(p, pose: Pose, inv_depth, K: Intrinsics, w_d: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the residual w.r.t. a left twist ``(omega, v)`` and the inverse depth.

    Returns ``J_T`` of shape ``(N, 2, 6)`` and ``J_d`` of shape ``(N, 2)``;
    ``J_d`` is already multiplied by ``w_d``.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    d = np.atleast_1d(np.asarray(inv_depth, dtype=float))
    m = pixel_rays(p, K)
    Rm = m @ pose.rotation.T
    Y = Rm / d[:, None] + pose.translation
    x, y, z = Y[:, 0], Y[:, 1], Y[:, 2]
    n = len(d)
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = K.fx / z
    dpi[:, 0, 2] = -K.fx * x / z**2
    dpi[:, 1, 1] = K.fy / z
    dpi[:, 1, 2] = -K.fy * y / z**2
    dY = np.zeros((n, 3, 6))
    # d(exp(xi) Y)/d(omega) = -[Y]x
    dY[:, 0, 1] = z
    dY[:, 0, 2] = -y
    dY[:, 1, 0] = -z
    dY[:, 1, 2] = x
    dY[:, 2, 0] = y
    dY[:, 2, 1] = -x
    dY[:, 0, 3] = dY[:, 1, 4] = dY[:, 2, 5] = 1.0
    J_T = -np.einsum("nij,njk->nik", dpi, dY)
    J_d = np.einsum("nij,nj->ni", dpi, Rm) / d[:, None] ** 2
    return J_T, w_d * J_d


def lambda_from_error(mean_error: float, lam_min=LAMBDA_MIN, lam_max=LAMBDA_MAX, sigma=SIGMA) -> float:
    """Damping initialisation from the mean weighted residual norm."""
    if not lam_min <= lam_max or sigma <= 0:
        raise ValueError("need lam_min <= lam_max and sigma > 0")
    return float(lam_min + (lam_max - lam_min) * np.exp(-mean_error / sigma))


def mean_weighted_error(E: np.ndarray, valid: np.ndarray, delta: float, robust: bool = True) -> float:
    norm = np.linalg.norm(E, axis=-1)
    w = huber_weight(E, delta) if robust else np.ones(len(E))
    return float(np.sum(np.where(valid, w * norm, 0.0)) / len(E))


def init_lambda(
    corr: CorrespondenceSet,
    pose: Pose,
    K: Intrinsics,
    lam_min: float = LAMBDA_MIN,
    lam_max: float = LAMBDA_MAX,
    sigma: float = SIGMA,
    delta: float = HUBER_DELTA,
) -> float:
    E, valid = residuals(corr.p, corr.q, pose, corr.inv_depth, K)
    return lambda_from_error(mean_weighted_error(E, valid, delta), lam_min, lam_max, sigma)


@dataclass
class BAState:
    pose: Pose
    inv_depth: np.ndarray
    weights: np.ndarray  # IRLS weights, zero for invalid residuals
    E: np.ndarray
    valid: np.ndarray


@dataclass
class LMStep:
    pose: Pose
    inv_depth: np.ndarray
    delta: np.ndarray  # (6 + N,) stacked (twist, depth increments)
    predicted_objective: float
    actual_objective: float
    clamped: int


def normal_equations(state: BAState, corr: CorrespondenceSet, K: Intrinsics, w_d: float):
    """Block pieces of ``J^T W J`` and ``J^T W E``.

    Returns ``(A, B, C, g_T, g_d)`` with ``A`` 6x6, ``B`` 6xN, ``C`` (N,) the
    diagonal depth block, ``g_T`` (6,) and ``g_d`` (N,).
    """
    J_T, J_d = jacobians(corr.p, state.pose, state.inv_depth, K, w_d)
    w = state.weights
    wJ_T = J_T * w[:, None, None]
    A = np.einsum("nij,nik->jk", wJ_T, J_T)
    B = np.einsum("nij,ni->jn", wJ_T, J_d)
    C = w * np.sum(J_d * J_d, axis=1)
    g_T = np.einsum("nij,ni->j", wJ_T, state.E)
    g_d = w * np.sum(J_d * state.E, axis=1)
    return A, B, C, g_T, g_d


def _objective(E, valid, delta, robust) -> float:
    norm = np.linalg.norm(E, axis=-1)
    pen = huber_penalty(norm, delta) if robust else 0.5 * norm**2
    return float(np.sum(np.where(valid, pen, 0.0)))


def _cost(E, valid, delta, robust) -> float:
    norm = np.linalg.norm(E, axis=-1)
    w = huber_weight(E, delta) if robust else 1.0
    return float(np.sum(np.where(valid, w * norm, 0.0)))


def solve_damped(A, B, C, g_T, g_d, lam: float, fixed=None) -> tuple[np.ndarray, np.ndarray]:
    """Schur-complement solve of ``(H + lam diag(H)) dx = -g``."""
    A_l = A + lam * np.diag(np.diag(A))
    C_l = (1.0 + lam) * C
    free = C_l > 1e-300
    if fixed is not None:
        free &= ~np.asarray(fixed, dtype=bool)
    C_inv = np.where(free, 1.0 / np.where(free, C_l, 1.0), 0.0)
    S = A_l - (B * C_inv) @ B.T
    rhs = -g_T + B @ (C_inv * g_d)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_CONDITION:
        raise SingularSystem("Schur complement of the pose block is singular")
    dT = np.linalg.solve(S, rhs)
    dd = C_inv * (-g_d - B.T @ dT)
    return dT, dd


def _make_state(pose, d, corr, K, delta, robust) -> BAState:
    E, valid = residuals(corr.p, corr.q, pose, d, K)
    w = huber_weight(E, delta) if robust else np.ones(len(d))
    return BAState(pose, d, np.where(valid, w, 0.0), E, valid)


def lm_step(state: BAState, lam: float, problem: BAProblem) -> LMStep:
    """One damped step from ``state`` with damping ``lam``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    corr, K = problem.correspondences, problem.intrinsics
    A, B, C, g_T, g_d = normal_equations(state, corr, K, problem.w_d)
    dT, dd = solve_damped(A, B, C, g_T, g_d, lam, problem.fixed_depths)
    new_pose = exp_map(dT) @ state.pose
    raw = state.inv_depth + dd
    clamped = int(np.sum(raw < MIN_INV_DEPTH))
    new_d = np.maximum(raw, MIN_INV_DEPTH)
    # quadratic model of the IRLS objective at the current weights
    delta = np.concatenate([dT, dd])
    g = np.concatenate([g_T, g_d])
    Hd = np.concatenate([A @ dT + B @ dd, B.T @ dT + C * dd])
    model_change = g @ delta + 0.5 * delta @ Hd
    E_new, valid_new = residuals(corr.p, corr.q, new_pose, new_d, K)
    current = _objective(state.E, state.valid, problem.huber_delta, problem.robust)
    actual = _objective(E_new, valid_new, problem.huber_delta, problem.robust)
    if np.sum(valid_new) < np.sum(state.valid):
        actual = np.inf
    return LMStep(new_pose, new_d, delta, current + model_change, actual, clamped)


def ba_solve(problem: BAProblem) -> BASolution:
    corr, K = problem.correspondences, problem.intrinsics
    delta, robust = problem.huber_delta, problem.robust
    lam_min, lam_max = problem.lambda_bounds

    state = _make_state(problem.init_pose, corr.inv_depth.copy(), corr, K, delta, robust)
    cost = _cost(state.E, state.valid, delta, robust)
    objective = _objective(state.E, state.valid, delta, robust)
    if not (np.isfinite(cost) and np.isfinite(objective)):
        raise DivergedInitialization("initial cost is not finite")
    initial_cost, initial_objective = cost, objective
    dropped = int(np.sum(~state.valid))

    mean_err = mean_weighted_error(state.E, state.valid, delta, robust)
    lam = lambda_from_error(mean_err, lam_min, lam_max, problem.sigma)
    lam0 = lam

    trace: list[IterationRecord] = []
    costs: list[float] = []
    accepted_steps = 0
    clamped_total = 0
    for it in range(problem.max_iterations):
        step = lm_step(state, lam, problem)
        lam_used = lam
        accept = problem.lm_policy == "unconditional" or step.actual_objective < objective
        if accept:
            state = _make_state(step.pose, step.inv_depth, corr, K, delta, robust)
            cost = _cost(state.E, state.valid, delta, robust)
            objective = _objective(state.E, state.valid, delta, robust)
            accepted_steps += 1
            clamped_total += step.clamped
            dropped += int(np.sum(~state.valid))
            if problem.lm_policy == "accept_reject":
                lam = max(lam / 2.0, lam_min)
        else:
            lam = min(lam * 4.0, lam_max)
        costs.append(cost)
        trace.append(IterationRecord(it, lam_used, cost, objective, bool(accept)))

    return BASolution(
        pose=state.pose,
        refined_inverse_depths=state.inv_depth,
        final_cost=cost,
        initial_cost=initial_cost,
        final_objective=objective,
        initial_objective=initial_objective,
        per_iteration_costs=costs,
        accepted_steps=accepted_steps,
        trace=trace,
        initial_lambda=lam0,
        clamped_depths=clamped_total,
        dropped_residuals=dropped,
    )
