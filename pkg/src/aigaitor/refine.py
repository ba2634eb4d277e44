"""Sequence-level 3D pose refinement against 2D observations.

Minimizes, over the full 3D joint trajectory P (shape T x J x 3):

    E(P) = sum_{t,j} w_{t,j} * || (project(P_{t,j}) - k2d_{t,j}) / fx ||^2
         + lambda_bone   * sum_{t,b} (||bone_b(t)|| - L_b)^2
         + lambda_smooth * sum_{t,j} || P_{t+1,j} - 2 P_{t,j} + P_{t-1,j} ||^2

where w is the 2D observation confidence, reprojection residuals are in
normalized image units (pixels divided by fx) so weights are resolution
independent, and L_b defaults to the per-bone median length of the initial
trajectory. Joints with zero confidence contribute only regularizer terms
and their depths are never validated, so fully occluded frames are handled.

The solver is deterministic first-order descent with per-coordinate
adaptive step scaling (momentum plus squared-gradient normalization) and
step-halving backoff on objective increase; identical inputs reproduce
results bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, OptimizationError, ProjectionError, ValidationError
from .skeleton import CameraModel, PoseSequence, validate

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8
_MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class RefineConfig:
    """Loss weights and stopping rules for refine_sequence.

    Stops at max_iters, when the relative objective decrease stays below
    rel_tol for `patience` consecutive iterations, or immediately once the
    gradient's largest component falls below grad_tol (the starts-at-minimum
    fast path).
    """

    lambda_bone: float = 1.0
    lambda_smooth: float = 0.1
    max_iters: int = 200
    step_size: float = 0.01
    rel_tol: float = 1e-6
    patience: int = 10
    grad_tol: float = 1e-4

    def __post_init__(self):
        if self.lambda_bone < 0 or self.lambda_smooth < 0:
            raise ConfigurationError("loss weights must be >= 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ConfigurationError("rel_tol must be > 0")
        if self.step_size <= 0:
            raise ConfigurationError("step_size must be > 0")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")

    @classmethod
    def from_json(cls, doc: dict) -> "RefineConfig":
        return cls(**doc)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RefineResult:
    refined: PoseSequence
    objective_trace: np.ndarray
    iterations_run: int
    converged: bool

    def trace_rows(self) -> list[tuple[int, float]]:
        """(iteration, objective) rows; row 0 is the initial objective."""
        return [(i, float(v)) for i, v in enumerate(self.objective_trace)]


def median_bone_lengths(coords: np.ndarray, bones) -> np.ndarray:
    """Per-bone median length over a (T, J, 3) trajectory; robust to outlier frames."""
    if len(bones) == 0:
        return np.zeros(0)
    idx_a = [a for a, _ in bones]
    idx_b = [b for _, b in bones]
    lengths = np.linalg.norm(coords[:, idx_a, :] - coords[:, idx_b, :], axis=2)
    return np.median(lengths, axis=0)


def _check_shapes(coords, obs):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[2] != 3:
        raise ConfigurationError(f"trajectory must be (T, J, 3), got {coords.shape}")
    if obs.dims != 2:
        raise ConfigurationError(f"observations must be 2D, got dims={obs.dims}")
    if coords.shape[:2] != obs.coords.shape[:2]:
        raise ConfigurationError(
            f"trajectory {coords.shape[:2]} and observations "
            f"{obs.coords.shape[:2]} disagree in frames/joints")
    return coords


def _reprojection_residuals(coords, obs, cam):
    """Normalized residuals r = (project(P) - k2d)/fx, zeroed where w = 0.

    Depth must be positive wherever confidence is nonzero.
    """
    w = obs.confidence
    observed = w > 0
    z = coords[:, :, 2]
    bad = (z <= 0) & observed
    if np.any(bad):
        t, j = (int(i) for i in np.argwhere(bad)[0])
        raise ProjectionError(f"non-positive depth z={z[t, j]} at frame {t}, joint {j}")
    safe_z = np.where(z > 0, z, 1.0)
    ru = coords[:, :, 0] / safe_z + (cam.cx - obs.coords[:, :, 0]) / cam.fx
    rv = (cam.fy / cam.fx) * coords[:, :, 1] / safe_z + (cam.cy - obs.coords[:, :, 1]) / cam.fx
    ru = np.where(observed, ru, 0.0)
    rv = np.where(observed, rv, 0.0)
    return ru, rv, safe_z


def objective(coords, obs: PoseSequence, cam: CameraModel, cfg: RefineConfig,
              bone_targets: np.ndarray | None = None) -> float:
    """Scalar refinement objective; see module docstring for the three terms."""
    coords = _check_shapes(coords, obs)
    ru, rv, _ = _reprojection_residuals(coords, obs, cam)
    total = float(np.sum(obs.confidence * (ru**2 + rv**2)))

    bones = obs.topology.bones
    if cfg.lambda_bone > 0 and bones:
        if bone_targets is None:
            bone_targets = median_bone_lengths(coords, bones)
        idx_a = [a for a, _ in bones]
        idx_b = [b for _, b in bones]
        lengths = np.linalg.norm(coords[:, idx_a, :] - coords[:, idx_b, :], axis=2)
        total += cfg.lambda_bone * float(np.sum((lengths - bone_targets) ** 2))

    if cfg.lambda_smooth > 0 and coords.shape[0] >= 3:
        second = coords[2:] - 2.0 * coords[1:-1] + coords[:-2]
        total += cfg.lambda_smooth * float(np.sum(second**2))
    return total


def gradient(coords, obs: PoseSequence, cam: CameraModel, cfg: RefineConfig,
             bone_targets: np.ndarray | None = None) -> np.ndarray:
    """Analytic dE/dP, same shape as the trajectory."""
    coords = _check_shapes(coords, obs)
    w = obs.confidence
    ru, rv, safe_z = _reprojection_residuals(coords, obs, cam)
    fr = cam.fy / cam.fx

    grad = np.zeros_like(coords)
    grad[:, :, 0] = 2.0 * w * ru / safe_z
    grad[:, :, 1] = 2.0 * w * rv * fr / safe_z
    grad[:, :, 2] = -2.0 * w * (ru * coords[:, :, 0] + rv * fr * coords[:, :, 1]) / safe_z**2

    bones = obs.topology.bones
    if cfg.lambda_bone > 0 and bones:
        if bone_targets is None:
            bone_targets = median_bone_lengths(coords, bones)
        for b, (a_j, b_j) in enumerate(bones):
            diff = coords[:, a_j, :] - coords[:, b_j, :]
            length = np.linalg.norm(diff, axis=1)
            # Zero-length bones get a zero subgradient.
            scale = np.where(length > 1e-12,
                             2.0 * cfg.lambda_bone * (length - bone_targets[b])
                             / np.where(length > 1e-12, length, 1.0),
                             0.0)
            contrib = scale[:, None] * diff
            grad[:, a_j, :] += contrib
            grad[:, b_j, :] -= contrib

    if cfg.lambda_smooth > 0 and coords.shape[0] >= 3:
        second = coords[2:] - 2.0 * coords[1:-1] + coords[:-2]
        s = 2.0 * cfg.lambda_smooth * second
        grad[:-2] += s
        grad[1:-1] -= 2.0 * s
        grad[2:] += s
    return grad


def check_gradient(coords, obs: PoseSequence, cam: CameraModel, cfg: RefineConfig,
                   bone_targets: np.ndarray | None = None, h: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Relative error uses denominator max(|analytic|, |numeric|, 1). Bone
    targets are frozen from the input trajectory so both sides differentiate
    the same function.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if bone_targets is None and cfg.lambda_bone > 0 and obs.topology.bones:
        bone_targets = median_bone_lengths(coords, obs.topology.bones)
    analytic = gradient(coords, obs, cam, cfg, bone_targets)
    numeric = np.zeros_like(analytic)
    flat = coords.copy().reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        e_plus = objective(flat.reshape(coords.shape), obs, cam, cfg, bone_targets)
        flat[i] = orig - h
        e_minus = objective(flat.reshape(coords.shape), obs, cam, cfg, bone_targets)
        flat[i] = orig
        num_flat[i] = (e_plus - e_minus) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def refine_sequence(initial: PoseSequence, obs: PoseSequence, cam: CameraModel,
                    cfg: RefineConfig | None = None) -> RefineResult:
    """Jointly refine a 3D trajectory against 2D observations.

    The objective trace is non-increasing across accepted iterations; a step
    is accepted only if it does not increase the objective, with step-halving
    backoff otherwise. If no step can be accepted even after backoff and a
    momentum reset, the optimization is declared divergent and an
    OptimizationError carrying the trace is raised.
    """
    cfg = cfg or RefineConfig()
    if initial.dims != 3:
        raise ConfigurationError(f"initial trajectory must be 3D, got dims={initial.dims}")
    for name, seq in (("initial", initial), ("observations", obs)):
        violations = validate(seq)
        if violations:
            raise ValidationError(
                f"{name} sequence invalid ({len(violations)} violations, "
                f"first: {violations[0]})", violations)
    if initial.n_frames != obs.n_frames:
        raise ConfigurationError(
            f"frame counts differ: initial {initial.n_frames}, observations {obs.n_frames}")
    if initial.fps != obs.fps:
        raise ConfigurationError(f"fps differ: initial {initial.fps}, observations {obs.fps}")

    coords = initial.coords.copy()
    targets = median_bone_lengths(coords, obs.topology.bones)
    current = objective(coords, obs, cam, cfg, targets)
    trace = [current]

    m = np.zeros_like(coords)
    v = np.zeros_like(coords)
    start_step = cfg.step_size
    stall = 0
    converged = False
    iterations = 0

    for it in range(1, cfg.max_iters + 1):
        grad = gradient(coords, obs, cam, cfg, targets)
        if float(np.max(np.abs(grad))) <= cfg.grad_tol:
            converged = True
            break

        m = _BETA1 * m + (1.0 - _BETA1) * grad
        v = _BETA2 * v + (1.0 - _BETA2) * grad**2
        m_hat = m / (1.0 - _BETA1**it)
        v_hat = v / (1.0 - _BETA2**it)
        direction = m_hat / (np.sqrt(v_hat) + _EPS)

        accepted, coords, current, used_step = _backtrack(
            coords, direction, start_step, current, obs, cam, cfg, targets)
        if not accepted:
            # Momentum may point uphill after a sharp turn; retry along the
            # raw gradient with reset state before declaring divergence.
            m[:] = 0.0
            v[:] = 0.0
            scale = float(np.max(np.abs(grad)))
            accepted, coords, current, used_step = _backtrack(
                coords, grad / scale, cfg.step_size, current, obs, cam, cfg, targets)
        if not accepted:
            raise OptimizationError(
                f"divergence at iteration {it}: objective increases along every "
                f"trial step after {_MAX_BACKTRACKS} halvings", trace)

        start_step = min(cfg.step_size, used_step * 2.0)
        previous = trace[-1]
        trace.append(current)
        iterations = it
        rel_decrease = (previous - current) / max(previous, 1e-300)
        stall = stall + 1 if rel_decrease < cfg.rel_tol else 0
        if stall >= cfg.patience:
            converged = True
            break

    refined = initial.with_coords(coords)
    return RefineResult(refined=refined, objective_trace=np.array(trace),
                        iterations_run=iterations, converged=converged)


def _backtrack(coords, direction, step, current, obs, cam, cfg, targets):
    """Halve the step until the objective stops increasing; returns acceptance."""
    for _ in range(_MAX_BACKTRACKS):
        trial = coords - step * direction
        try:
            value = objective(trial, obs, cam, cfg, targets)
        except ProjectionError:
            value = np.inf
        if value <= current:
            return True, trial, value, step
        step *= 0.5
    return False, coords, current, step


def load_config(path) -> RefineConfig:
    with open(path) as fh:
        return RefineConfig.from_json(json.load(fh))
