"""Pulling back image-space increments to parameter space.

The exact route solves the least-squares problem ``argmin_u ||J u - v||``
with minimum-norm tie-breaking (desk-scale oracle, explicit Jacobian).  The
scalable route replaces it with a per-step suboptimization over the render
map itself: find the parameter increment whose render change matches a
target image increment across a batch of views.  The transpose-only maps
used by the gradient-ascent baselines live here too, since they are the
deliberately incomplete pullback this package contrasts against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffrep import DiffRep, View
from .errors import ParameterError, SolverDivergenceError
from .optim import Adam, cosine_lr

ORACLE_LIMIT = 512


def exact_pullback(jacobian: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares pullback of the image increment ``v``.

    Equals ``(J^T J)^{-1} J^T v`` when the Jacobian has full column rank and
    resolves rank deficiency by minimum-norm tie-breaking.  Oracle scale
    only: both dimensions must be <= 512.
    """
    jacobian = np.atleast_2d(np.asarray(jacobian, dtype=float))
    v = np.asarray(v, dtype=float)
    m, p = jacobian.shape
    if m > ORACLE_LIMIT or p > ORACLE_LIMIT:
        raise ParameterError(f"oracle limited to {ORACLE_LIMIT}, got {jacobian.shape}")
    if not np.all(np.isfinite(jacobian)):
        raise ParameterError("Jacobian must be finite")
    if v.shape != (m,):
        raise ParameterError(f"target has shape {v.shape}, expected ({m},)")
    return np.linalg.lstsq(jacobian, v, rcond=None)[0]


def sjc_pullback(jacobian: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Transpose-only (covector) pullback ``J^T v``; the baseline shortcut."""
    return np.asarray(jacobian, dtype=float).T @ np.asarray(v, dtype=float)


def scaled_sjc_pullback(jacobian: np.ndarray, v: np.ndarray, lam: float) -> np.ndarray:
    return lam * sjc_pullback(jacobian, v)


def materialize_jacobian(
    rep: DiffRep, theta: np.ndarray, views: View | list[View]
) -> np.ndarray:
    """Explicit Jacobian built column by column from jvps against basis vectors.

    Views stack along rows.  Oracle scale only (dims <= 512 each).
    """
    if isinstance(views, View):
        views = [views]
    m = rep.output_dim * len(views)
    p = rep.param_dim
    if m > ORACLE_LIMIT or p > ORACLE_LIMIT:
        raise ParameterError(f"oracle limited to {ORACLE_LIMIT}, got ({m}, {p})")
    jac = np.empty((m, p))
    basis = np.zeros(p)
    for j in range(p):
        basis[j] = 1.0
        jac[:, j] = np.concatenate([rep.jvp(theta, v, basis) for v in views])
        basis[j] = 0.0
    return jac


@dataclass
class SolverConfig:
    """Budget and step sizes for the per-step suboptimization.

    The step size applies to the increment measured in units of the target
    RMS, so it is scale-free; beta2 = 0.95 lets the second moment track the
    shrinking gradients closely enough to settle on quadratics within the
    default budget.
    """

    iterations: int = 200
    step_size: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.95
    rel_tol: float = 1e-10
    objective_floor: float = 1e-26
    lr_floor_frac: float = 0.0


@dataclass
class PullbackStepProblem:
    """One sampler step: match per-view render increments to targets.

    ``targets[j]`` is the image increment the render must lose from view
    ``views[j]``, i.e. the solver seeks ``delta`` with
    ``f(theta, pi_j) - f(theta - delta, pi_j) ~= targets[j]``.
    """

    theta: np.ndarray
    views: list[View]
    targets: list[np.ndarray]
    config: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if len(self.views) < 1 or len(self.views) != len(self.targets):
            raise ParameterError("need one target per view, at least one view")
        self.targets = [np.asarray(t, dtype=float) for t in self.targets]
        for t in self.targets:
            if not np.all(np.isfinite(t)):
                raise ParameterError("targets must be finite")


@dataclass
class SolverResult:
    delta_theta: np.ndarray
    objective_trace: np.ndarray
    final_residual: float
    converged: bool
    iterations_run: int


def solve_delta_theta(problem: PullbackStepProblem, rep: DiffRep) -> SolverResult:
    """Adam on the empirical multiview objective, zero-initialized.

    Minimizes ``mean_j ||f(theta, pi_j) - f(theta - delta, pi_j) - d_j||^2``.
    The increment is optimized in units of the target RMS so the base step
    size is scale-free, and the learning rate follows a cosine decay so the
    iterate settles instead of hovering.  Stops on the configured relative
    objective decrease, on an exactly representable target (objective under
    the floor), or on budget exhaustion; returns the best iterate seen.
    """
    cfg = problem.config
    theta = np.asarray(problem.theta, dtype=float)
    base = [rep.render(theta, v) for v in problem.views]
    n_views = len(problem.views)
    # Residuals are measured in target-RMS units and the increment in units
    # of the Cauchy-point norm: both gradients and the optimum stay O(1) at
    # any physical scale, so Adam's eps floor never swallows the signal.
    image_scale = float(np.sqrt(np.mean([np.mean(d**2) for d in problem.targets])))
    if image_scale == 0.0 or not np.isfinite(image_scale):
        image_scale = 1.0
    targets = [d / image_scale for d in problem.targets]
    param_scale = _cauchy_scale(rep, theta, problem.views, problem.targets)
    if param_scale == 0.0 or not np.isfinite(param_scale):
        param_scale = image_scale

    adam = Adam(rep.param_dim, beta1=cfg.beta1, beta2=cfg.beta2)
    u = np.zeros(rep.param_dim)
    best_u = u.copy()
    best_obj = np.inf
    trace = []
    prev_obj = np.inf
    plateau = 0
    converged = False

    for t in range(cfg.iterations):
        obj = 0.0
        grad = np.zeros(rep.param_dim)
        shifted = theta - param_scale * u
        for view, ref, target in zip(problem.views, base, targets):
            residual = (ref - rep.render(shifted, view)) / image_scale - target
            obj += float(residual @ residual)
            grad += rep.vjp(shifted, view, residual)
        obj /= n_views
        grad *= 2.0 * param_scale / (image_scale * n_views)
        trace.append(obj * image_scale**2)
        if not np.isfinite(obj):
            raise SolverDivergenceError(
                f"objective became non-finite after {t} iterations", iterations_run=t
            )
        if obj < best_obj:
            best_obj = obj
            best_u = u.copy()
        if obj <= cfg.objective_floor:
            converged = True
            break
        # Adam oscillates through flat spots, so a plateau only counts after
        # a streak of tiny monotone decreases in the decayed phase.
        if 0.0 <= prev_obj - obj < cfg.rel_tol * prev_obj:
            plateau += 1
        else:
            plateau = 0
        if plateau >= 5 and t > 0.75 * cfg.iterations:
            converged = True
            break
        prev_obj = obj
        u = adam.step(u, grad, cosine_lr(cfg.step_size, t, cfg.iterations, cfg.lr_floor_frac))

    final = image_scale * np.sqrt(best_obj) if np.isfinite(best_obj) else float("inf")
    return SolverResult(
        delta_theta=param_scale * best_u,
        objective_trace=np.asarray(trace),
        final_residual=float(final),
        converged=converged,
        iterations_run=len(trace),
    )


def _cauchy_scale(rep: DiffRep, theta, views, targets) -> float:
    """Norm of the Cauchy point of the linearized problem; ~ the optimum's size."""
    g = np.zeros(rep.param_dim)
    for view, d in zip(views, targets):
        g += rep.vjp(theta, view, d) / len(views)
    gnorm2 = float(g @ g)
    if gnorm2 == 0.0:
        return 0.0
    jg2 = 0.0
    for view in views:
        jgv = rep.jvp(theta, view, g)
        jg2 += float(jgv @ jgv) / len(views)
    if jg2 == 0.0:
        return 0.0
    return gnorm2 * np.sqrt(gnorm2) / jg2
