"""Sampling engines.

``pf_ode_sample_x`` integrates the reverse-time probability-flow ODE in
sample space with Euler steps and is the oracle every pulled-back run is
checked against.  ``pullback_sample`` runs the full parameter-space engine:
separated noise (the diffrep renders only the noiseless part, a persistent
per-site noise field carries the rest), DDIM reverse steps with tunable
per-step stochasticity, RePaint forward steps for constraint harmonization,
and the per-step least-squares suboptimization that replaces the explicit
Jacobian pullback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffrep import DiffRep, NoiseField, init_params
from .errors import DivergenceError, ParameterError, ScheduleOrderError
from .pullback import PullbackStepProblem, SolverConfig, solve_delta_theta
from .schedule import FORWARD, REVERSE, NoiseSchedule, RePaintSchedule, sigma_langevin


@dataclass
class SamplerConfig:
    """Knobs of one sampling run; all randomness flows from the caller's rng."""

    eta: float = 0.75
    cfg_scale: float = 1.0
    conditioning: str | None = None
    view_batch: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if self.view_batch < 1:
            raise ParameterError(f"view_batch must be >= 1, got {self.view_batch}")


@dataclass
class TrajectoryState:
    """Mutable state of one trajectory; owned by a single logical writer."""

    step_index: int
    nfe: int = 0
    x: np.ndarray | None = None
    theta: np.ndarray | None = None
    noise: NoiseField | None = None


@dataclass
class XPathResult:
    x0: np.ndarray
    nfe: int
    path: list[np.ndarray] | None = None


def pf_ode_sample_x(
    score_model,
    schedule: NoiseSchedule,
    x_init: np.ndarray,
    conditioning: str | None = None,
    cfg_scale: float = 1.0,
    keep_path: bool = False,
) -> XPathResult:
    """Euler integration of the reverse probability-flow ODE in sample space.

    In noise-predictor form the ODE reads dx/dsigma = eps_hat(x, sigma), so
    each step moves by the level difference times the current noise estimate.
    Deterministic given ``x_init``; callers draw ``x_init ~ N(0, sigma_max^2 I)``.
    Batches integrate in parallel along the leading axis.
    """
    x = np.asarray(x_init, dtype=float).copy()
    levels = schedule.levels
    nfe = 0
    path = [x.copy()] if keep_path else None
    for i in range(schedule.n_steps, 0, -1):
        eps = score_model.eps_hat(x, levels[i], conditioning, cfg_scale)
        nfe += 1
        x = x + (levels[i - 1] - levels[i]) * eps
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step index {i - 1}")
        if keep_path:
            path.append(x.copy())
    return XPathResult(x0=x, nfe=nfe, path=path)


def ddim_reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    sigma_t: float,
    sigma_prev: float,
    sigma_langevin: float,
    noise_draw: np.ndarray,
) -> np.ndarray:
    """One stochastic DDIM reverse update from sigma_t down to sigma_prev.

        x_t - sigma_t * eps_hat + sqrt(1 - sl^2) * sigma_prev * eps_hat
            + sigma_prev * noise_draw

    ``noise_draw`` is the Langevin draw, i.e. standard normal already scaled
    by ``sigma_langevin``.  With ``sigma_langevin = 0`` this is deterministic
    DDIM: denoise to the signal estimate, renoise along the same direction.
    """
    if sigma_prev >= sigma_t:
        raise ScheduleOrderError(
            f"sigma_prev must be below sigma_t, got {sigma_prev} >= {sigma_t}"
        )
    if not 0.0 <= sigma_langevin <= 1.0:
        raise ParameterError(f"sigma_langevin must lie in [0, 1], got {sigma_langevin}")
    keep = np.sqrt(1.0 - sigma_langevin**2)
    return x_t - sigma_t * eps_hat + keep * sigma_prev * eps_hat + sigma_prev * noise_draw


def ddim_forward_step(
    x0_tilde: np.ndarray,
    eps0_tilde: np.ndarray,
    sigma_t: float,
    sigma_prev: float,
    tau: float,
    s_t: float = 1.0,
    noise_draw: np.ndarray | None = None,
) -> np.ndarray:
    """Non-Markovian forward (renoising) update from sigma_prev up to sigma_t.

        s_t * x0 + (sigma_t / sigma_prev) * (sqrt(sigma_prev^2 - tau^2) * eps0
                                             + tau * noise_draw)

    ``tau`` in [0, sigma_prev] interpolates between reusing the old noise
    direction (tau = 0) and drawing it fresh (tau = sigma_prev); the
    perturbation-kernel marginal N(s_t x0, sigma_t^2 I) is preserved either
    way.  ``noise_draw`` is standard normal (unscaled).
    """
    if sigma_prev <= 0:
        raise ParameterError(f"sigma_prev must be positive, got {sigma_prev}")
    if not 0.0 <= tau <= sigma_prev:
        raise ParameterError(f"tau must lie in [0, sigma_prev], got {tau}")
    x0_tilde = np.asarray(x0_tilde, dtype=float)
    eps0_tilde = np.asarray(eps0_tilde, dtype=float)
    mixed = np.sqrt(sigma_prev**2 - tau**2) * eps0_tilde
    if tau > 0.0:
        if noise_draw is None:
            raise ParameterError("tau > 0 needs a fresh noise_draw")
        mixed = mixed + tau * np.asarray(noise_draw, dtype=float)
    return s_t * x0_tilde + (sigma_t / sigma_prev) * mixed


def ddim_sample_x(
    score_model,
    schedule: NoiseSchedule,
    x_init: np.ndarray,
    eta: float,
    rng: np.random.Generator,
    conditioning: str | None = None,
    cfg_scale: float = 1.0,
    keep_path: bool = False,
) -> XPathResult:
    """Stochastic DDIM walk in sample space over the full schedule."""
    x = np.asarray(x_init, dtype=float).copy()
    levels = schedule.levels
    nfe = 0
    path = [x.copy()] if keep_path else None
    for i in range(schedule.n_steps, 0, -1):
        sig_t, sig_prev = levels[i], levels[i - 1]
        sl = sigma_langevin(eta, sig_t, sig_prev) if eta > 0 else 0.0
        eps = score_model.eps_hat(x, sig_t, conditioning, cfg_scale)
        nfe += 1
        draw = sl * rng.standard_normal(x.shape) if sl > 0 else np.zeros_like(x)
        x = ddim_reverse_step(x, eps, sig_t, sig_prev, sl, draw)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step index {i - 1}")
        if keep_path:
            path.append(x.copy())
    return XPathResult(x0=x, nfe=nfe, path=path)


@dataclass
class PullbackSampleResult:
    theta: np.ndarray
    noise: NoiseField
    nfe: int
    records: list[dict]


def pullback_sample(
    rep: DiffRep,
    view_dist,
    score_model,
    schedule: NoiseSchedule,
    repaint: RePaintSchedule,
    config: SamplerConfig,
    rng: np.random.Generator,
    theta_init: np.ndarray | None = None,
    noise_init: NoiseField | None = None,
    seed_label: int | None = None,
    on_step=None,
) -> PullbackSampleResult:
    """Run the pulled-back reverse process over a RePaint step sequence.

    Per entry: compute the stochastic mixing level, sample a view batch,
    assemble the noisy state ``f(theta, pi) + sigma * eps(pi)``, take the
    reverse (noise-predictor) or forward (renoising) branch, refresh the
    noise field on the rendered sites, then pull the resulting signal target
    back into parameter space with the per-step suboptimizer.  Forward
    entries never evaluate the noise predictor, so the NFE count equals the
    number of reverse entries.

    ``on_step(record, f_targets)`` is called after each entry with the trace
    record and the per-view signal-space targets, for diagnostics such as
    range-constraint residuals.
    """
    if repaint.reverse_steps != schedule.n_steps:
        raise ParameterError(
            f"repaint walk over {repaint.reverse_steps} steps does not match "
            f"schedule with {schedule.n_steps}"
        )
    levels = schedule.levels
    theta = (
        np.asarray(theta_init, dtype=float).copy()
        if theta_init is not None
        else init_params(rep, view_dist, rng=rng)
    )
    noise = noise_init.copy() if noise_init is not None else NoiseField.sample(rep.lattice, rng)
    nfe = 0
    records: list[dict] = []

    for step_no, (direction, i) in enumerate(repaint.steps):
        if direction == REVERSE:
            sigma_cur, sigma_next = float(levels[i]), float(levels[i - 1])
            sig_hi, sig_lo = sigma_cur, sigma_next
        else:
            sigma_cur, sigma_next = float(levels[i]), float(levels[i + 1])
            sig_lo, sig_hi = sigma_cur, sigma_next
        sl = sigma_langevin(config.eta, sig_hi, sig_lo) if config.eta > 0 else 0.0
        keep = np.sqrt(1.0 - sl**2)

        views = view_dist.sample(config.view_batch, rng)
        # One fresh standard-normal value per lattice slot per entry, shared
        # by every view in the batch so overlapping windows stay consistent.
        fresh = rng.standard_normal(rep.lattice.size)

        renders = [rep.render(theta, v) for v in views]
        eps_views = [noise.extract(v) for v in views]
        slot_sets = [rep.lattice.flat_slots(v.point_ids) for v in views]

        if direction == REVERSE:
            x_batch = np.stack([r + sigma_cur * e for r, e in zip(renders, eps_views)])
            eps_hat = score_model.eps_hat(
                x_batch, sigma_cur, config.conditioning, config.cfg_scale
            )
            nfe += 1
            x_next = [
                ddim_reverse_step(
                    x_batch[j], eps_hat[j], sigma_cur, sigma_next, sl, sl * fresh[slot_sets[j]]
                )
                for j in range(len(views))
            ]
        else:
            x_next = [
                r + sig_hi * (keep * e + sl * fresh[slots])
                for r, e, slots in zip(renders, eps_views, slot_sets)
            ]

        # Noise update precedes the parameter update; only rendered sites move.
        all_points = np.concatenate([v.point_ids for v in views])
        noise.mix(all_points, keep, sl * fresh)

        f_targets = [
            xn - sigma_next * noise.extract(v) for xn, v in zip(x_next, views)
        ]
        targets = [r - ft for r, ft in zip(renders, f_targets)]
        # Forward-branch targets cancel algebraically; skip the solver on fp dust.
        target_size = max(float(np.max(np.abs(t))) for t in targets)
        if target_size < 1e-13:
            residual = 0.0
            solver_iters = 0
        else:
            result = solve_delta_theta(
                PullbackStepProblem(
                    theta=theta, views=views, targets=targets, config=config.solver
                ),
                rep,
            )
            theta = theta - result.delta_theta
            residual = result.final_residual
            solver_iters = result.iterations_run

        record = {
            "seed": seed_label,
            "step": step_no,
            "index": i,
            "sigma": sigma_cur,
            "direction": direction,
            "residual": residual,
            "solver_iterations": solver_iters,
            "nfe": nfe,
        }
        records.append(record)
        if on_step is not None:
            on_step(record, f_targets)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"non-finite parameters at step {step_no}")

    return PullbackSampleResult(theta=theta, noise=noise, nfe=nfe, records=records)
