"""Mode-seeking baselines: gradient ascent on the pulled-back score.

Both estimators ascend the smoothed log density through the transpose-only
(covector) pullback.  The noise-reconstruction form weights the draw by
w(t) and uses the noise predictor; the score-chaining form queries the
score directly.  With w(t) = sigma(t) the two coincide draw for draw, which
is exactly why gradient ascent cannot tell them apart while the pulled-back
flow can.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffrep import DiffRep, View
from .errors import DivergenceError, ParameterError
from .optim import Adam
from .score import cfg_combine, eps_from_score
from .schedule import NoiseSchedule


@dataclass
class GAConfig:
    """Gradient-ascent run settings."""

    iterations: int = 1000
    weighting: str = "sigma"  # "sigma" (w = sigma) or "unit"
    t_rule: str = "annealed"  # "annealed" (linear in sigma) or "uniform"
    sigma_start: float | None = None  # annealed rule; defaults to schedule top
    sigma_end: float | None = None  # annealed rule; defaults to schedule bottom
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    cfg_scale: float = 1.0
    conditioning: str | None = None
    view_batch: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.weighting not in ("sigma", "unit"):
            raise ParameterError(f"unknown weighting {self.weighting!r}")
        if self.t_rule not in ("annealed", "uniform"):
            raise ParameterError(f"unknown t_rule {self.t_rule!r}")


def _draw(rep: DiffRep, theta, view: View, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    eps = rng.standard_normal(rep.output_dim)
    x = rep.render(theta, view) + sigma * eps
    return x, eps


def sds_gradient(
    rep: DiffRep,
    theta: np.ndarray,
    score_model,
    sigma: float,
    rng: np.random.Generator,
    view: View | None = None,
    weight: float | None = None,
    conditioning: str | None = None,
    cfg_scale: float = 1.0,
) -> np.ndarray:
    """Single-draw noise-reconstruction gradient ``w * J^T (eps_hat - eps)``.

    The subtracted injected noise has zero mean, so it acts purely as a
    variance reducer; descending this estimate ascends the smoothed log
    density toward a mode.  ``weight`` defaults to sigma.
    """
    if view is None:
        view = rep.lattice.full_view()
    w = sigma if weight is None else weight
    x, eps = _draw(rep, theta, view, sigma, rng)
    eps_hat = score_model.eps_hat(x, sigma, conditioning, cfg_scale)
    return w * rep.vjp(theta, view, eps_hat - eps)


def sjc_gradient(
    rep: DiffRep,
    theta: np.ndarray,
    score_model,
    sigma: float,
    rng: np.random.Generator,
    view: View | None = None,
    weight: float | None = None,
    conditioning: str | None = None,
    cfg_scale: float = 1.0,
) -> np.ndarray:
    """Score-chaining twin of :func:`sds_gradient`, queried through the score.

    Uses ``-sigma * score`` in place of the noise predictor, with the same
    variance-reduction term; given the same (eps, view) draw and weight it
    equals the noise-reconstruction estimate whenever the model's score and
    noise estimate are exactly related by the Tweedie conversion.
    """
    if view is None:
        view = rep.lattice.full_view()
    w = sigma if weight is None else weight
    x, eps = _draw(rep, theta, view, sigma, rng)
    score = score_model.score(x, sigma, conditioning)
    if cfg_scale != 1.0:
        score_uncond = score_model.score(x, sigma, None)
        score = cfg_combine(score_uncond, score, cfg_scale)
    return w * rep.vjp(theta, view, eps_from_score(score, sigma) - eps)


@dataclass
class GAResult:
    theta: np.ndarray
    grad_norms: np.ndarray
    sigmas: np.ndarray
    records: list[dict]


def run_gradient_ascent(
    rep: DiffRep,
    view_dist,
    score_model,
    schedule: NoiseSchedule,
    config: GAConfig,
    rng: np.random.Generator,
    theta_init: np.ndarray | None = None,
    method: str = "sds",
    seed_label: int | None = None,
) -> GAResult:
    """Follow the mode-seeking gradient to a critical point.

    Sigma per iteration comes from the configured rule: "uniform" draws from
    the schedule's positive levels, "annealed" sweeps linearly from
    sigma_start down to sigma_end.  The update is Adam on the estimator
    (descending it ascends the smoothed log density).
    """
    estimator = {"sds": sds_gradient, "sjc": sjc_gradient}.get(method)
    if estimator is None:
        raise ParameterError(f"unknown method {method!r}")
    theta = (
        np.asarray(theta_init, dtype=float).copy()
        if theta_init is not None
        else np.zeros(rep.param_dim)
    )
    lo = config.sigma_end if config.sigma_end is not None else float(schedule.levels[1])
    hi = config.sigma_start if config.sigma_start is not None else schedule.sigma_max
    adam = Adam(rep.param_dim, beta1=config.beta1, beta2=config.beta2)
    grad_norms = np.empty(config.iterations)
    sigmas = np.empty(config.iterations)
    records = []
    for t in range(config.iterations):
        if config.t_rule == "uniform":
            sigma = float(rng.choice(schedule.levels[1:]))
        else:
            frac = t / max(config.iterations - 1, 1)
            sigma = hi + frac * (lo - hi)
        weight = sigma if config.weighting == "sigma" else 1.0
        grad = np.zeros(rep.param_dim)
        for view in view_dist.sample(config.view_batch, rng):
            grad += estimator(
                rep, theta, score_model, sigma, rng,
                view=view, weight=weight,
                conditioning=config.conditioning, cfg_scale=config.cfg_scale,
            ) / config.view_batch
        theta = adam.step(theta, grad, config.step_size)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"non-finite parameters at iteration {t}")
        gnorm = float(np.linalg.norm(grad))
        grad_norms[t] = gnorm
        sigmas[t] = sigma
        records.append(
            {
                "seed": seed_label,
                "step": t,
                "sigma": sigma,
                "direction": "ascent",
                "residual": gnorm,
                "nfe": t + 1,
            }
        )
    return GAResult(theta=theta, grad_norms=grad_norms, sigmas=sigmas, records=records)
