"""Score functions and noise predictors.

Closed-form Gaussian-mixture densities stand in for a learned noise
predictor: convolving a mixture with N(0, sigma^2 I) keeps it a mixture, so
the smoothed score is exact at every noise level.  Score and noise estimate
are interchangeable through ``eps = -sigma * score``.  A remote HTTP client
speaks the same contract so a served predictor can be plugged in unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

import numpy as np
import requests
from scipy.special import logsumexp

from .errors import (
    ModelError,
    ParameterError,
    RemoteProtocolError,
    RemoteShapeError,
    RemoteTransportError,
)

UNCOND = "uncond"


@dataclass(frozen=True)
class GaussianMixtureDensity:
    """Mixture of axis-aligned Gaussians; closed under Gaussian smoothing.

    ``variances`` holds the diagonal of each component covariance, so the
    density smoothed to noise level sigma has component covariances
    ``variances + sigma**2``.
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if weights.size == 0:
            raise ModelError("mixture needs at least one component")
        if np.any(weights < 0):
            raise ModelError("mixture weights must be nonnegative")
        total = weights.sum()
        if not np.isclose(total, 1.0, atol=1e-8):
            raise ModelError(f"mixture weights must sum to 1, got {total}")
        weights = weights / total
        if means.shape[0] != weights.size or variances.shape != means.shape:
            raise ModelError("weights, means and variances disagree in shape")
        if np.any(variances <= 0):
            raise ModelError("component variances must be positive")
        for name, arr in (("weights", weights), ("means", means), ("variances", variances)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"non-finite entries in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def component(self, k: int) -> "GaussianMixtureDensity":
        """Single-component mixture, e.g. as a conditional sub-density."""
        return GaussianMixtureDensity(
            weights=np.ones(1), means=self.means[k : k + 1], variances=self.variances[k : k + 1]
        )

    def _component_logpdfs(self, x: np.ndarray, sigma: float) -> np.ndarray:
        # x: (B, d) -> (B, K)
        var = self.variances + sigma**2  # (K, d)
        diff = x[:, None, :] - self.means[None, :, :]  # (B, K, d)
        quad = np.sum(diff**2 / var[None], axis=2)
        log_norm = 0.5 * np.sum(np.log(2.0 * np.pi * var), axis=1)  # (K,)
        return np.log(self.weights)[None, :] - log_norm[None, :] - 0.5 * quad

    def log_density(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """log of the sigma-smoothed density; batch-aware over leading axis."""
        x, squeeze = _as_batch(x, self.dim)
        out = logsumexp(self._component_logpdfs(x, _check_sigma(sigma)), axis=1)
        return out[0] if squeeze else out

    def score(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Exact gradient of ``log_density`` in x, log-sum-exp stabilized."""
        x, squeeze = _as_batch(x, self.dim)
        logp = self._component_logpdfs(x, _check_sigma(sigma))  # (B, K)
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        var = self.variances + sigma**2
        pull = (self.means[None, :, :] - x[:, None, :]) / var[None]  # (B, K, d)
        out = np.sum(resp[:, :, None] * pull, axis=1)
        return out[0] if squeeze else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws from the clean (sigma = 0) mixture."""
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comps] + z * np.sqrt(self.variances[comps])


def _check_sigma(sigma: float) -> float:
    if sigma < 0:
        raise ParameterError(f"sigma must be nonnegative, got {sigma}")
    return float(sigma)


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != dim:
            raise ParameterError(f"point has dim {x.size}, model expects {dim}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise ParameterError(f"bad point shape {x.shape} for dim {dim}")


def gmm_score(model: GaussianMixtureDensity, x: np.ndarray, sigma: float) -> np.ndarray:
    return model.score(x, sigma)


def gmm_log_density(model: GaussianMixtureDensity, x: np.ndarray, sigma: float) -> np.ndarray:
    return model.log_density(x, sigma)


def eps_from_score(score: np.ndarray, sigma: float) -> np.ndarray:
    """Noise estimate from a score: ``eps = -sigma * score``."""
    return -_check_sigma(sigma) * np.asarray(score, dtype=float)


def score_from_eps(eps: np.ndarray, sigma: float) -> np.ndarray:
    """Exact inverse of :func:`eps_from_score`; needs sigma > 0."""
    if sigma <= 0:
        raise ParameterError(f"score_from_eps needs sigma > 0, got {sigma}")
    return -np.asarray(eps, dtype=float) / sigma


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, cfg_scale: float) -> np.ndarray:
    """Classifier-free guidance: ``eps_u + w * (eps_c - eps_u)``."""
    eps_uncond = np.asarray(eps_uncond, dtype=float)
    eps_cond = np.asarray(eps_cond, dtype=float)
    if eps_uncond.shape != eps_cond.shape:
        raise ParameterError(
            f"operand shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    return eps_uncond + cfg_scale * (eps_cond - eps_uncond)


class ScoreModel(Protocol):
    """Anything exposing a score and a noise estimate at a given level."""

    dim: int

    def score(self, x, sigma, conditioning=None): ...

    def eps_hat(self, x, sigma, conditioning=None, cfg_scale=1.0): ...


class AnalyticScoreModel:
    """Score model backed by named closed-form mixtures.

    Conditioning labels select a registered density ("uncond" plus any
    conditionals, typically mixture subsets), which gives classifier-free
    guidance exact analytic semantics.  View tags are accepted wherever a
    label is and ignored; their interpretation is left to served models.
    """

    def __init__(self, densities: Mapping[str, GaussianMixtureDensity]):
        if UNCOND not in densities:
            raise ModelError(f"densities must include the {UNCOND!r} label")
        dims = {d.dim for d in densities.values()}
        if len(dims) != 1:
            raise ModelError(f"densities disagree on dimension: {sorted(dims)}")
        self.densities = dict(densities)
        self.dim = dims.pop()

    def density(self, conditioning: str | None) -> GaussianMixtureDensity:
        label = UNCOND if conditioning is None else conditioning
        try:
            return self.densities[label]
        except KeyError:
            raise ModelError(f"no density registered under label {label!r}") from None

    def score(self, x, sigma, conditioning=None):
        return self.density(conditioning).score(x, sigma)

    def eps_hat(self, x, sigma, conditioning=None, cfg_scale=1.0):
        eps_cond = eps_from_score(self.score(x, sigma, conditioning), sigma)
        if cfg_scale == 1.0:
            return eps_cond
        eps_uncond = eps_from_score(self.score(x, sigma, None), sigma)
        return cfg_combine(eps_uncond, eps_cond, cfg_scale)


class RemoteScoreModel:
    """Client for the JSON-over-HTTP noise-predictor protocol.

    POST ``{endpoint}/v1/eps_hat`` with ``{"x": [[f64; d]; b], "sigma": f64,
    "conditioning": str, "cfg_scale": f64}`` and expect ``{"eps_hat":
    [[f64; d]; b]}`` back.  One connection per request, no caching; any
    failure raises a distinct error so the sampler can abort the run.
    """

    def __init__(self, endpoint: str, dim: int, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.dim = dim
        self.timeout = timeout

    def eps_hat(self, x, sigma, conditioning=None, cfg_scale=1.0):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        batch = x[None, :] if squeeze else x
        body = {
            "x": batch.tolist(),
            "sigma": float(sigma),
            "conditioning": UNCOND if conditioning is None else str(conditioning),
            "cfg_scale": float(cfg_scale),
        }
        url = f"{self.endpoint}/v1/eps_hat"
        try:
            resp = requests.post(url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise RemoteTransportError(f"cannot reach {url}: {exc}") from exc
        if resp.status_code != 200:
            detail = ""
            try:
                detail = resp.json().get("error", "")
            except ValueError:
                pass
            raise RemoteProtocolError(
                f"{url} answered {resp.status_code}: {detail or resp.text[:200]}"
            )
        try:
            payload = resp.json()
            eps = np.asarray(payload["eps_hat"], dtype=float)
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteProtocolError(f"malformed response from {url}: {exc}") from exc
        if eps.shape != batch.shape:
            raise RemoteShapeError(
                f"{url} returned shape {eps.shape}, expected {batch.shape}"
            )
        return eps[0] if squeeze else eps

    def score(self, x, sigma, conditioning=None):
        return score_from_eps(self.eps_hat(x, sigma, conditioning), sigma)
