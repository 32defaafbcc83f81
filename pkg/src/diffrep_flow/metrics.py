"""Desk-scale quantitative evaluation of sample batches.

Distributional distance (unbiased squared MMD with a Gaussian kernel plus a
permutation test), mode-coverage counting, norm concentration statistics,
and view-consistency residuals on overlapping windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffrep import DiffRep, View, shared_sites
from .errors import ParameterError


@dataclass(frozen=True)
class SampleBatch:
    """n samples of dimension d plus provenance for reporting."""

    samples: np.ndarray  # (n, d)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if not np.all(np.isfinite(samples)):
            raise ParameterError("sample batch must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = np.sum(a * a, axis=1)[:, None]
    bn = np.sum(b * b, axis=1)[None, :]
    return np.maximum(an + bn - 2.0 * (a @ b.T), 0.0)


def median_bandwidth(a: np.ndarray, b: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples; the default kernel width."""
    pooled = np.vstack([a, b])
    d2 = _pairwise_sq_dists(pooled, pooled)
    off_diag = d2[np.triu_indices_from(d2, k=1)]
    med = float(np.sqrt(np.median(off_diag)))
    return med if med > 0 else 1.0


def _mmd_arrays(a: np.ndarray, b: np.ndarray, bandwidth: float) -> float:
    gamma = 1.0 / (2.0 * bandwidth**2)
    k_aa = np.exp(-gamma * _pairwise_sq_dists(a, a))
    k_bb = np.exp(-gamma * _pairwise_sq_dists(b, b))
    k_ab = np.exp(-gamma * _pairwise_sq_dists(a, b))
    n, m = a.shape[0], b.shape[0]
    term_aa = (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
    term_bb = (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
    return float(term_aa + term_bb - 2.0 * k_ab.mean())


def mmd(batch_a: SampleBatch, batch_b: SampleBatch, bandwidth: float | None = None) -> float:
    """Unbiased squared MMD with a Gaussian kernel.

    Symmetric in its arguments; identical batches give a value within
    estimator noise of zero (slightly negative values are possible by
    design of the unbiased estimator).
    """
    a, b = batch_a.samples, batch_b.samples
    if a.shape[1] != b.shape[1]:
        raise ParameterError(f"dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ParameterError("mmd needs at least two samples per batch")
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    return _mmd_arrays(a, b, bandwidth)


@dataclass
class MMDTestResult:
    statistic: float
    p_value: float
    bandwidth: float
    n_permutations: int


def mmd_permutation_test(
    batch_a: SampleBatch,
    batch_b: SampleBatch,
    bandwidth: float | None = None,
    n_permutations: int = 200,
    rng: np.random.Generator | None = None,
) -> MMDTestResult:
    """Two-sample permutation test on the MMD statistic."""
    a, b = batch_a.samples, batch_b.samples
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    stat = mmd(batch_a, batch_b, bandwidth)
    rng = np.random.default_rng(0) if rng is None else rng
    pooled = np.vstack([a, b])
    n = a.shape[0]
    exceed = 0
    for _ in range(n_permutations):
        perm = rng.permutation(pooled.shape[0])
        pa, pb = pooled[perm[:n]], pooled[perm[n:]]
        if _mmd_arrays(pa, pb, bandwidth) >= stat:
            exceed += 1
    p = (exceed + 1) / (n_permutations + 1)
    return MMDTestResult(statistic=stat, p_value=p, bandwidth=bandwidth, n_permutations=n_permutations)


@dataclass
class ModeCoverage:
    counts: np.ndarray  # per-mode hit counts
    unassigned: int
    radius: float

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.unassigned


def default_mode_radius(means: np.ndarray) -> float:
    """Quarter of the minimum inter-mean distance."""
    means = np.atleast_2d(means)
    if means.shape[0] < 2:
        raise ParameterError("need at least two means for a default radius")
    d2 = _pairwise_sq_dists(means, means)
    np.fill_diagonal(d2, np.inf)
    return 0.25 * float(np.sqrt(d2.min()))


def mode_coverage(
    batch: SampleBatch, means: np.ndarray, radius: float | None = None
) -> ModeCoverage:
    """Assign samples to the nearest mean within radius; count the rest apart."""
    if batch.n < 1:
        raise ParameterError("empty batch")
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if radius is None:
        radius = default_mode_radius(means)
    if radius <= 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    dists = np.sqrt(_pairwise_sq_dists(batch.samples, means))
    nearest = np.argmin(dists, axis=1)
    within = dists[np.arange(batch.n), nearest] <= radius
    counts = np.bincount(nearest[within], minlength=means.shape[0])
    return ModeCoverage(counts=counts, unassigned=int((~within).sum()), radius=float(radius))


def shell_stats(batch: SampleBatch) -> tuple[float, float]:
    """Sample mean and standard deviation of the Euclidean norms."""
    norms = np.linalg.norm(batch.samples, axis=1)
    std = float(norms.std(ddof=1)) if batch.n > 1 else 0.0
    return float(norms.mean()), std


def mean_pairwise_distance(batch: SampleBatch) -> float:
    """Mean distance over unordered sample pairs; the diversity statistic."""
    if batch.n < 2:
        raise ParameterError("need at least two samples for pairwise distances")
    d2 = _pairwise_sq_dists(batch.samples, batch.samples)
    return float(np.mean(np.sqrt(d2[np.triu_indices_from(d2, k=1)])))


def view_consistency_residual(rep: DiffRep, theta, view_pairs) -> float:
    """Mean squared render discrepancy on overlapping sites; zero for a diffrep.

    Shared parameters make any diffrep exactly consistent, so this is the
    reference point for :func:`stack_consistency_residual` on per-view
    sample stacks that do not go through a shared representation.
    """
    stacks = [
        (rep.render(theta, va), va, rep.render(theta, vb), vb) for va, vb in view_pairs
    ]
    return stack_consistency_residual(stacks, channels=rep.lattice.channels)


def stack_consistency_residual(stacks, channels: int = 1) -> float:
    """Mean squared discrepancy across (image_a, view_a, image_b, view_b) pairs.

    Images are flat per-view render vectors; discrepancies are measured on
    the lattice sites the paired views share.
    """
    residuals = []
    for img_a, view_a, img_b, view_b in stacks:
        pos_a, pos_b = shared_sites(view_a, view_b, channels)
        if pos_a.size == 0:
            raise ParameterError("paired views share no lattice sites")
        diff = np.asarray(img_a)[pos_a] - np.asarray(img_b)[pos_b]
        residuals.append(float(np.mean(diff**2)))
    if not residuals:
        raise ParameterError("no view pairs given")
    return float(np.mean(residuals))


def span_residual(basis: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Norms of the components of each vector outside span(basis).

    ``vectors`` is (n, m) or (m,); returns one residual norm per vector.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    vecs = np.atleast_2d(np.asarray(vectors, dtype=float))
    coef, *_ = np.linalg.lstsq(basis, vecs.T, rcond=None)
    resid = vecs.T - basis @ coef
    return np.linalg.norm(resid, axis=0)
