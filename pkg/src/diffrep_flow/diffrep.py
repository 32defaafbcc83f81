"""Differentiable representations: render maps, Jacobian products, views.

A diffrep renders a parameter vector into a flat image vector for a given
view.  Every rep owns a global coordinate lattice; views select lattice
points, so per-view noise can be stored once per site and stay consistent
across overlapping views.  Jacobian-vector and vector-Jacobian products are
hand-derived for all built-in reps; finite differences appear only as test
oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .optim import Adam


@dataclass(frozen=True)
class Lattice:
    """Global coordinate lattice: one row of coordinates per point.

    ``grid_shape`` is I/O metadata (renders travel as flat vectors), and
    ``channels`` is the number of scalar slots per point, so the flat value
    vector has ``n_points * channels`` entries in point-major order.
    """

    coords: np.ndarray  # (n_points, coord_dim)
    grid_shape: tuple[int, ...]
    channels: int = 1

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "grid_shape", tuple(self.grid_shape))
        if int(np.prod(self.grid_shape)) != coords.shape[0]:
            raise ParameterError("grid_shape does not match the number of points")
        if self.channels < 1:
            raise ParameterError("channels must be >= 1")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def size(self) -> int:
        return self.n_points * self.channels

    def flat_slots(self, point_ids: np.ndarray) -> np.ndarray:
        """Value-vector indices covered by the given lattice points."""
        point_ids = np.asarray(point_ids, dtype=np.int64)
        offsets = np.arange(self.channels, dtype=np.int64)
        return (point_ids[:, None] * self.channels + offsets[None, :]).ravel()

    def full_view(self, tag: str = "") -> "View":
        ids = np.arange(self.n_points, dtype=np.int64)
        return View(point_ids=ids, coords=self.coords, tag=tag)


@dataclass(frozen=True)
class View:
    """Selection of lattice points a render covers, with their coordinates."""

    point_ids: np.ndarray  # (n_view,) lattice point indices
    coords: np.ndarray  # (n_view, coord_dim)
    tag: str = ""

    def __post_init__(self):
        ids = np.asarray(self.point_ids, dtype=np.int64)
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if coords.shape[0] != ids.size:
            raise ParameterError("view coords and point_ids disagree in length")
        ids.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "point_ids", ids)
        object.__setattr__(self, "coords", coords)

    @property
    def n_points(self) -> int:
        return self.point_ids.size


def shared_sites(view_a: View, view_b: View, channels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Positions (into each view's render vector) of lattice points both cover."""
    _, ia, ib = np.intersect1d(view_a.point_ids, view_b.point_ids, return_indices=True)
    offsets = np.arange(channels, dtype=np.int64)
    pos_a = (ia[:, None] * channels + offsets[None, :]).ravel()
    pos_b = (ib[:, None] * channels + offsets[None, :]).ravel()
    return pos_a, pos_b


@dataclass
class NoiseField:
    """Persistent per-site noise on a lattice; one standard-normal value per slot."""

    lattice: Lattice
    values: np.ndarray  # (lattice.size,)

    @classmethod
    def sample(cls, lattice: Lattice, rng: np.random.Generator) -> "NoiseField":
        return cls(lattice=lattice, values=rng.standard_normal(lattice.size))

    def extract(self, view: View) -> np.ndarray:
        """Read the noise the view renders; no mutation, shared sites alias."""
        return self.values[self.lattice.flat_slots(view.point_ids)]

    def mix(self, point_ids: np.ndarray, keep: float, fresh: np.ndarray) -> None:
        """In-place update ``eps <- keep * eps + fresh`` on the given points.

        ``fresh`` is a full-lattice vector (already scaled), so overlapping
        views applied in one batch see identical new values per site.
        """
        slots = self.lattice.flat_slots(np.unique(np.asarray(point_ids)))
        self.values[slots] = keep * self.values[slots] + fresh[slots]

    def copy(self) -> "NoiseField":
        return NoiseField(lattice=self.lattice, values=self.values.copy())


def extract_noise(field: NoiseField, view: View) -> np.ndarray:
    return field.extract(view)


class DiffRep:
    """Base contract: deterministic render, exact jvp/vjp, a global lattice."""

    lattice: Lattice
    param_dim: int
    view_points: int  # lattice points per rendered view
    linear_in_params = False

    @property
    def output_dim(self) -> int:
        return self.view_points * self.lattice.channels

    def render(self, theta: np.ndarray, view: View) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, theta: np.ndarray, view: View, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, theta: np.ndarray, view: View, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def random_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.param_dim)

    def default_view_distribution(self) -> "SingletonViewDistribution":
        return SingletonViewDistribution(self.lattice)

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise ParameterError(
                f"theta has shape {theta.shape}, expected ({self.param_dim},)"
            )
        return theta

    def _check_image(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.output_dim,):
            raise ParameterError(
                f"image vector has shape {w.shape}, expected ({self.output_dim},)"
            )
        return w


class LinearRep(DiffRep):
    """Render is a fixed matrix applied to the parameters: f(theta) = A theta."""

    linear_in_params = True

    def __init__(self, matrix: np.ndarray):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if not np.all(np.isfinite(matrix)):
            raise ParameterError("render matrix must be finite")
        self.matrix = matrix
        m = matrix.shape[0]
        coords = (np.arange(m, dtype=float) / m)[:, None]
        self.lattice = Lattice(coords=coords, grid_shape=(m,), channels=1)
        self.param_dim = matrix.shape[1]
        self.view_points = m

    def render(self, theta, view):
        return self.matrix @ self._check_theta(theta)

    def jvp(self, theta, view, v):
        return self.matrix @ self._check_theta(v)

    def vjp(self, theta, view, w):
        return self.matrix.T @ self._check_image(w)


def identity_rep(dim: int) -> LinearRep:
    return LinearRep(np.eye(dim))


def fourier_basis(n_points: int, n_modes: int) -> np.ndarray:
    """Real low-frequency Fourier columns on x_j = j/n: DC, cos1, sin1, cos2, ...

    The DC column is all ones, so a single retained mode renders a constant.
    """
    if not 1 <= n_modes <= n_points:
        raise ParameterError(f"need 1 <= n_modes <= {n_points}, got {n_modes}")
    x = np.arange(n_points, dtype=float) / n_points
    cols = [np.ones(n_points)]
    freq = 1
    while len(cols) < n_modes:
        cols.append(np.cos(2.0 * np.pi * freq * x))
        if len(cols) < n_modes:
            cols.append(np.sin(2.0 * np.pi * freq * x))
        freq += 1
    return np.stack(cols, axis=1)


class LowPassRep(LinearRep):
    """Band-limited rep: parameters are coefficients of retained Fourier modes."""

    def __init__(self, n_points: int, n_modes: int):
        super().__init__(fourier_basis(n_points, n_modes))
        self.n_modes = n_modes

    @property
    def basis(self) -> np.ndarray:
        return self.matrix


class SirenRep(DiffRep):
    """Sinusoidal MLP field sampled on a grid lattice.

    Coordinates pass through a fixed Fourier embedding
    ``[sin(2 pi c F), cos(2 pi c F)]`` and then trainable dense layers with
    sin activations and a linear readout.  When the x-row of ``F`` is integer
    valued the field is exactly 1-periodic in x, which makes wrap-around
    (torus) windows continuous across the seam for every theta.
    """

    def __init__(
        self,
        lattice: Lattice,
        frequencies: np.ndarray,
        hidden: tuple[int, ...] = (32, 32),
        window_cols: int | None = None,
    ):
        self.lattice = lattice
        self.frequencies = np.asarray(frequencies, dtype=float)  # (coord_dim, K)
        if self.frequencies.shape[0] != lattice.coords.shape[1]:
            raise ParameterError("frequency matrix does not match coordinate dim")
        self.hidden = tuple(int(h) for h in hidden)
        self.window_cols = window_cols
        if window_cols is None:
            self.view_points = lattice.n_points
        else:
            rows, cols = lattice.grid_shape
            if not 1 <= window_cols <= cols:
                raise ParameterError(f"window_cols must lie in [1, {cols}]")
            self.view_points = rows * window_cols
        embed_dim = 2 * self.frequencies.shape[1]
        sizes = (embed_dim, *self.hidden, lattice.channels)
        self._shapes: list[tuple[tuple[int, int], int]] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self._shapes.append(((fan_out, fan_in), fan_out))
        self.param_dim = sum(w[0] * w[1] + b for w, b in self._shapes)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def grid(
        cls,
        rows: int,
        cols: int,
        n_freq: int = 16,
        hidden: tuple[int, ...] = (32, 32),
        channels: int = 1,
        freq_scale: float = 3.0,
        seed: int = 0,
    ) -> "SirenRep":
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, freq_scale, size=(2, n_freq))
        return cls(_grid_lattice(rows, cols, channels), freqs, hidden)

    @classmethod
    def panorama(
        cls,
        rows: int,
        cols: int,
        window_cols: int,
        n_freq: int = 16,
        hidden: tuple[int, ...] = (32, 32),
        channels: int = 1,
        y_freq_scale: float = 1.5,
        seed: int = 0,
    ) -> "SirenRep":
        rng = np.random.default_rng(seed)
        freqs = np.empty((2, n_freq))
        # Integer azimuth frequencies keep the field exactly 1-periodic in x.
        freqs[0] = 1.0 + np.arange(n_freq) % max(1, min(n_freq, cols // 2))
        freqs[1] = rng.normal(0.0, y_freq_scale, size=n_freq)
        return cls(_grid_lattice(rows, cols, channels), freqs, hidden, window_cols)

    def default_view_distribution(self):
        if self.window_cols is None:
            return SingletonViewDistribution(self.lattice)
        return PanoramaViewDistribution(self.lattice, self.window_cols)

    # -- parameter packing ----------------------------------------------------

    def _unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = []
        pos = 0
        for (fan_out, fan_in), _ in self._shapes:
            w = theta[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = theta[pos : pos + fan_out]
            pos += fan_out
            layers.append((w, b))
        return layers

    def _pack(self, layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def random_params(self, rng: np.random.Generator) -> np.ndarray:
        layers = []
        for (fan_out, fan_in), _ in self._shapes:
            bound = np.sqrt(6.0 / fan_in)
            layers.append(
                (
                    rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                    rng.uniform(-bound, bound, size=fan_out),
                )
            )
        return self._pack(layers)

    # -- field evaluation -----------------------------------------------------

    def _embed(self, coords: np.ndarray) -> np.ndarray:
        angles = 2.0 * np.pi * coords @ self.frequencies
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    def field(self, theta: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """Evaluate the continuous field at arbitrary coordinates, (n, channels)."""
        theta = self._check_theta(theta)
        layers = self._unpack(theta)
        h = self._embed(np.atleast_2d(np.asarray(coords, dtype=float)))
        for w, b in layers[:-1]:
            h = np.sin(h @ w.T + b)
        w_out, b_out = layers[-1]
        return h @ w_out.T + b_out

    def render(self, theta, view):
        return self.field(theta, view.coords).ravel()

    def jvp(self, theta, view, v):
        theta = self._check_theta(theta)
        v = self._check_theta(v)
        layers = self._unpack(theta)
        dlayers = self._unpack(v)
        h = self._embed(view.coords)
        dh = np.zeros_like(h)
        for (w, b), (dw, db) in zip(layers[:-1], dlayers[:-1]):
            z = h @ w.T + b
            dz = dh @ w.T + h @ dw.T + db
            h = np.sin(z)
            dh = np.cos(z) * dz
        (w_out, _), (dw_out, db_out) = layers[-1], dlayers[-1]
        dy = dh @ w_out.T + h @ dw_out.T + db_out
        return dy.ravel()

    def vjp(self, theta, view, w):
        theta = self._check_theta(theta)
        w = self._check_image(w)
        layers = self._unpack(theta)
        hs = [self._embed(view.coords)]
        zs = []
        h = hs[0]
        for wl, bl in layers[:-1]:
            z = h @ wl.T + bl
            zs.append(z)
            h = np.sin(z)
            hs.append(h)
        w_mat = w.reshape(-1, self.lattice.channels)
        grads: list[tuple[np.ndarray, np.ndarray]] = []
        w_out, _ = layers[-1]
        grads.append((w_mat.T @ hs[-1], w_mat.sum(axis=0)))
        g = w_mat @ w_out
        for (wl, _), z, h_in in zip(reversed(layers[:-1]), reversed(zs), reversed(hs[:-1])):
            d = g * np.cos(z)
            grads.append((d.T @ h_in, d.sum(axis=0)))
            g = d @ wl
        return self._pack(list(reversed(grads)))


def _grid_lattice(rows: int, cols: int, channels: int) -> Lattice:
    if rows < 1 or cols < 1:
        raise ParameterError("grid needs rows >= 1 and cols >= 1")
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    x = (jj.ravel() + 0.5) / cols
    y = (ii.ravel() + 0.5) / rows
    return Lattice(coords=np.stack([x, y], axis=1), grid_shape=(rows, cols), channels=channels)


class SingletonViewDistribution:
    """Degenerate view distribution: every sample is the full-lattice view."""

    def __init__(self, lattice: Lattice):
        self.lattice = lattice
        self.view = lattice.full_view()

    def sample(self, n: int, rng: np.random.Generator) -> list[View]:
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        return [self.view] * n

    def pair_with_offset(self, r: float, delta: float) -> tuple[View, View]:
        raise ParameterError("singleton views do not overlap partially")


class PanoramaViewDistribution:
    """Windows of consecutive columns with origin r ~ U(0, 1), wrapping mod 1.

    A window starting at azimuth fraction r covers ``window_cols`` columns
    beginning at column floor(r * cols); coordinates are read from the global
    lattice so the wrap is continuous and overlapping windows share sites.
    """

    def __init__(self, lattice: Lattice, window_cols: int):
        rows, cols = lattice.grid_shape
        if not 1 <= window_cols <= cols:
            raise ParameterError(f"window_cols must lie in [1, {cols}]")
        self.lattice = lattice
        self.rows = rows
        self.cols = cols
        self.window_cols = window_cols

    def view_at(self, r: float) -> View:
        start = int(np.floor((r % 1.0) * self.cols)) % self.cols
        col_ids = (start + np.arange(self.window_cols)) % self.cols
        point_ids = (np.arange(self.rows)[:, None] * self.cols + col_ids[None, :]).ravel()
        return View(
            point_ids=point_ids,
            coords=self.lattice.coords[point_ids],
            tag=f"window[{start}]",
        )

    def sample(self, n: int, rng: np.random.Generator) -> list[View]:
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        return [self.view_at(r) for r in rng.uniform(size=n)]


def sample_views(view_dist, n: int, rng: np.random.Generator) -> list[View]:
    return view_dist.sample(n, rng)


def init_params(
    rep: DiffRep,
    view_dist,
    opt_budget: int = 500,
    threshold: float = 1e-2,
    rng: np.random.Generator | None = None,
    view_batch: int = 4,
    step_size: float = 1e-2,
) -> np.ndarray:
    """Zero-render initialization: drive the mean render amplitude below threshold.

    Linear-in-theta reps return exactly zero.  Otherwise Adam minimizes the
    mean squared render over sampled views until the RMS amplitude falls
    below ``threshold``; on budget exhaustion the best iterate is returned
    with a warning.
    """
    if rep.linear_in_params:
        return np.zeros(rep.param_dim)
    rng = np.random.default_rng(0) if rng is None else rng
    theta = rep.random_params(rng)
    adam = Adam(rep.param_dim)
    best = theta.copy()
    best_rms = np.inf
    m = rep.output_dim
    for _ in range(opt_budget):
        views = view_dist.sample(view_batch, rng)
        renders = [rep.render(theta, v) for v in views]
        rms = np.sqrt(np.mean([np.mean(r**2) for r in renders]))
        if rms < best_rms:
            best_rms = rms
            best = theta.copy()
        if rms <= threshold:
            return theta
        grad = np.zeros(rep.param_dim)
        for v, r in zip(views, renders):
            grad += rep.vjp(theta, v, 2.0 * r / m) / len(views)
        theta = adam.step(theta, grad, step_size)
    warnings.warn(
        f"init_params exhausted budget {opt_budget} with RMS {best_rms:.3e} "
        f"above threshold {threshold:.3e}; returning best iterate",
        stacklevel=2,
    )
    return best
