"""Noise-level schedules and RePaint step sequences.

The schedule is the clock of every sampler: ``levels[i]`` is the
noise-to-signal ratio at integer time index ``i``, decreasing from
``levels[n_steps] == sigma_max`` down to ``levels[0] == 0`` at the clean
terminal point.  Finite level differences stand in for the continuous-time
rate, so a reverse step from index ``i`` moves to ``i - 1`` and a forward
(renoising) step moves to ``i + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ScheduleOrderError

REVERSE = "reverse"
FORWARD = "forward"


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete noise levels plus the per-step signal scale.

    ``levels`` has ``n_steps + 1`` entries, strictly increasing with the
    index, with ``levels[0] == 0``.  ``scale`` is pinned to 1 everywhere in
    the variance-exploding convention used throughout; it is kept as a field
    so checkpoints stay explicit about the convention they were run under.
    """

    levels: np.ndarray
    scale: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "levels", levels)
        if levels.ndim != 1 or levels.size < 2:
            raise ParameterError("schedule needs at least two levels")
        if levels[0] != 0.0:
            raise ParameterError("levels[0] must be exactly 0")
        if np.any(np.diff(levels) <= 0):
            raise ParameterError("levels must increase strictly with the index")
        scale = self.scale
        if scale is None:
            scale = np.ones_like(levels)
        scale = np.asarray(scale, dtype=float)
        if scale.shape != levels.shape or np.any(scale <= 0):
            raise ParameterError("scale must be positive and match levels")
        object.__setattr__(self, "scale", scale)
        levels.setflags(write=False)
        scale.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.levels.size - 1

    @property
    def sigma_max(self) -> float:
        return float(self.levels[-1])

    def to_list(self) -> list[float]:
        """Explicit level list for bit-exact replay from a config file."""
        return [float(s) for s in self.levels]


def make_schedule(
    n_steps: int,
    sigma_min: float,
    sigma_max: float,
    rho: float = 7.0,
) -> NoiseSchedule:
    """Power-law noise schedule between ``sigma_min`` and ``sigma_max``.

    Interior levels interpolate linearly in sigma**(1/rho):

        levels[i] = (smin**(1/rho) + (i-1)/(n-1) * (smax**(1/rho) - smin**(1/rho)))**rho

    for i = 1..n, with ``levels[0] = 0`` so the final reverse step lands on
    the clean signal.  With ``n_steps == 1`` the single positive level is
    ``sigma_max``.
    """
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    if not (0 < sigma_min < sigma_max):
        raise ParameterError(
            f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )
    if rho <= 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    if n_steps == 1:
        return NoiseSchedule(levels=np.array([0.0, float(sigma_max)]))
    lo = sigma_min ** (1.0 / rho)
    hi = sigma_max ** (1.0 / rho)
    fracs = np.arange(n_steps) / (n_steps - 1)
    levels = np.concatenate([[0.0], (lo + fracs * (hi - lo)) ** rho])
    # Pin the endpoints exactly; the power round trip can wobble in the lsb.
    levels[1] = sigma_min
    levels[-1] = sigma_max
    return NoiseSchedule(levels=levels)


def sigma_langevin(eta: float, sigma_t: float, sigma_prev: float) -> float:
    """Stochastic-mixing coefficient for one step from sigma_t down to sigma_prev.

        eta * sqrt(sigma_t**-2 + 1) * sqrt(1 - (sigma_prev**2 + 1) / (sigma_t**2 + 1))

    which algebraically equals ``eta * sqrt(1 - (sigma_prev / sigma_t)**2)``
    and therefore always lies in [0, eta].  ``eta = 0`` disables the
    stochastic component entirely.
    """
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if sigma_t <= 0:
        raise ParameterError(f"sigma_t must be positive, got {sigma_t}")
    if sigma_prev < 0:
        raise ParameterError(f"sigma_prev must be nonnegative, got {sigma_prev}")
    if sigma_prev >= sigma_t:
        raise ScheduleOrderError(
            f"sigma_prev must be below sigma_t, got {sigma_prev} >= {sigma_t}"
        )
    if eta == 0.0:
        return 0.0
    inflate = math.sqrt(sigma_t**-2 + 1.0)
    mix = math.sqrt(max(1.0 - (sigma_prev**2 + 1.0) / (sigma_t**2 + 1.0), 0.0))
    # The two factors cancel to eta * sqrt(1 - (sigma_prev/sigma_t)^2) <= eta
    # exactly; clamp the roundoff so downstream sqrt(1 - sl^2) stays real.
    return min(eta * inflate * mix, eta)


@dataclass(frozen=True)
class RePaintSchedule:
    """Ordered (direction, index) steps interleaving reverse and forward moves.

    Each entry is the direction taken *from* the given index: a reverse step
    moves ``i -> i - 1`` and a forward step ``i -> i + 1``.  Replaying the
    directions from ``reverse_steps`` always terminates at index 0.
    """

    steps: tuple[tuple[str, int], ...]
    reverse_steps: int
    jump_interval: int
    jump_len: int
    jump_repeat: int

    def __post_init__(self):
        idx = self.reverse_steps
        for direction, i in self.steps:
            if i != idx:
                raise ParameterError(f"step index {i} breaks the walk at {idx}")
            if direction == REVERSE:
                idx -= 1
            elif direction == FORWARD:
                idx += 1
            else:
                raise ParameterError(f"unknown direction {direction!r}")
            if not 0 <= idx <= self.reverse_steps:
                raise ParameterError("schedule leaves the index range")
        if idx != 0:
            raise ParameterError(f"schedule terminates at index {idx}, not 0")

    @property
    def n_reverse(self) -> int:
        return sum(1 for d, _ in self.steps if d == REVERSE)

    @property
    def n_forward(self) -> int:
        return sum(1 for d, _ in self.steps if d == FORWARD)


def build_repaint_schedule(
    reverse_steps: int,
    jump_interval: int = 1,
    jump_len: int = 1,
    jump_repeat: int = 0,
) -> RePaintSchedule:
    """Reverse walk from ``reverse_steps`` down to 0 with renoising jumps.

    After every ``jump_interval`` net reverse steps (and while not yet at the
    terminal index), ``jump_repeat`` cycles of ``jump_len`` forward steps
    followed by ``jump_len`` reverse steps are inserted.  Forward excursions
    are clipped at the top index so the walk never leaves ``[0, reverse_steps]``.
    """
    if reverse_steps < 1:
        raise ParameterError(f"reverse_steps must be >= 1, got {reverse_steps}")
    if jump_interval < 1 or jump_len < 1 or jump_repeat < 0:
        raise ParameterError(
            "need jump_interval >= 1, jump_len >= 1, jump_repeat >= 0"
        )
    steps: list[tuple[str, int]] = []
    idx = reverse_steps
    net = 0
    while idx > 0:
        steps.append((REVERSE, idx))
        idx -= 1
        net += 1
        if idx > 0 and jump_repeat > 0 and net % jump_interval == 0:
            length = min(jump_len, reverse_steps - idx)
            for _ in range(jump_repeat):
                for _ in range(length):
                    steps.append((FORWARD, idx))
                    idx += 1
                for _ in range(length):
                    steps.append((REVERSE, idx))
                    idx -= 1
    return RePaintSchedule(
        steps=tuple(steps),
        reverse_steps=reverse_steps,
        jump_interval=jump_interval,
        jump_len=jump_len,
        jump_repeat=jump_repeat,
    )


def plain_reverse_schedule(n_steps: int) -> RePaintSchedule:
    """Pure reverse walk: ``build_repaint_schedule(n_steps)`` without jumps."""
    return build_repaint_schedule(n_steps, jump_interval=1, jump_len=1, jump_repeat=0)
