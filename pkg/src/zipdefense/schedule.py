"""Variance schedules and timestep subsequences for the reverse process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha / cumulative-alpha tables for steps 1..T.

    Arrays are stored zero-based (``beta[t - 1]`` is the value at step t);
    use the accessor methods to index by timestep. The cumulative product
    at t = 0 is defined as 1.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.beta, self.alpha, self.alpha_bar):
            arr.setflags(write=False)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        t = int(t)
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check(t) - 1])

    def abar(self, t: int) -> float:
        """Cumulative signal retention at step t, with ``abar(0) == 1``."""
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated betas from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError("betas must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")
    T = int(T)
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = beta_start + np.arange(T, dtype=np.float64) / (T - 1) * (beta_end - beta_start)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def sigma_ddpm(s: NoiseSchedule, t: int) -> float:
    """Standard deviation of the ancestral DDPM step from t to t-1."""
    ab_t = s.abar(t)
    ab_prev = s.abar(t - 1)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * s.beta_at(t)
    return float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class TimestepPath:
    """Strictly decreasing visit order T, T-S, ..., 1 used by the sampler."""

    steps: tuple[int, ...]

    def __post_init__(self):
        if not self.steps or self.steps[-1] != 1:
            raise ValueError("timestep path must end at 1")
        if any(a <= b for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("timestep path must be strictly decreasing")

    def prev(self, t: int) -> int:
        """Successor of ``t`` in the descent; 0 after the final step."""
        i = self.steps.index(t)
        return self.steps[i + 1] if i + 1 < len(self.steps) else 0

    def pairs(self) -> list[tuple[int, int]]:
        return [(t, self.prev(t)) for t in self.steps]

    def __iter__(self):
        return iter(self.steps)

    def __len__(self) -> int:
        return len(self.steps)


def make_timestep_path(s: NoiseSchedule, S: int) -> TimestepPath:
    """Descending stride-``S`` path from T, with 1 appended if absent.

    >>> make_timestep_path(make_linear_schedule(10), 3).steps
    (10, 7, 4, 1)
    """
    if int(S) != S or not 1 <= S <= s.T:
        raise ValueError(f"pace S must satisfy 1 <= S <= T={s.T}, got {S}")
    steps = list(range(s.T, 0, -int(S)))
    if steps[-1] != 1:
        steps.append(1)
    return TimestepPath(tuple(steps))
