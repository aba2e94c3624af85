"""Gaussian annealing of the occupancy gradient along the state axis."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnnealingSchedule:
    sigma0: float = 30.0
    rate: float = 0.9
    interval: int = 1000
    sigma_min: float = 1e-3

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if not 0 < self.rate < 1:
            raise ValueError("rate must lie in (0, 1)")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be positive")


def schedule_sigma(step: int, schedule: AnnealingSchedule) -> float:
    """Width after ``step`` training steps: geometric decay every ``interval`` steps."""
    n_updates = step // schedule.interval
    # rate**n underflows long before it matters
    sigma = schedule.sigma0 * schedule.rate ** min(n_updates, 100_000)
    return max(schedule.sigma_min, sigma)


def gaussian_filter(sigma: float, radius: int, normalize: bool = True) -> np.ndarray:
    """Weights ``exp(-j^2 / (2 sigma^2))`` for offsets ``j = -radius..radius``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    if normalize:
        w /= w.sum()
    return w


def filter_radius(sigma: float, n_states: int) -> int:
    return int(min(max(math.ceil(4.0 * sigma), 1), max(n_states - 1, 1)))


def anneal_occupancy(gamma: np.ndarray, sigma: float, normalize: bool = True) -> np.ndarray:
    """Convolve every frame's occupancy with a Gaussian over states.

    The convolution is zero-padded at both ends of the state axis. With
    ``normalize`` the filter is unit-sum and each row is rescaled back to
    sum 1; otherwise the raw kernel is applied and rows are left as is.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    n_states = gamma.shape[1]
    if n_states == 1:
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        return gamma.copy()
    radius = filter_radius(sigma, n_states)
    w = gaussian_filter(sigma, radius, normalize=normalize)
    # banded Toeplitz operator: out[:, j] = sum_i gamma[:, i] * w[j - i + radius]
    idx = np.arange(n_states)
    offset = idx[None, :] - idx[:, None]
    band = np.abs(offset) <= radius
    op = np.zeros((n_states, n_states))
    op[band] = w[offset[band] + radius]
    out = gamma @ op
    if normalize:
        sums = out.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("occupancy row has zero mass after convolution")
        out = out / sums
    return out
