"""Dynamic programming over monotonic left-to-right no-skip paths.

Paths start at ``(0, 0)``, end at ``(T-1, K-1)`` and advance at most one
state per frame. States are 0-based throughout. All recursions run in
float64 with a large negative sentinel in place of ``-inf``; values handed
back to callers use real ``-inf``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

NEG = -1e30
_NEG_CUTOFF = -1e29

# brute-force enumeration guard
MAX_ORACLE_FRAMES = 12
MAX_ORACLE_STATES = 6


class InfeasibleLatticeError(ValueError):
    """No monotonic path connects the first and last lattice cells."""


@dataclass
class ForwardLattice:
    alpha: np.ndarray
    log_z: float


@dataclass
class AlignmentPath:
    """Best path: ``states[t]`` is the 0-based state at frame ``t``."""

    states: np.ndarray
    log_score: float


def _prepare(lattice) -> np.ndarray:
    lb = np.asarray(lattice, dtype=np.float64)
    if lb.ndim != 2:
        raise ValueError("lattice must be a 2-D (T, K) array")
    n_frames, n_states = lb.shape
    if n_states < 1 or n_frames < n_states:
        raise InfeasibleLatticeError(f"no feasible path: T={n_frames} < K={n_states}")
    return np.where(np.isneginf(lb), NEG, lb)


def band_mask(n_frames: int, n_states: int) -> np.ndarray:
    """Cells lying on at least one complete path."""
    t = np.arange(n_frames)[:, None]
    k = np.arange(n_states)[None, :]
    return (k <= t) & (k >= n_states - n_frames + t)


def _expose(a: np.ndarray) -> np.ndarray:
    return np.where(a < _NEG_CUTOFF, -np.inf, a)


def _forward(lb: np.ndarray) -> np.ndarray:
    n_frames, n_states = lb.shape
    alpha = np.full((n_frames, n_states), NEG)
    alpha[0, 0] = lb[0, 0]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        alpha[t, 0] = prev[0] + lb[t, 0]
        alpha[t, 1:] = np.logaddexp(prev[1:], prev[:-1]) + lb[t, 1:]
    return alpha


def _backward(lb: np.ndarray) -> np.ndarray:
    n_frames, n_states = lb.shape
    beta = np.full((n_frames, n_states), NEG)
    beta[-1, -1] = 0.0
    for t in range(n_frames - 2, -1, -1):
        nxt = lb[t + 1] + beta[t + 1]
        beta[t, -1] = nxt[-1]
        beta[t, :-1] = np.logaddexp(nxt[:-1], nxt[1:])
    return beta


def forward_sum(lattice) -> tuple[float, ForwardLattice]:
    """Forward-sum loss ``-log sum_paths prod_t b(t, s_t)`` and the forward table."""
    lb = _prepare(lattice)
    alpha = _forward(lb)
    alpha[~band_mask(*lb.shape)] = NEG
    alpha = _expose(alpha)
    log_z = float(alpha[-1, -1])
    return -log_z, ForwardLattice(alpha, log_z)


def backward(lattice) -> np.ndarray:
    """Backward table; ``beta[t, k]`` scores all completions from cell ``(t, k)``."""
    lb = _prepare(lattice)
    beta = _backward(lb)
    beta[~band_mask(*lb.shape)] = NEG
    return _expose(beta)


def occupancy(fwd: ForwardLattice, beta: np.ndarray) -> np.ndarray:
    """State occupancy ``gamma(t, k)``, the posterior of passing cell ``(t, k)``."""
    if fwd.alpha.shape != beta.shape:
        raise ValueError(f"shape mismatch: {fwd.alpha.shape} vs {beta.shape}")
    if not np.isfinite(fwd.log_z):
        raise InfeasibleLatticeError("zero-probability lattice")
    with np.errstate(invalid="ignore"):
        gamma = np.exp(fwd.alpha + beta - fwd.log_z)
    return np.nan_to_num(gamma, nan=0.0)


def forward_backward(lattice) -> tuple[float, np.ndarray]:
    """Loss and occupancy in one call."""
    loss, fwd = forward_sum(lattice)
    return loss, occupancy(fwd, backward(lattice))


def viterbi(lattice) -> AlignmentPath:
    """Most likely monotonic path; ties prefer staying in the current state."""
    lb = _prepare(lattice)
    n_frames, n_states = lb.shape
    delta = np.full((n_frames, n_states), NEG)
    advanced = np.zeros((n_frames, n_states), dtype=bool)
    delta[0, 0] = lb[0, 0]
    for t in range(1, n_frames):
        prev = delta[t - 1]
        adv = np.zeros(n_states, dtype=bool)
        adv[1:] = prev[:-1] > prev[1:]
        best = prev.copy()
        best[1:] = np.where(adv[1:], prev[:-1], prev[1:])
        delta[t] = lb[t] + best
        advanced[t] = adv
    states = np.empty(n_frames, dtype=np.int64)
    k = n_states - 1
    for t in range(n_frames - 1, -1, -1):
        states[t] = k
        if t > 0 and advanced[t, k]:
            k -= 1
    score = float(delta[-1, -1])
    return AlignmentPath(states, score if score > _NEG_CUTOFF else -math.inf)


def iter_paths(n_frames: int, n_states: int):
    """Yield every monotonic no-skip path as a tuple of 0-based states."""
    for jumps in itertools.combinations(range(1, n_frames), n_states - 1):
        path = []
        k = 0
        marks = set(jumps)
        for t in range(n_frames):
            if t in marks:
                k += 1
            path.append(k)
        yield tuple(path)


def _oracle_guard(lattice) -> np.ndarray:
    lb = np.asarray(lattice, dtype=np.float64)
    n_frames, n_states = lb.shape
    if n_frames > MAX_ORACLE_FRAMES or n_states > MAX_ORACLE_STATES:
        raise ValueError(f"oracle too large: T={n_frames}, K={n_states}")
    if n_frames < n_states:
        raise InfeasibleLatticeError(f"no feasible path: T={n_frames} < K={n_states}")
    return lb


def _path_score(lb: np.ndarray, path) -> float:
    score = lb[0, path[0]]
    for t in range(1, len(path)):
        score = score + lb[t, path[t]]
    return float(score)


def brute_force_logsum(lattice) -> float:
    """``log sum_paths exp(score)`` by exhaustive enumeration."""
    lb = _oracle_guard(lattice)
    scores = [_path_score(lb, p) for p in iter_paths(*lb.shape)]
    m = max(scores)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(s - m) for s in scores))


def brute_force_occupancy(lattice) -> np.ndarray:
    lb = _oracle_guard(lattice)
    log_z = brute_force_logsum(lb)
    gamma = np.zeros(lb.shape)
    for p in iter_paths(*lb.shape):
        w = math.exp(_path_score(lb, p) - log_z)
        gamma[np.arange(len(p)), p] += w
    return gamma


def brute_force_best_path(lattice) -> AlignmentPath:
    """Exhaustive argmax; among equal scores the path staying longest at the end wins."""
    lb = _oracle_guard(lattice)
    best = max(iter_paths(*lb.shape), key=lambda p: (_path_score(lb, p), p[::-1]))
    return AlignmentPath(np.array(best, dtype=np.int64), _path_score(lb, best))
