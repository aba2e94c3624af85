"""Log-likelihood lattice construction.

A lattice entry ``log b(t, k)`` fuses how well acoustic frame ``t`` matches
linguistic state ``k`` (a softmax over negative squared distances) with a
beta-binomial position prior that biases paths toward the diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.special import betaln, gammaln

# exp(-745) underflows to 0.0 in float64
LOG_FLOOR = -745.0


@dataclass(frozen=True)
class StateSequence:
    """Phonemes expanded to ``states_per_phoneme`` consecutive sub-states.

    Each entry is ``(phoneme_id, state_index, source_position)``.
    """

    entries: tuple
    states_per_phoneme: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def phoneme_ids(self) -> list:
        return [e[0] for e in self.entries]

    @property
    def state_indices(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.int64)

    @property
    def source_positions(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.int64)

    @property
    def n_phonemes(self) -> int:
        return len(self.entries) // self.states_per_phoneme

    def phonemes(self) -> list:
        """Recover the original phoneme sequence."""
        return [e[0] for e in self.entries[:: self.states_per_phoneme]]


def expand_to_states(phonemes: Sequence[Hashable], states_per_phoneme: int) -> StateSequence:
    """Split every phoneme into ``states_per_phoneme`` ordered states."""
    if states_per_phoneme < 1:
        raise ValueError(f"states_per_phoneme must be >= 1, got {states_per_phoneme}")
    if len(phonemes) == 0:
        raise ValueError("empty phoneme sequence")
    entries = tuple(
        (ph, s, i) for i, ph in enumerate(phonemes) for s in range(states_per_phoneme)
    )
    return StateSequence(entries, states_per_phoneme)


def squared_distances(acoustic: np.ndarray, linguistic: np.ndarray) -> np.ndarray:
    diff = acoustic[:, None, :] - linguistic[None, :, :]
    return np.einsum("tke,tke->tk", diff, diff)


def log_matching(acoustic: np.ndarray, linguistic: np.ndarray) -> np.ndarray:
    """Log-softmax over states of the negative squared embedding distance.

    Args:
        acoustic: ``(T, E)`` acoustic embeddings.
        linguistic: ``(K, E)`` linguistic embeddings.

    Returns:
        ``(T, K)`` matrix whose rows are log-probabilities over states.
    """
    acoustic = np.asarray(acoustic, dtype=np.float64)
    linguistic = np.asarray(linguistic, dtype=np.float64)
    if acoustic.ndim != 2 or linguistic.ndim != 2:
        raise ValueError("embeddings must be 2-D")
    if acoustic.shape[1] != linguistic.shape[1]:
        raise ValueError(
            f"embedding dimension mismatch: acoustic {acoustic.shape[1]} "
            f"vs linguistic {linguistic.shape[1]}"
        )
    logits = -squared_distances(acoustic, linguistic)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    return logits - lse


def log_position_prior(n_frames: int, n_states: int, omega: float) -> np.ndarray:
    """Beta-binomial position prior, one log-pmf over states per frame.

    Frame ``t`` (1-based) uses ``BetaBin(n=K-1, a=omega*t, b=omega*(T-t+1))``
    evaluated at state offsets ``0..K-1``.
    """
    if n_frames < 1 or n_states < 1:
        raise ValueError("n_frames and n_states must be >= 1")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    n = n_states - 1
    t = np.arange(1, n_frames + 1, dtype=np.float64)[:, None]
    a = omega * t
    b = omega * (n_frames - t + 1)
    k = np.arange(n_states, dtype=np.float64)[None, :]
    log_choose = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    out = log_choose + betaln(k + a, n - k + b) - betaln(a, b)
    return np.maximum(out, LOG_FLOOR)


def build_lattice(log_f: np.ndarray, log_prior: np.ndarray, use_prior: bool = True) -> np.ndarray:
    """Fuse matching and prior into ``log b``; the prior is dropped when disabled."""
    log_f = np.asarray(log_f, dtype=np.float64)
    if not use_prior:
        return log_f.copy()
    log_prior = np.asarray(log_prior, dtype=np.float64)
    if log_f.shape != log_prior.shape:
        raise ValueError(f"shape mismatch: {log_f.shape} vs {log_prior.shape}")
    return log_f + log_prior
