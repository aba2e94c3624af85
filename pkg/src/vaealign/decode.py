"""Phoneme boundaries from decoded paths, and boundary-error metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

THRESHOLDS_MS = (20.0, 50.0)


@dataclass(frozen=True)
class Segment:
    phoneme: str
    start_frame: int
    end_frame: int

    def start_sec(self, frame_shift: float) -> float:
        return self.start_frame * frame_shift

    def end_sec(self, frame_shift: float) -> float:
        return self.end_frame * frame_shift


@dataclass(frozen=True)
class BoundarySet:
    """Contiguous phoneme segments covering ``[0, n_frames)``."""

    segments: tuple
    frame_shift: float = 0.010

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise ValueError("boundary set has no segments")
        if segs[0].start_frame != 0:
            raise ValueError("first segment must start at frame 0")
        for prev, cur in zip(segs, segs[1:]):
            if cur.start_frame != prev.end_frame:
                raise ValueError(
                    f"segments not contiguous at {prev.phoneme!r}->{cur.phoneme!r}: "
                    f"{prev.end_frame} != {cur.start_frame}"
                )
        for s in segs:
            if s.end_frame <= s.start_frame:
                raise ValueError(f"empty segment for {s.phoneme!r} at frame {s.start_frame}")

    @property
    def phonemes(self) -> list:
        return [s.phoneme for s in self.segments]

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end_frame

    @property
    def starts(self) -> np.ndarray:
        return np.array([s.start_frame for s in self.segments], dtype=np.int64)

    @classmethod
    def from_durations(cls, phonemes: Sequence, durations: Sequence[int], frame_shift: float = 0.010):
        if len(phonemes) != len(durations):
            raise ValueError("phonemes and durations differ in length")
        ends = np.cumsum(durations)
        starts = ends - np.asarray(durations)
        segs = tuple(Segment(p, int(s), int(e)) for p, s, e in zip(phonemes, starts, ends))
        return cls(segs, frame_shift)


def path_to_boundaries(path_states, states, frame_shift: float = 0.010) -> BoundarySet:
    """Map a per-frame state path (0-based) onto phoneme spans.

    Phoneme ``i`` starts at the first frame whose state belongs to it.
    """
    path_states = np.asarray(path_states, dtype=np.int64)
    sources = states.source_positions
    if path_states.size == 0 or path_states.max() >= len(sources) or path_states.min() < 0:
        raise ValueError(f"path uses states outside 0..{len(sources) - 1}")
    per_frame = sources[path_states]
    n_phonemes = states.n_phonemes
    if per_frame[0] != 0 or per_frame[-1] != n_phonemes - 1:
        raise ValueError("path does not cover every phoneme")
    if np.any(np.diff(per_frame) < 0) or np.any(np.diff(per_frame) > 1):
        raise ValueError("path is not monotonic without skips at phoneme level")
    starts = np.searchsorted(per_frame, np.arange(n_phonemes), side="left")
    ends = np.append(starts[1:], len(per_frame))
    names = states.phonemes()
    segs = tuple(Segment(names[i], int(starts[i]), int(ends[i])) for i in range(n_phonemes))
    return BoundarySet(segs, frame_shift)


def boundary_errors(pred: BoundarySet, ref: BoundarySet) -> np.ndarray:
    """Signed inner-boundary errors ``pred - ref`` in milliseconds."""
    if pred.phonemes != ref.phonemes:
        raise ValueError("phoneme sequence mismatch between prediction and reference")
    if pred.frame_shift == ref.frame_shift:
        # difference in whole frames first so a 2-frame error is exactly 20 ms
        return (pred.starts[1:] - ref.starts[1:]) * (pred.frame_shift * 1000.0)
    return pred.starts[1:] * pred.frame_shift * 1000.0 - ref.starts[1:] * ref.frame_shift * 1000.0


@dataclass(frozen=True)
class MetricsReport:
    mae_ms: float
    median_ms: float
    tol20_pct: float
    tol50_pct: float
    n_boundaries: int

    def as_row(self) -> str:
        return (
            f"{'MAE':>8} {'Median':>8} {'20 ms tol':>10} {'50 ms tol':>10}\n"
            f"{self.mae_ms:8.2f} {self.median_ms:8.2f} {self.tol20_pct:10.2f} {self.tol50_pct:10.2f}"
        )

    def as_kv(self) -> str:
        return (
            f"mae_ms={self.mae_ms:.2f} median_ms={self.median_ms:.2f} "
            f"tol20={self.tol20_pct:.2f} tol50={self.tol50_pct:.2f}"
        )


def metrics(errors_ms: Iterable[float], thresholds: Sequence[float] = THRESHOLDS_MS) -> MetricsReport:
    """MAE, median absolute error and tolerance error rates (``|e| > threshold``)."""
    abs_err = np.abs(np.asarray(list(errors_ms), dtype=np.float64))
    if abs_err.size == 0:
        raise ValueError("no boundaries to score")
    lo, hi = thresholds
    return MetricsReport(
        mae_ms=float(abs_err.mean()),
        median_ms=float(np.median(abs_err)),
        tol20_pct=float(100.0 * np.count_nonzero(abs_err > lo) / abs_err.size),
        tol50_pct=float(100.0 * np.count_nonzero(abs_err > hi) / abs_err.size),
        n_boundaries=int(abs_err.size),
    )


def corpus_metrics(pairs: dict) -> MetricsReport:
    """Pool errors over utterances (stable order by id) and score them once.

    ``pairs`` maps utterance id to ``(pred, ref)`` boundary sets.
    """
    pooled = [boundary_errors(*pairs[uid]) for uid in sorted(pairs)]
    return metrics(np.concatenate(pooled) if pooled else [])
