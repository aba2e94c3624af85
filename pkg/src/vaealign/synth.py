"""Synthetic corpus with exact reference boundaries."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decode import BoundarySet
from .io import ManifestEntry, write_boundaries, write_feature_file, write_labels, write_manifest
from .training import Utterance


@dataclass(frozen=True)
class SynthSpec:
    n_utts: int = 200
    n_dev: int = 20
    vocab_size: int = 10
    states_per_phoneme: int = 3
    feature_dim: int = 16
    dur_min: int = 2
    dur_max: int = 8
    noise_std: float = 0.1
    seed: int = 7
    min_phonemes: int = 5
    max_phonemes: int = 15
    frame_shift: float = 0.010

    def __post_init__(self):
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ValueError("need 1 <= dur_min <= dur_max")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.min_phonemes < 1 or self.max_phonemes < self.min_phonemes:
            raise ValueError("need 1 <= min_phonemes <= max_phonemes")


def phoneme_names(vocab_size: int) -> list[str]:
    return [f"p{i:02d}" for i in range(vocab_size)]


def synth_utterances(spec: SynthSpec) -> tuple[list[Utterance], list[Utterance]]:
    """Generate ``(train, dev)`` utterances in memory.

    Each (phoneme, state) pair owns a fixed Gaussian mean; frames are that
    mean plus isotropic noise, stored at float32 precision.
    """
    rng = np.random.default_rng(spec.seed)
    names = phoneme_names(spec.vocab_size)
    means = rng.standard_normal((spec.vocab_size, spec.states_per_phoneme, spec.feature_dim))
    utts = []
    for i in range(spec.n_utts + spec.n_dev):
        n_ph = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        ids = rng.integers(0, spec.vocab_size, size=n_ph)
        durs = rng.integers(spec.dur_min, spec.dur_max + 1, size=(n_ph, spec.states_per_phoneme))
        frames = np.concatenate(
            [np.repeat(means[p, s][None, :], durs[j, s], axis=0)
             for j, p in enumerate(ids) for s in range(spec.states_per_phoneme)]
        )
        frames = frames + spec.noise_std * rng.standard_normal(frames.shape)
        frames = frames.astype(np.float32).astype(np.float64)
        phonemes = [names[p] for p in ids]
        ref = BoundarySet.from_durations(phonemes, durs.sum(axis=1), spec.frame_shift)
        split = "train" if i < spec.n_utts else "dev"
        utts.append(Utterance(f"{split}{i:05d}", frames, phonemes, spec.frame_shift, ref))
    return utts[: spec.n_utts], utts[spec.n_utts :]


def synth_corpus(spec: SynthSpec, out_dir) -> dict[str, list[ManifestEntry]]:
    """Write the corpus under ``out_dir`` with ``train.tsv`` and ``dev.tsv`` manifests."""
    out = Path(out_dir)
    manifests = {}
    for split, utts in zip(("train", "dev"), synth_utterances(spec)):
        entries = []
        for u in utts:
            feat = out / "feats" / f"{u.utt_id}.faf"
            lab = out / "labels" / f"{u.utt_id}.lab"
            ref = out / "ref" / f"{u.utt_id}.tsv"
            write_feature_file(feat, u.features, u.frame_shift)
            write_labels(lab, u.phonemes)
            write_boundaries(ref, u.reference)
            entries.append(ManifestEntry(u.utt_id, feat, lab, ref))
        write_manifest(out / f"{split}.tsv", entries)
        manifests[split] = entries
    return manifests
