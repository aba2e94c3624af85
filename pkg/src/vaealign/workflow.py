"""Manifest-driven training, alignment and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .decode import MetricsReport, corpus_metrics
from .estimator import VaeAligner
from .io import (
    atomic_write,
    format_config,
    load_checkpoint,
    load_utterances,
    read_boundaries,
    read_feature_file,
    read_labels,
    read_manifest,
    save_checkpoint,
    write_boundaries,
)
from .training import TrainConfig, TrainReport, align_utterance

logger = logging.getLogger(__name__)

METRICS_HEADER = "step\tL\tL_align\tL_aco\tL_lng\tsigma"
CHECKPOINT_NAME = "checkpoint.npz"


def _fmt(x: float) -> str:
    return repr(float(x))


def train_loop(manifest, config: TrainConfig, out_dir, dev_manifest=None) -> tuple[Path, TrainReport]:
    """Train from a manifest, writing checkpoints and a tab-separated loss log.

    The checkpoint is refreshed every ``eval_interval`` steps and at the end.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("resolved config:\n%s", format_config(config))
    atomic_write(out / "config.txt", format_config(config))

    utts = load_utterances(read_manifest(manifest))
    dev = load_utterances(read_manifest(dev_manifest)) if dev_manifest else []
    est = VaeAligner.from_config(config)
    ckpt = out / CHECKPOINT_NAME
    log_lines = [METRICS_HEADER]
    dev_lines = ["step\tmae_ms\tmedian_ms\ttol20\ttol50\tn_boundaries"]

    def on_step(r):
        log_lines.append("\t".join([str(r.step), _fmt(r.loss), _fmt(r.l_align), _fmt(r.l_aco),
                                    _fmt(r.l_lng), _fmt(r.sigma)]))

    def on_eval(step, result: Optional[MetricsReport]):
        save_checkpoint(ckpt, est.store_, est.network_, config)
        atomic_write(out / "metrics.tsv", "\n".join(log_lines) + "\n")
        if result is not None:
            dev_lines.append(f"{step}\t{result.mae_ms:.4f}\t{result.median_ms:.4f}\t"
                             f"{result.tol20_pct:.4f}\t{result.tol50_pct:.4f}\t{result.n_boundaries}")
            atomic_write(out / "dev_metrics.tsv", "\n".join(dev_lines) + "\n")

    est.fit(utts, dev=dev, on_step=on_step, on_eval=on_eval)
    save_checkpoint(ckpt, est.store_, est.network_, config)
    atomic_write(out / "metrics.tsv", "\n".join(log_lines) + "\n")
    report = est.report_
    if report.n_skipped:
        logger.warning("skipped %d of %d utterances with fewer frames than states",
                       report.n_skipped, report.n_skipped + report.n_processed)
    return ckpt, report


@dataclass
class AlignSummary:
    written: list
    skipped: list


def align_corpus(checkpoint, manifest, out_dir) -> AlignSummary:
    """Decode every manifest utterance into ``<out_dir>/<utt_id>.tsv``."""
    net, store, config = load_checkpoint(checkpoint)
    logger.info("resolved config:\n%s", format_config(config))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = AlignSummary([], [])
    for entry in read_manifest(manifest, check_files=True):
        frames, shift = read_feature_file(entry.feature_path)
        phonemes = read_labels(entry.label_path, vocab=net.vocab)
        n_states = len(phonemes) * config.states_per_phoneme
        if len(frames) < n_states:
            logger.warning("skipping %s: %d frames < %d states", entry.utt_id, len(frames), n_states)
            summary.skipped.append(entry.utt_id)
            continue
        bset = align_utterance(net, store.params, frames, phonemes, config, shift)
        write_boundaries(out / f"{entry.utt_id}.tsv", bset)
        summary.written.append(entry.utt_id)
    return summary


def evaluate_dir(pred_dir, manifest) -> MetricsReport:
    """Score ``<pred_dir>/<utt_id>.tsv`` files against manifest references."""
    pairs = {}
    for entry in read_manifest(manifest):
        if entry.ref_path is None:
            continue
        pred_path = Path(pred_dir) / f"{entry.utt_id}.tsv"
        if not pred_path.exists():
            logger.warning("no prediction for %s", entry.utt_id)
            continue
        _, shift = read_feature_file(entry.feature_path)
        pairs[entry.utt_id] = (read_boundaries(pred_path, shift), read_boundaries(entry.ref_path, shift))
    return corpus_metrics(pairs)
