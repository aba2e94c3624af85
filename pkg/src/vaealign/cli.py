"""Command line entry point: ``vaealign {synth,train,align,eval,check}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

from . import checks
from .io import read_config
from .synth import SynthSpec, synth_corpus
from .training import TrainConfig
from .workflow import align_corpus, evaluate_dir, train_loop

logger = logging.getLogger("vaealign")


def _synth(args) -> int:
    spec = SynthSpec(
        n_utts=args.n_utts, n_dev=args.n_dev, vocab_size=args.vocab_size,
        states_per_phoneme=args.states, feature_dim=args.dim, dur_min=args.dur_min,
        dur_max=args.dur_max, noise_std=args.noise_std, seed=args.seed,
    )
    logger.info("synth spec: %s", asdict(spec))
    manifests = synth_corpus(spec, args.out)
    for split, entries in manifests.items():
        print(f"{split}: {len(entries)} utterances -> {args.out}/{split}.tsv")
    return 0


def _train(args) -> int:
    config = read_config(args.config) if args.config else TrainConfig()
    ckpt, report = train_loop(args.manifest, config, args.out, args.dev_manifest)
    last = report.steps[-1] if report.steps else None
    print(f"checkpoint={ckpt}")
    print(f"steps={len(report.steps)} processed={report.n_processed} skipped={report.n_skipped}")
    if last is not None:
        print(f"final_L={last.loss:.6f} final_L_align={last.l_align:.6f}")
    for step, result in report.evals:
        if result is not None:
            print(f"dev step={step} {result.as_kv()}")
    return 0


def _align(args) -> int:
    summary = align_corpus(args.checkpoint, args.manifest, args.out)
    print(f"aligned={len(summary.written)} skipped={len(summary.skipped)}")
    for uid in summary.skipped:
        print(f"skipped {uid}: fewer frames than states")
    return 0


def _eval(args) -> int:
    report = evaluate_dir(args.pred, args.manifest)
    print(report.as_row())
    print(report.as_kv())
    print(f"n_boundaries={report.n_boundaries}")
    return 0


def _check(args) -> int:
    return 0 if checks.run_all() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaealign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus with reference boundaries")
    p.add_argument("--out", required=True)
    p.add_argument("--n-utts", type=int, default=200)
    p.add_argument("--n-dev", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=10)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--dur-min", type=int, default=2)
    p.add_argument("--dur-max", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_synth)

    p = sub.add_parser("train", help="train an aligner")
    p.add_argument("--config", help="key = value config file (defaults: base model)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dev-manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_train)

    p = sub.add_parser("align", help="decode phoneme boundaries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_align)

    p = sub.add_parser("eval", help="score predicted boundaries against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_eval)

    p = sub.add_parser("check", help="run oracle and gradient self-checks")
    p.set_defaults(func=_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
