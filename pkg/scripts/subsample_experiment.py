#!/usr/bin/env python3
"""How stable are importance scores under dataset subsampling?

Scores the model on seeded fractions of a dataset and reports the Spearman
rank correlation of each fraction's flattened score table against the
full-data run. High correlations at small fractions mean pruning decisions
can be made from a handful of batches.

Example:
    python scripts/subsample_experiment.py \
        --model-dir fixtures/toy/model --dataset fixtures/toy/dataset.tsv \
        --fractions 0.1,0.25,0.5,1.0 --out stability.json
"""

from __future__ import annotations

import argparse
import json
import sys

from prunekit.checkpoint import load_model
from prunekit.experiments import DEFAULT_FRACTIONS, subsample_score_stability
from prunekit.scoring import LossSpec
from prunekit.errors import PrunekitError
from prunekit.vocab import Vocabulary


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model-dir", required=True,
                        help="checkpoint directory containing vocab.txt")
    parser.add_argument("--dataset", required=True,
                        help="TSV (labeled) or plain text (unlabeled) file")
    parser.add_argument("--unlabeled", action="store_true",
                        help="dataset rows are raw text; implies --use-logits")
    parser.add_argument("--use-logits", action="store_true",
                        help="score with self-supervised KL instead of cross-entropy")
    parser.add_argument("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS),
                        help="comma-separated subsample fractions in (0, 1]")
    parser.add_argument("--granularity", choices=("batch", "example"), default="batch")
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--max-len", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", help="write the JSON report here (default: stdout only)")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    model = load_model(args.model_dir)
    vocab = Vocabulary.from_file(f"{args.model_dir}/vocab.txt")
    fractions = [float(f) for f in args.fractions.split(",") if f]
    loss_spec = LossSpec.self_supervised() if (args.use_logits or args.unlabeled) \
        else LossSpec.supervised()

    report = subsample_score_stability(
        model, vocab, args.dataset, labeled=not args.unlabeled,
        batch_size=args.batch_size, max_len=args.max_len, fractions=fractions,
        seed=args.seed, loss_spec=loss_spec, granularity=args.granularity,
        threads=args.threads)

    print(f"{'fraction':>9} {'examples':>9} {'spearman vs full':>17}")
    for frac, n, rho in zip(report["fractions"], report["num_examples"],
                            report["spearman_vs_full"]):
        print(f"{frac:>9.2f} {n:>9d} {rho:>17.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        print(f"report written to {args.out}")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (PrunekitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
