#!/usr/bin/env python3
"""Parameter counts — and optionally forward-pass latency — over a grid of
pruned structures.

For every (heads, ffn) combination the script prints the transformer
parameter count as a percentage of the largest structure in the grid. With
--bench it also times forward passes on random weights and prints median
seconds per pass.

Example:
    python scripts/size_latency_grid.py --heads 12,10,8,6 --ffn 3072,2560,2048,1536
    python scripts/size_latency_grid.py --bench --rounds 5 --batch-size 2 --seq-len 64
"""

from __future__ import annotations

import argparse
import gc
import sys

import numpy as np

from prunekit.diagnostics import inference_time
from prunekit.errors import PrunekitError
from prunekit.model import (ModelConfig, assemble_model,
                            count_parameters_from_config, expected_tensor_shapes)


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--layers", type=int, default=12)
    parser.add_argument("--hidden", type=int, default=768)
    parser.add_argument("--head-size", type=int, default=64)
    parser.add_argument("--heads", default="12,10,8,6",
                        help="comma-separated head counts, largest first")
    parser.add_argument("--ffn", default="3072,2560,2048,1536",
                        help="comma-separated FFN widths, largest first")
    parser.add_argument("--bench", action="store_true",
                        help="also measure forward-pass latency per structure")
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--seq-len", type=int, default=64)
    parser.add_argument("--warmup", type=int, default=1)
    parser.add_argument("--rounds", type=int, default=5)
    parser.add_argument("--vocab-size", type=int, default=512,
                        help="embedding rows for benchmark models (latency is "
                             "insensitive to this)")
    return parser.parse_args(argv)


def build_config(args, heads: int, ffn: int) -> ModelConfig:
    return ModelConfig(num_layers=args.layers, hidden_size=args.hidden,
                       head_size=args.head_size, num_heads=heads, ffn_size=ffn,
                       vocab_size=args.vocab_size,
                       max_seq_len=max(args.seq_len, 64), num_labels=2)


def random_model(cfg: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in expected_tensor_shapes(cfg):
        arrays[name] = np.ones(shape) if name.endswith("gain") \
            else rng.random(shape) * 0.04 - 0.02
    return assemble_model(cfg, arrays, requires_grad=False)


def main(argv=None) -> int:
    args = parse_args(argv)
    head_grid = [int(h) for h in args.heads.split(",") if h]
    ffn_grid = [int(f) for f in args.ffn.split(",") if f]
    reference = count_parameters_from_config(
        build_config(args, head_grid[0], ffn_grid[0]))["transformer"]

    cols = "".join(f"{h:>12d}" for h in head_grid)
    corner = "ffn \\ heads"
    print(f"transformer parameters, % of heads={head_grid[0]} ffn={ffn_grid[0]}")
    print(f"{corner:>12}{cols}")
    for ffn in ffn_grid:
        cells = []
        for heads in head_grid:
            count = count_parameters_from_config(build_config(args, heads, ffn))
            cells.append(f"{100.0 * count['transformer'] / reference:>11.1f}%")
        print(f"{ffn:>12d}" + "".join(cells))

    if args.bench:
        print(f"\nmedian seconds per forward pass, batch {args.batch_size} x "
              f"seq {args.seq_len} ({args.rounds} rounds, {args.warmup} warmup)")
        print(f"{corner:>12}{cols}")
        for ffn in ffn_grid:
            cells = []
            for heads in head_grid:
                model = random_model(build_config(args, heads, ffn),
                                     seed=heads * 10000 + ffn)
                result = inference_time(model, args.batch_size, args.seq_len,
                                        warmup_rounds=args.warmup,
                                        measure_rounds=args.rounds)
                cells.append(f"{result.median:>12.4f}")
                del model
                gc.collect()
            print(f"{ffn:>12d}" + "".join(cells))
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except (PrunekitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
