"""Reporting utilities: parameter summaries and inference timing."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .model import Model, ModelConfig, count_parameters, count_parameters_from_config, task_forward

_ROWS = ("embedding", "transformer", "heads_total", "ffn_total", "task_head", "total")
_SUBROWS = {"heads_total", "ffn_total"}


def _counts_of(obj) -> dict[str, int]:
    if isinstance(obj, Model):
        return count_parameters(obj)
    if isinstance(obj, ModelConfig):
        return count_parameters_from_config(obj)
    if isinstance(obj, dict):
        return obj
    raise ContractError(f"cannot summarize {type(obj).__name__}")


def summarize(model, reference=None) -> dict:
    """Counts per bucket plus percentages against an optional reference."""
    counts = _counts_of(model)
    out = {"counts": dict(counts)}
    if reference is not None:
        ref = _counts_of(reference)
        out["reference_counts"] = dict(ref)
        out["percent_of_reference"] = {
            k: (100.0 * counts[k] / ref[k]) if ref.get(k) else float("nan")
            for k in counts}
    return out


def summary(model, reference=None) -> str:
    """Human-readable parameter table; one row per bucket."""
    info = summarize(model, reference)
    counts = info["counts"]
    pct = info.get("percent_of_reference")
    width = max(len(f"{counts[k]:,}") for k in _ROWS)
    lines = []
    header = f"{'component':<14} {'parameters':>{max(width, 10)}}"
    if pct is not None:
        header += f" {'% of reference':>15}"
    lines.append(header)
    lines.append("-" * len(header))
    for key in _ROWS:
        name = ("  " + key) if key in _SUBROWS else key
        line = f"{name:<14} {counts[key]:>{max(width, 10)},}"
        if pct is not None:
            line += f" {pct[key]:>14.1f}%"
        lines.append(line)
    return "\n".join(lines)


@dataclass
class BenchResult:
    rounds: list[float]
    batch_size: int
    seq_len: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.rounds))

    @property
    def std(self) -> float:
        return float(np.std(self.rounds))

    @property
    def median(self) -> float:
        return float(np.median(self.rounds))

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "seq_len": self.seq_len,
                "rounds": list(self.rounds), "mean_seconds": self.mean,
                "std_seconds": self.std, "median_seconds": self.median}


def inference_time(model: Model, batch_size: int = 8, seq_len: int = 64, *,
                   warmup_rounds: int = 1, measure_rounds: int = 5,
                   seed: int = 0) -> BenchResult:
    """Wall-clock seconds per forward pass on one fixed random batch."""
    if batch_size < 1 or measure_rounds < 1 or warmup_rounds < 0:
        raise ContractError("batch_size and measure_rounds must be >= 1, warmup_rounds >= 0")
    if not 1 <= seq_len <= model.config.max_seq_len:
        raise ContractError(f"seq_len {seq_len} outside [1, {model.config.max_seq_len}]")
    ids = np.random.default_rng(seed).integers(
        0, model.config.vocab_size, size=(batch_size, seq_len))
    for _ in range(warmup_rounds):
        task_forward(model, ids)
    rounds = []
    for _ in range(measure_rounds):
        t0 = time.perf_counter()
        task_forward(model, ids)
        rounds.append(time.perf_counter() - t0)
    return BenchResult(rounds=rounds, batch_size=batch_size, seq_len=seq_len)
