"""Transformer encoder built on the tape-based tensor ops.

Structure of one layer, with per-layer head and FFN widths that may differ
after pruning:

    X <- LayerNorm(X + sum_i g_i * Att_i(X))     post-norm residual MHA
    X <- LayerNorm(X + FFN(X))                   post-norm residual FFN

Each attention head owns its full Q/K/V/O projections including a per-head
output bias, so gating a head by 0 is exactly equivalent to removing it.
The FFN gate is a vector applied to the post-GeLU activations, so zeroing
entry i is exactly equivalent to deleting neuron i (column i of W1, row i
of W2, element i of b1).

Attention scores are scaled by 1/sqrt(hidden_size); head width head_size
is fixed at construction and never changes under pruning.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InvalidIndexError, ShapeError, VocabularyError
from .tensor import (Tape, Tensor, add, embedding_lookup, gelu, layer_norm, matmul,
                     matmul_t, mul, scale, select_first, softmax_rows)


@dataclass
class ModelConfig:
    """Architecture description; per-layer widths because pruning is per-layer."""

    num_layers: int
    hidden_size: int
    head_size: int
    num_heads: list[int]
    ffn_size: list[int]
    vocab_size: int
    max_seq_len: int
    num_labels: int
    has_lm_head: bool = False
    lm_head_tied: bool = True
    # width of an untied LM head that was exempted from vocabulary pruning
    lm_vocab_size: int = field(default=-1)

    def __post_init__(self):
        if isinstance(self.num_heads, int):
            self.num_heads = [self.num_heads] * self.num_layers
        if isinstance(self.ffn_size, int):
            self.ffn_size = [self.ffn_size] * self.num_layers
        self.num_heads = list(self.num_heads)
        self.ffn_size = list(self.ffn_size)
        if self.lm_vocab_size < 0:
            self.lm_vocab_size = self.vocab_size if self.has_lm_head else 0
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "hidden_size", "head_size", "vocab_size",
                     "max_seq_len", "num_labels"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if len(self.num_heads) != self.num_layers or len(self.ffn_size) != self.num_layers:
            raise ConfigError("num_heads and ffn_size must list one width per layer")
        for label, widths in (("num_heads", self.num_heads), ("ffn_size", self.ffn_size)):
            if any(not isinstance(w, int) or w < 0 for w in widths):
                raise ConfigError(f"{label} entries must be non-negative integers, got {widths}")
        if not self.has_lm_head and self.lm_vocab_size not in (0, self.vocab_size):
            raise ConfigError("lm_vocab_size is only meaningful with has_lm_head")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "head_size": self.head_size,
            "num_heads": list(self.num_heads),
            "ffn_size": list(self.ffn_size),
            "vocab_size": self.vocab_size,
            "max_seq_len": self.max_seq_len,
            "num_labels": self.num_labels,
            "has_lm_head": self.has_lm_head,
            "lm_head_tied": self.lm_head_tied,
            "lm_vocab_size": self.lm_vocab_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        missing = {"num_layers", "hidden_size", "head_size", "num_heads", "ffn_size",
                   "vocab_size", "max_seq_len", "num_labels"} - set(d)
        if missing:
            raise ConfigError(f"model config missing keys: {sorted(missing)}")
        return cls(**d)


@dataclass
class AttentionHead:
    wq: Tensor  # (head_size, hidden)
    bq: Tensor  # (head_size,)
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor  # (head_size, hidden)
    bo: Tensor  # (hidden,)


@dataclass
class EncoderLayer:
    heads: list[AttentionHead]
    w1: Tensor  # (hidden, ffn)
    b1: Tensor  # (ffn,)
    w2: Tensor  # (ffn, hidden)
    b2: Tensor  # (hidden,)
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class Model:
    config: ModelConfig
    embedding: Tensor           # (vocab, hidden)
    position_embedding: Tensor  # (max_seq_len, hidden)
    layers: list[EncoderLayer]
    classifier_w: Tensor        # (hidden, num_labels)
    classifier_b: Tensor        # (num_labels,)
    lm_head: Tensor | None = None  # (lm_vocab, hidden) when has_lm_head and untied
    lm_bias: Tensor | None = None  # (lm_vocab,) when has_lm_head

    def clone(self) -> "Model":
        return copy.deepcopy(self)


_HEAD_FIELDS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def expected_tensor_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list defining storage order for checkpoints."""
    d, dh = cfg.hidden_size, cfg.head_size
    out: list[tuple[str, tuple[int, ...]]] = [
        ("embedding", (cfg.vocab_size, d)),
        ("position_embedding", (cfg.max_seq_len, d)),
    ]
    for l in range(cfg.num_layers):
        for h in range(cfg.num_heads[l]):
            for f in _HEAD_FIELDS:
                shape = (dh, d) if f in ("wq", "wk", "wv", "wo") else \
                        (d,) if f == "bo" else (dh,)
                out.append((f"layers.{l}.heads.{h}.{f}", shape))
        f_l = cfg.ffn_size[l]
        out.extend([
            (f"layers.{l}.ffn.w1", (d, f_l)),
            (f"layers.{l}.ffn.b1", (f_l,)),
            (f"layers.{l}.ffn.w2", (f_l, d)),
            (f"layers.{l}.ffn.b2", (d,)),
            (f"layers.{l}.ln1.gain", (d,)),
            (f"layers.{l}.ln1.bias", (d,)),
            (f"layers.{l}.ln2.gain", (d,)),
            (f"layers.{l}.ln2.bias", (d,)),
        ])
    out.append(("classifier.weight", (d, cfg.num_labels)))
    out.append(("classifier.bias", (cfg.num_labels,)))
    if cfg.has_lm_head:
        if not cfg.lm_head_tied:
            out.append(("lm_head.weight", (cfg.lm_vocab_size, d)))
        out.append(("lm_head.bias", (cfg.lm_vocab_size,)))
    return out


def named_tensors(model: Model) -> Iterator[tuple[str, Tensor]]:
    """Stored tensors in canonical order; a tied LM head is not stored."""
    yield "embedding", model.embedding
    yield "position_embedding", model.position_embedding
    for l, layer in enumerate(model.layers):
        for h, head in enumerate(layer.heads):
            for f in _HEAD_FIELDS:
                yield f"layers.{l}.heads.{h}.{f}", getattr(head, f)
        yield f"layers.{l}.ffn.w1", layer.w1
        yield f"layers.{l}.ffn.b1", layer.b1
        yield f"layers.{l}.ffn.w2", layer.w2
        yield f"layers.{l}.ffn.b2", layer.b2
        yield f"layers.{l}.ln1.gain", layer.ln1_gain
        yield f"layers.{l}.ln1.bias", layer.ln1_bias
        yield f"layers.{l}.ln2.gain", layer.ln2_gain
        yield f"layers.{l}.ln2.bias", layer.ln2_bias
    yield "classifier.weight", model.classifier_w
    yield "classifier.bias", model.classifier_b
    if model.config.has_lm_head:
        if not model.config.lm_head_tied:
            yield "lm_head.weight", model.lm_head
        yield "lm_head.bias", model.lm_bias


def assemble_model(cfg: ModelConfig, arrays: dict[str, np.ndarray],
                   requires_grad: bool = True) -> Model:
    """Build a Model from a complete name->array mapping in canonical shapes."""
    expected = expected_tensor_shapes(cfg)
    missing = [n for n, _ in expected if n not in arrays]
    if missing:
        raise ContractError(f"missing tensors: {missing[:4]}{'...' if len(missing) > 4 else ''}")
    tensors: dict[str, Tensor] = {}
    for name, shape in expected:
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        tensors[name] = Tensor(arr, requires_grad=requires_grad)

    layers = []
    for l in range(cfg.num_layers):
        heads = [AttentionHead(*(tensors[f"layers.{l}.heads.{h}.{f}"] for f in _HEAD_FIELDS))
                 for h in range(cfg.num_heads[l])]
        layers.append(EncoderLayer(
            heads=heads,
            w1=tensors[f"layers.{l}.ffn.w1"], b1=tensors[f"layers.{l}.ffn.b1"],
            w2=tensors[f"layers.{l}.ffn.w2"], b2=tensors[f"layers.{l}.ffn.b2"],
            ln1_gain=tensors[f"layers.{l}.ln1.gain"], ln1_bias=tensors[f"layers.{l}.ln1.bias"],
            ln2_gain=tensors[f"layers.{l}.ln2.gain"], ln2_bias=tensors[f"layers.{l}.ln2.bias"]))
    return Model(
        config=cfg,
        embedding=tensors["embedding"],
        position_embedding=tensors["position_embedding"],
        layers=layers,
        classifier_w=tensors["classifier.weight"],
        classifier_b=tensors["classifier.bias"],
        lm_head=tensors.get("lm_head.weight"),
        lm_bias=tensors.get("lm_head.bias"),
    )


def build_gates(model: Model, requires_grad: bool = False) -> tuple[list[list[Tensor]], list[Tensor]]:
    """All-ones gates matching the model's current widths (neutral element)."""
    head_gates = [[Tensor(1.0, requires_grad=requires_grad) for _ in layer.heads]
                  for layer in model.layers]
    ffn_gates = [Tensor(np.ones(layer.b1.shape[0]), requires_grad=requires_grad)
                 for layer in model.layers]
    return head_gates, ffn_gates


def _check_gates(model: Model, head_gates, ffn_gates) -> None:
    L = len(model.layers)
    if head_gates is not None:
        if len(head_gates) != L:
            raise ShapeError(f"head_gates lists {len(head_gates)} layers, model has {L}")
        for l, (gates, layer) in enumerate(zip(head_gates, model.layers)):
            if len(gates) != len(layer.heads):
                raise ShapeError(f"layer {l}: {len(gates)} head gates for {len(layer.heads)} heads")
            for g in gates:
                if g.shape != ():
                    raise ShapeError(f"head gates must be scalars, got shape {g.shape}")
    if ffn_gates is not None:
        if len(ffn_gates) != L:
            raise ShapeError(f"ffn_gates lists {len(ffn_gates)} layers, model has {L}")
        for l, (g, layer) in enumerate(zip(ffn_gates, model.layers)):
            width = layer.b1.shape[0]
            if g.shape != (width,):
                raise ShapeError(f"layer {l}: ffn gate shape {g.shape} does not match width {width}")


def _check_token_ids(model: Model, token_ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ContractError(f"token_ids must be 2D (batch, seq), got shape {ids.shape}")
    if ids.shape[1] < 1:
        raise ContractError("token_ids must contain at least one position")
    if ids.shape[1] > model.config.max_seq_len:
        raise ContractError(
            f"sequence length {ids.shape[1]} exceeds max_seq_len {model.config.max_seq_len}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"token_ids must be integers, got dtype {ids.dtype}")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise VocabularyError(
            f"token id out of range for vocabulary of size {model.config.vocab_size}")
    return ids


def encoder_forward(model: Model, token_ids: np.ndarray,
                    head_gates: Sequence[Sequence[Tensor]] | None = None,
                    ffn_gates: Sequence[Tensor] | None = None,
                    tape: Tape | None = None) -> Tensor:
    """Run the encoder stack; returns hidden states of shape (batch, seq, hidden)."""
    ids = _check_token_ids(model, token_ids)
    _check_gates(model, head_gates, ffn_gates)
    n = ids.shape[1]
    inv_sqrt_d = 1.0 / math.sqrt(model.config.hidden_size)

    x = add(embedding_lookup(model.embedding, ids, tape),
            embedding_lookup(model.position_embedding, np.arange(n), tape), tape)
    for l, layer in enumerate(model.layers):
        if layer.heads:
            att_sum = None
            for h, head in enumerate(layer.heads):
                q = add(matmul_t(x, head.wq, tape), head.bq, tape)
                k = add(matmul_t(x, head.wk, tape), head.bk, tape)
                v = add(matmul_t(x, head.wv, tape), head.bv, tape)
                att = softmax_rows(scale(matmul_t(q, k, tape), inv_sqrt_d, tape), tape)
                out = add(matmul(matmul(att, v, tape), head.wo, tape), head.bo, tape)
                if head_gates is not None:
                    out = mul(out, head_gates[l][h], tape)
                att_sum = out if att_sum is None else add(att_sum, out, tape)
            x = layer_norm(add(x, att_sum, tape), layer.ln1_gain, layer.ln1_bias, tape)
        else:
            x = layer_norm(x, layer.ln1_gain, layer.ln1_bias, tape)

        hidden = gelu(add(matmul(x, layer.w1, tape), layer.b1, tape), tape)
        if ffn_gates is not None:
            hidden = mul(hidden, ffn_gates[l], tape)
        ffn_out = add(matmul(hidden, layer.w2, tape), layer.b2, tape)
        x = layer_norm(add(x, ffn_out, tape), layer.ln2_gain, layer.ln2_bias, tape)
    return x


def task_forward(model: Model, token_ids: np.ndarray,
                 head_gates: Sequence[Sequence[Tensor]] | None = None,
                 ffn_gates: Sequence[Tensor] | None = None,
                 tape: Tape | None = None) -> Tensor:
    """Classifier logits (batch, num_labels) read from position 0."""
    hidden = encoder_forward(model, token_ids, head_gates, ffn_gates, tape)
    first = select_first(hidden, tape)
    return add(matmul(first, model.classifier_w, tape), model.classifier_b, tape)


def lm_forward(model: Model, token_ids: np.ndarray, tape: Tape | None = None) -> Tensor:
    """LM logits (batch, seq, lm_vocab); tied heads reuse embedding storage."""
    if not model.config.has_lm_head:
        raise ContractError("model has no LM head")
    hidden = encoder_forward(model, token_ids, tape=tape)
    table = model.embedding if model.config.lm_head_tied else model.lm_head
    return add(matmul_t(hidden, table, tape), model.lm_bias, tape)


def _check_unit_indices(indices, width: int, what: str) -> list[int]:
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise InvalidIndexError(f"duplicate {what} indices: {sorted(idx)}")
    for i in idx:
        if not 0 <= i < width:
            raise InvalidIndexError(f"{what} index {i} out of range for width {width}")
    return idx


def remove_heads(model: Model, layer_index: int, head_indices) -> None:
    """Delete whole attention heads from one layer (all eight tensors each)."""
    if not 0 <= layer_index < len(model.layers):
        raise InvalidIndexError(f"layer index {layer_index} out of range")
    layer = model.layers[layer_index]
    idx = _check_unit_indices(head_indices, len(layer.heads), "head")
    for i in sorted(idx, reverse=True):
        del layer.heads[i]
    model.config.num_heads[layer_index] = len(layer.heads)


def remove_ffn_neurons(model: Model, layer_index: int, neuron_indices) -> None:
    """Delete FFN neurons: W1 columns, b1 entries, W2 rows."""
    if not 0 <= layer_index < len(model.layers):
        raise InvalidIndexError(f"layer index {layer_index} out of range")
    layer = model.layers[layer_index]
    width = layer.b1.shape[0]
    idx = _check_unit_indices(neuron_indices, width, "ffn neuron")
    kept = np.setdiff1d(np.arange(width), np.asarray(idx, dtype=np.int64))
    rg = layer.w1.requires_grad
    layer.w1 = Tensor(layer.w1.data[:, kept], requires_grad=rg)
    layer.b1 = Tensor(layer.b1.data[kept], requires_grad=rg)
    layer.w2 = Tensor(layer.w2.data[kept, :], requires_grad=rg)
    model.config.ffn_size[layer_index] = int(kept.size)


def remove_vocab_rows(model: Model, kept_ids, prune_lm_head: bool = True) -> dict[int, int]:
    """Shrink the embedding to the given rows; returns the old->new id mapping.

    A tied LM head shares embedding storage, so it (and its bias) always
    follows. An untied LM head is row-pruned only when prune_lm_head is set;
    otherwise it keeps its full width, recorded in config.lm_vocab_size.
    """
    kept = [int(i) for i in kept_ids]
    if not kept:
        raise ContractError("kept_ids must not be empty")
    _check_unit_indices(kept, model.config.vocab_size, "vocab row")
    rg = model.embedding.requires_grad
    sel = np.asarray(kept, dtype=np.int64)
    model.embedding = Tensor(model.embedding.data[sel], requires_grad=rg)
    if model.config.has_lm_head:
        if model.config.lm_head_tied:
            model.lm_bias = Tensor(model.lm_bias.data[sel], requires_grad=rg)
            model.config.lm_vocab_size = len(kept)
        elif prune_lm_head:
            model.lm_head = Tensor(model.lm_head.data[sel], requires_grad=rg)
            model.lm_bias = Tensor(model.lm_bias.data[sel], requires_grad=rg)
            model.config.lm_vocab_size = len(kept)
    model.config.vocab_size = len(kept)
    return {old: new for new, old in enumerate(kept)}


def _head_params(cfg: ModelConfig) -> int:
    # wq+wk+wv+wo are head_size x hidden, bq+bk+bv are head_size, bo is hidden
    return 4 * cfg.head_size * cfg.hidden_size + 3 * cfg.head_size + cfg.hidden_size


def count_parameters_from_config(cfg: ModelConfig) -> dict[str, int]:
    """Parameter counts per bucket, derived arithmetically from the config.

    ffn_total counts only the per-neuron parameters (W1, b1, W2), so halving
    every layer's FFN width halves it exactly. The FFN output bias and the
    layer-norm vectors are width-independent and sit in the transformer
    bucket alongside heads_total and ffn_total.
    """
    d = cfg.hidden_size
    emb = cfg.vocab_size * d + cfg.max_seq_len * d
    if cfg.has_lm_head:
        if not cfg.lm_head_tied:
            emb += cfg.lm_vocab_size * d
        emb += cfg.lm_vocab_size
    heads_total = _head_params(cfg) * sum(cfg.num_heads)
    ffn_total = (2 * d + 1) * sum(cfg.ffn_size)
    transformer = heads_total + ffn_total + cfg.num_layers * 5 * d
    task_head = d * cfg.num_labels + cfg.num_labels
    return {
        "embedding": emb,
        "heads_total": heads_total,
        "ffn_total": ffn_total,
        "transformer": transformer,
        "task_head": task_head,
        "total": emb + transformer + task_head,
    }


def count_parameters(model: Model) -> dict[str, int]:
    """Parameter counts per bucket, summed over the stored tensors."""
    counts = count_parameters_from_config(model.config)
    total = sum(t.size for _, t in named_tensors(model))
    if total != counts["total"]:
        raise ContractError(
            f"stored parameters ({total}) disagree with config arithmetic ({counts['total']})")
    return counts
