"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every differentiable operation takes an optional Tape. With tape=None the
op just computes numpy results (inference mode, zero bookkeeping). With a
tape, ops whose inputs require gradients append a backward closure; calling
backward(tape, loss) replays the closures in reverse execution order and
accumulates gradients additively into Tensor.grad. The caller is
responsible for zeroing grads between backward passes.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, InvalidIndexError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        # asarray keeps 0-d shapes (ascontiguousarray would promote to 1-d)
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Record(NamedTuple):
    out: Tensor
    inputs: tuple[Tensor, ...]
    fn: Callable[[np.ndarray], None]


class Tape:
    """Ordered log of differentiable ops for one forward computation."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[_Record] = []

    def record(self, out: Tensor, inputs: Sequence[Tensor],
               fn: Callable[[np.ndarray], None]) -> None:
        self._records.append(_Record(out, tuple(inputs), fn))

    def __len__(self) -> int:
        return len(self._records)

    def clear_grads(self) -> None:
        """Zero every gradient this tape has touched (outputs and inputs)."""
        for rec in self._records:
            rec.out.grad = None
            for t in rec.inputs:
                t.grad = None


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(input) into every recorded input's .grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for rec in reversed(tape._records):
        g = rec.out.grad
        if g is None:
            continue
        rec.fn(g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _tracks(tape: Tape | None, *inputs: Tensor) -> bool:
    return tape is not None and any(t.requires_grad for t in inputs)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """a @ b for 2D@2D, 3D@2D (shared rhs) and 3D@3D (batched) operands."""
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3) or (bd.ndim == 3 and ad.ndim != 3):
        raise ShapeError(f"unsupported matmul ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul batch dims differ: {ad.shape} @ {bd.shape}")
    out = Tensor(ad @ bd)
    if _tracks(tape, a, b):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g @ np.swapaxes(bd, -1, -2))
            if b.requires_grad:
                if bd.ndim == 2 and ad.ndim == 3:
                    _accumulate(b, ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
                else:
                    _accumulate(b, np.swapaxes(ad, -1, -2) @ g)

        tape.record(out, (a, b), fn)
    return out


def matmul_t(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """a @ b^T where b is transposed over its last two axes."""
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3) or (bd.ndim == 3 and ad.ndim != 3):
        raise ShapeError(f"unsupported matmul_t ranks {ad.shape} @ {bd.shape}^T")
    if ad.shape[-1] != bd.shape[-1]:
        raise ShapeError(f"matmul_t inner dims differ: {ad.shape} @ {bd.shape}^T")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul_t batch dims differ: {ad.shape} @ {bd.shape}^T")
    out = Tensor(ad @ np.swapaxes(bd, -1, -2))
    if _tracks(tape, a, b):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g @ bd)
            if b.requires_grad:
                if bd.ndim == 2 and ad.ndim == 3:
                    _accumulate(b, g.reshape(-1, g.shape[-1]).T @ ad.reshape(-1, ad.shape[-1]))
                else:
                    _accumulate(b, np.swapaxes(g, -1, -2) @ ad)

        tape.record(out, (a, b), fn)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise a + b with numpy broadcasting."""
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}") from exc
    if _tracks(tape, a, b):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            _accumulate(a, _reduce_to(g, a.shape))
            _accumulate(b, _reduce_to(g, b.shape))

        tape.record(out, (a, b), fn)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise a * b with numpy broadcasting (gating op)."""
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise ShapeError(f"mul shapes incompatible: {a.shape} * {b.shape}") from exc
    ad, bd = a.data, b.data
    if _tracks(tape, a, b):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, _reduce_to(g * bd, a.shape))
            if b.requires_grad:
                _accumulate(b, _reduce_to(g * ad, b.shape))

        tape.record(out, (a, b), fn)
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    """a * c for a python scalar c."""
    c = float(c)
    out = Tensor(a.data * c)
    if _tracks(tape, a):
        out.requires_grad = True
        tape.record(out, (a,), lambda g: _accumulate(a, g * c))
    return out


def softmax_rows(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    y = _softmax_np(x.data)
    out = Tensor(y)
    if _tracks(tape, x):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            # dx = y * (g - sum(g * y)) along the softmax axis
            _accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

        tape.record(out, (x,), fn)
    return out


def log_softmax_rows(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Log-softmax over the last axis."""
    if np.isnan(x.data).any():
        raise NumericError("log_softmax input contains NaN")
    out_data = _log_softmax_np(x.data)
    out = Tensor(out_data)
    if _tracks(tape, x):
        out.requires_grad = True
        sm = np.exp(out_data)

        def fn(g: np.ndarray) -> None:
            _accumulate(x, g - sm * g.sum(axis=-1, keepdims=True))

        tape.record(out, (x,), fn)
    return out


def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def gelu(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Exact GeLU x * Phi(x) with Phi the standard normal CDF via erf."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = Tensor(xd * phi)
    if _tracks(tape, x):
        out.requires_grad = True
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI

        def fn(g: np.ndarray) -> None:
            _accumulate(x, g * (phi + xd * pdf))

        tape.record(out, (x,), fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               tape: Tape | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if _tracks(tape, x, gain, bias):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            if x.requires_grad:
                dxhat = g * gain.data
                # population-variance layer norm backward
                _accumulate(x, inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)))
            if gain.requires_grad:
                _accumulate(gain, _reduce_to(g * xhat, gain.shape))
            if bias.requires_grad:
                _accumulate(bias, _reduce_to(g, bias.shape))

        tape.record(out, (x, gain, bias), fn)
    return out


def embedding_lookup(weight: Tensor, ids: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Gather rows of weight by integer ids; output shape ids.shape + (d,)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise InvalidIndexError(f"embedding id out of range for table of {weight.shape[0]} rows")
    out = Tensor(weight.data[ids])
    if _tracks(tape, weight):
        out.requires_grad = True
        flat_ids = ids.reshape(-1)

        def fn(g: np.ndarray) -> None:
            dw = np.zeros_like(weight.data)
            np.add.at(dw, flat_ids, g.reshape(-1, g.shape[-1]))
            _accumulate(weight, dw)

        tape.record(out, (weight,), fn)
    return out


def select_first(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Pick position 0 of a (batch, seq, d) tensor -> (batch, d)."""
    if x.data.ndim != 3:
        raise ShapeError(f"select_first expects a 3D tensor, got {x.shape}")
    out = Tensor(x.data[:, 0, :])
    if _tracks(tape, x):
        out.requires_grad = True

        def fn(g: np.ndarray) -> None:
            dx = np.zeros_like(x.data)
            dx[:, 0, :] = g
            _accumulate(x, dx)

        tape.record(out, (x,), fn)
    return out


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum every element down to a scalar tensor."""
    out = Tensor(x.data.sum())
    if _tracks(tape, x):
        out.requires_grad = True
        tape.record(out, (x,), lambda g: _accumulate(x, np.broadcast_to(g, x.shape).copy()))
    return out
