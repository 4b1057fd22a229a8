"""Shared test helpers: finite-difference oracles and tiny model builders."""

from __future__ import annotations

import numpy as np

from prunekit.fixtures import FixtureSpec, build_model, build_vocab
from prunekit.model import build_gates
from prunekit.tensor import Tensor


def toy(seed: int = 0, **overrides):
    """A small random (model, vocab, spec) triple for unit tests."""
    spec = FixtureSpec(seed=seed, **overrides)
    return build_model(spec), build_vocab(spec), spec


def gates_from_drops(model, head_drops: dict[int, list[int]] | None = None,
                     ffn_drops: dict[int, list[int]] | None = None):
    """Neutral gates with zeros at the given (layer -> unit indices) drops."""
    head_gates, ffn_gates = build_gates(model)
    for l, idx in (head_drops or {}).items():
        for i in idx:
            head_gates[l][i] = Tensor(0.0)
    for l, idx in (ffn_drops or {}).items():
        for i in idx:
            ffn_gates[l].data[i] = 0.0
    return head_gates, ffn_gates


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar function f() wrt arr.

    f must read arr's current contents on every call; arr is perturbed
    in place and restored.
    """
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray,
                       rel: float = 1e-4, floor: float = 1e-7, label: str = "") -> None:
    """Assert |analytic - numeric| <= floor + rel*|numeric| elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    tol = floor + rel * np.abs(numeric)
    if not (diff <= tol).all():
        worst = np.unravel_index(np.argmax(diff - tol), diff.shape)
        raise AssertionError(
            f"gradient mismatch{' for ' + label if label else ''} at {worst}: "
            f"analytic={analytic[worst]!r} numeric={numeric[worst]!r} diff={diff[worst]:.3e}")
