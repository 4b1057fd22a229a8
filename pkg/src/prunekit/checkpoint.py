"""Checkpoint directory format.

A model directory holds three files:

    config.json    architecture description (ModelConfig fields)
    weights.bin    all tensors concatenated, row-major little-endian float64
    manifest.json  ordered tensor index: name, shape, byte offset, byte length

Round trips are bit-exact. Loading validates the manifest against both the
config-derived expected shapes and the actual file size, naming the first
offending tensor.
"""

from __future__ import annotations

import json
import os
import shutil
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ContractError, CorruptionError
from .model import Model, ModelConfig, assemble_model, expected_tensor_shapes, named_tensors

CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.json"


def save_model(model: Model, directory: str | Path) -> None:
    """Write config.json, weights.bin and manifest.json into directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / WEIGHTS_FILE, "wb") as fh:
        for name, tensor in named_tensors(model):
            raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(tensor.shape),
                            "offset": offset, "length": len(raw)})
            offset += len(raw)
    (directory / MANIFEST_FILE).write_text(
        json.dumps({"tensors": entries}, indent=2) + "\n")
    (directory / CONFIG_FILE).write_text(
        json.dumps(model.config.to_dict(), indent=2) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"{path.name} is not valid JSON: {exc}") from exc


def load_model(directory: str | Path, requires_grad: bool = True) -> Model:
    """Load a checkpoint directory; raises CorruptionError on any inconsistency."""
    directory = Path(directory)
    cfg = ModelConfig.from_dict(_read_json(directory / CONFIG_FILE))
    manifest = _read_json(directory / MANIFEST_FILE)
    entries = manifest.get("tensors")
    if not isinstance(entries, list):
        raise CorruptionError("manifest.json has no tensor list")

    expected = expected_tensor_shapes(cfg)
    if len(entries) != len(expected):
        raise CorruptionError(
            f"manifest lists {len(entries)} tensors, config implies {len(expected)}")

    buf = (directory / WEIGHTS_FILE).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry, (name, shape) in zip(entries, expected):
        if entry.get("name") != name:
            raise CorruptionError(f"manifest tensor {entry.get('name')!r} where {name!r} expected")
        if tuple(entry.get("shape", ())) != shape:
            raise CorruptionError(
                f"tensor {name}: manifest shape {entry.get('shape')} does not match expected {list(shape)}")
        length = int(np.prod(shape, dtype=np.int64)) * 8
        if entry.get("offset") != offset or entry.get("length") != length:
            raise CorruptionError(f"tensor {name}: bad offset/length in manifest")
        if offset + length > len(buf):
            raise CorruptionError(f"weights.bin truncated at tensor {name}")
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=length // 8,
                                     offset=offset).reshape(shape).copy()
        offset += length
    if offset != len(buf):
        raise CorruptionError(
            f"weights.bin holds {len(buf)} bytes, manifest accounts for {offset}")
    return assemble_model(cfg, arrays, requires_grad=requires_grad)


@contextmanager
def atomic_dir(target: str | Path):
    """Stage writes in a temp sibling, rename into place only on success.

    The target must not already exist non-empty; a failed body leaves no
    trace of the attempt.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.exists() and any(target.iterdir()):
        raise ContractError(f"output directory {target} already exists and is not empty")
    tmp = target.parent / f".{target.name}.staging-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        target.rmdir()
    tmp.rename(target)
