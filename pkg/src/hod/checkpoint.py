"""Checkpoint container: JSON manifest + one little-endian binary blob.

The manifest indexes every tensor (trainable parameters and batch-norm
buffers) by name, shape, dtype, and byte offset; entries must tile the
blob exactly, with no gaps or overlaps. Loading restores every value
bit-exactly. The tokenizer rides along as its own JSON file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Optional

import numpy as np

from .bpe import BpeTokenizer
from .errors import CheckpointError
from .model import ModelConfig, VideoTextModel

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
TOKENIZER_NAME = "tokenizer.json"

_DTYPE_TAGS = {"float64": "<f8", "float32": "<f4"}


def _dtype_tag(arr: np.ndarray) -> str:
    name = arr.dtype.name
    if name not in _DTYPE_TAGS:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    return _DTYPE_TAGS[name]


def save_checkpoint(
    model: VideoTextModel, path: str, tokenizer: Optional[BpeTokenizer] = None
) -> None:
    """Write manifest, parameter blob, and (optionally) the tokenizer."""
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    items = [(name, t.data, "param") for name, t in model.params.items()]
    items += [(name, buf, "buffer") for name, buf in model.buffers.items()]
    for name, arr, kind in items:
        raw = np.ascontiguousarray(arr, dtype=_dtype_tag(arr)).tobytes()
        entries.append(
            {
                "name": name,
                "kind": kind,
                "shape": list(arr.shape),
                "dtype": _dtype_tag(arr),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(model.cfg),
        "tensors": entries,
        "total_bytes": offset,
    }
    tmp_blob = os.path.join(path, BLOB_NAME + ".tmp")
    with open(tmp_blob, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp_blob, os.path.join(path, BLOB_NAME))
    tmp_manifest = os.path.join(path, MANIFEST_NAME + ".tmp")
    with open(tmp_manifest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    os.replace(tmp_manifest, os.path.join(path, MANIFEST_NAME))
    if tokenizer is not None:
        tokenizer.save(os.path.join(path, TOKENIZER_NAME))


def load_checkpoint(path: str) -> tuple[VideoTextModel, Optional[BpeTokenizer]]:
    """Reconstruct the model (and tokenizer, when present) bit-exactly."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    blob_path = os.path.join(path, BLOB_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: missing {MANIFEST_NAME}") from exc
    except ValueError as exc:
        raise CheckpointError(f"{manifest_path}: invalid JSON: {exc}") from exc

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format version {version!r}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    try:
        with open(blob_path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: missing {BLOB_NAME}") from exc

    entries = manifest["tensors"]
    expected = 0
    for entry in entries:
        if entry["offset"] != expected:
            raise CheckpointError(
                f"{path}: manifest corruption at {entry['name']!r}: offset "
                f"{entry['offset']} but {expected} bytes precede it"
            )
        expected += entry["nbytes"]
    if expected != manifest["total_bytes"] or expected != len(blob):
        raise CheckpointError(
            f"{path}: blob length mismatch, manifest expects "
            f"{manifest['total_bytes']} bytes, file has {len(blob)}"
        )

    cfg = ModelConfig(**manifest["config"])
    model = VideoTextModel(cfg, seed=0)
    for entry in entries:
        name, kind = entry["name"], entry["kind"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=count, offset=entry["offset"])
        # astype to the native-order equivalent copies, so the result is writable
        # and carries exactly the saved values at the saved width.
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("=")).reshape(shape))
        target = model.params if kind == "param" else model.buffers
        if name not in target:
            raise CheckpointError(f"{path}: unknown tensor {name!r} in manifest")
        current = target[name].data if kind == "param" else target[name]
        if current.shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {shape}, expected {current.shape}"
            )
        if kind == "param":
            model.params[name].data = arr
            model.params[name].grad = None
        else:
            model.buffers[name] = arr

    tokenizer_path = os.path.join(path, TOKENIZER_NAME)
    tokenizer = BpeTokenizer.load(tokenizer_path) if os.path.exists(tokenizer_path) else None
    return model, tokenizer
