"""Checkpoint persistence.

File layout::

    b"HCKPT1"                      magic
    uint64 little-endian           manifest length in bytes
    manifest                       UTF-8 JSON
    payload                        raw little-endian tensor bytes, manifest order

Tensor records carry ``name, dtype, shape, offset, nbytes`` with offsets
relative to the payload start. Optimizer moments, when present, are stored
as extra tensors under ``adam.m.<name>`` and ``adam.v.<name>``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .architectures import HyperUNetConfig, UNet
from .train import AdamState

__all__ = ["CheckpointError", "FORMAT_VERSION", "MAGIC", "save_checkpoint", "load_checkpoint",
           "load_checkpoint_full"]

MAGIC = b"HCKPT1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(model: UNet, path: str | os.PathLike, state: AdamState | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = sorted(model.params.items())
    if state is not None:
        tensors += [(f"adam.m.{k}", v) for k, v in sorted(state.m.items())]
        tensors += [(f"adam.v.{k}", v) for k, v in sorted(state.v.items())]
    records, chunks, offset = [], [], 0
    for name, arr in tensors:
        buf = _le(np.asarray(arr)).tobytes()
        records.append({"name": name, "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
                        "shape": list(arr.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": {"kind": model.kind, "config": model.cfg.to_dict(), "dtype": model.dtype.str},
        "optimizer_state": state is not None,
        "adam_step": state.step if state is not None else None,
        "tensors": records,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def load_checkpoint_full(path: str | os.PathLike) -> tuple[UNet, AdamState | None]:
    """Load a model and, if stored, its optimizer state."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from None
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + n:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    payload = memoryview(blob)[pos + n:]

    arrays: dict[str, np.ndarray] = {}
    expected = 0
    for rec in manifest["tensors"]:
        off, nbytes = rec["offset"], rec["nbytes"]
        if off != expected:
            raise CheckpointError(f"{path}: tensor {rec['name']!r} offset {off} is not contiguous")
        if off + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {rec['name']!r}")
        dt = np.dtype(rec["dtype"])
        arr = np.frombuffer(payload[off:off + nbytes], dtype=dt)
        if arr.size != int(np.prod(rec["shape"], dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {rec['name']!r} size does not match its shape")
        arrays[rec["name"]] = arr.reshape(rec["shape"]).astype(dt.newbyteorder("="), copy=True)
        expected = off + nbytes
    if expected != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - expected} trailing bytes after payload")

    arch = manifest["arch"]
    cfg = HyperUNetConfig(**arch["config"])
    model = UNet(cfg, hyper=arch["kind"] == "hyper", dtype=np.dtype(arch["dtype"]))
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    if set(params) != set(model.params):
        missing = sorted(set(model.params) - set(params))[:3]
        extra = sorted(set(params) - set(model.params))[:3]
        raise CheckpointError(f"{path}: parameters do not match the architecture "
                              f"(missing {missing}, unexpected {extra})")
    for k, v in params.items():
        if v.shape != model.params[k].shape:
            raise CheckpointError(f"{path}: parameter {k!r} has shape {v.shape}, "
                                  f"architecture expects {model.params[k].shape}")
    model.params = params
    state = None
    if manifest.get("optimizer_state"):
        state = AdamState(
            step=int(manifest["adam_step"]),
            m={k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")},
        )
    return model, state


def load_checkpoint(path: str | os.PathLike) -> UNet:
    return load_checkpoint_full(path)[0]
