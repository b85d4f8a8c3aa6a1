"""Model checkpoints: "CFCK" container with a JSON header and a flat
little-endian float64 parameter payload.

Layout: "CFCK" | version u32 LE | header_len u32 LE | header JSON | payload.
The header records the model config, training config echo, named parameter
shapes in payload order, best validation loss, epoch index and RNG state.
Round-trips are bit-exact; an unknown version is rejected, not coerced.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import FormatError
from .nets import ModelBundle, ModelConfig, build_model

MAGIC = b"CFCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path, bundle: ModelBundle, train_config: dict,
                    best_val_loss: float, epoch: int, rng_state: dict) -> None:
    named = bundle.named_parameters()
    header = {
        "model": bundle.config.to_dict(),
        "train": train_config,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "best_val_loss": best_val_loss,
        "epoch": epoch,
        "rng_state": rng_state,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        f.write(head)
        for _, t in named:
            f.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (bundle, meta) where meta carries train config, best
    validation loss, epoch and RNG state."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"file ends at byte {len(blob)}, header prefix "
                          f"needs {_PREFIX.size}")
    magic, version, head_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    head_end = _PREFIX.size + head_len
    if len(blob) < head_end:
        raise FormatError(f"header truncated: file ends at byte {len(blob)}, "
                          f"expected {head_end}")
    try:
        header = json.loads(blob[_PREFIX.size:head_end].decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad header at byte {_PREFIX.size}: {exc}") from exc

    bundle = build_model(config, np.random.default_rng(0))
    named = bundle.named_parameters()
    declared = header.get("params", [])
    if [n for n, _ in named] != [p["name"] for p in declared]:
        raise FormatError("parameter names do not match the model config")

    off = head_end
    for (name, t), decl in zip(named, declared):
        if list(t.shape) != decl["shape"]:
            raise FormatError(f"shape of {name} is {decl['shape']} in header, "
                              f"model expects {list(t.shape)}")
        nbytes = t.data.size * 8
        if len(blob) < off + nbytes:
            raise FormatError(f"payload truncated at byte {len(blob)} "
                              f"while reading {name}")
        t.data = np.frombuffer(blob, dtype="<f8", count=t.data.size,
                               offset=off).reshape(t.shape).copy()
        off += nbytes
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes after payload")

    meta = {"train": header.get("train", {}),
            "best_val_loss": header.get("best_val_loss"),
            "epoch": header.get("epoch"),
            "rng_state": header.get("rng_state")}
    return bundle, meta
