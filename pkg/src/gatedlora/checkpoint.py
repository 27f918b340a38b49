"""Single-file binary checkpoint: every named tensor plus its run config.

Layout, all integers little-endian:

    8 bytes   magic "gatedlra"
    u32       format version
    i64       master seed
    u32       config blob length, then that many bytes of config JSON
    u32       tensor count
    per tensor:
        u16       name length, then utf-8 name
        u8        ndim
        u32*ndim  dims
        f64*prod  payload, little-endian, row-major

Frozen tensors are stored alongside trainable ones so a loaded model is
complete without re-deriving anything; bit-exact round trips are the test
surface other implementations compare against.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import backbone as bb
from .config import RunConfig, _from_dict, _to_dict
from .errors import ContractError, DataError
from .synthdata import Dataset
from .training import build_model_for

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint", "model_from_checkpoint"]

MAGIC = b"gatedlra"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    seed: int
    config: RunConfig
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, model: bb.AdaptedModel, config: RunConfig) -> None:
    config_blob = json.dumps(_to_dict(config), separators=(",", ":")).encode("utf-8")
    named = bb.named_tensors(model)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<q", config.seed))
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        f.write(struct.pack("<I", len(named)))
        for name, tensor in named.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 8, "magic") != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise DataError(
                f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )
        (seed,) = struct.unpack("<q", _read_exact(f, 8, "seed"))
        (blob_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            raw = json.loads(_read_exact(f, blob_len, "config").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"checkpoint config blob is corrupt: {e}") from None
        config = _from_dict(raw)
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "dims"))
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            payload = _read_exact(f, 8 * count, f"payload of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if f.read(1):
            raise DataError("checkpoint has trailing bytes after the last tensor")
    return Checkpoint(version=version, seed=seed, config=config, tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint) -> bb.AdaptedModel:
    """Rebuild the architecture from the stored config, then overwrite weights.

    The freshly built model fixes the tensor inventory; the checkpoint must
    match it name for name and shape for shape.
    """
    model = build_model_for(ckpt.config.train, Dataset(spec=ckpt.config.data))
    named = bb.named_tensors(model)
    missing = sorted(set(named) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(named))
    if missing or extra:
        raise ContractError(
            f"checkpoint tensor inventory mismatch: missing {missing}, unexpected {extra}"
        )
    for name, tensor in named.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.shape:
            raise ContractError(
                f"tensor {name} has shape {stored.shape}, model expects {tensor.shape}"
            )
        tensor.data[...] = stored
    return model
