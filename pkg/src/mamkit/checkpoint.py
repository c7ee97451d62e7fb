"""MAMC checkpoint container.

Layout (little-endian)::

    b"MAMC"  u16 version  u32 metadata_length  metadata (UTF-8 JSON)
    repeated: u16 name_length  name  u8 rank  u32 dims[rank]  f32 data

The metadata records ``n_arrays`` so truncation at an array boundary is
detected too.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .errors import CheckpointFormatError, ConfigError
from .model import EncoderState, ModelConfig, check_compatible

MAGIC = b"MAMC"
VERSION = 1

PathLike = Union[str, Path]


def save_checkpoint(path: PathLike, arrays: Dict[str, np.ndarray], metadata: Optional[dict] = None) -> None:
    meta = dict(metadata or {})
    meta["n_arrays"] = len(arrays)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob]
    for name, value in arrays.items():
        raw = name.encode("utf-8")
        value = np.asarray(value)
        if value.dtype != np.float32:
            raise CheckpointFormatError(f"{name}: checkpoints store float32, got {value.dtype}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.path}: truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint as ``(arrays, metadata)``."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"{path}: not a MAMC checkpoint (bad magic)")
    version, meta_len = r.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt metadata ({exc})") from None
    n_arrays = meta.pop("n_arrays", None)
    arrays: Dict[str, np.ndarray] = {}
    while r.pos < len(r.data):
        (name_len,) = r.unpack("<H", "array name length")
        try:
            name = r.take(name_len, "array name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"{path}: corrupt array name") from None
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"shape of {name}")
        count = int(np.prod(dims)) if rank else 1
        raw = r.take(4 * count, f"array {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if n_arrays is not None and len(arrays) != n_arrays:
        raise CheckpointFormatError(f"{path}: expected {n_arrays} arrays, found {len(arrays)}")
    return arrays, meta


def save_model(path: PathLike, state: EncoderState, cfg: ModelConfig, extra: Optional[Dict[str, np.ndarray]] = None, **provenance) -> None:
    """Save parameters plus optional auxiliary arrays, recording the model config."""
    arrays = dict(state.params)
    for name, value in (extra or {}).items():
        arrays[f"aux.{name}"] = np.asarray(value, dtype=np.float32)
    meta = {"model_config": asdict(cfg), **provenance}
    save_checkpoint(path, arrays, meta)


def load_model(path: PathLike, cfg: Optional[ModelConfig] = None):
    """Load ``(state, cfg, metadata, aux)``; raises ConfigError if ``cfg`` disagrees with the file."""
    arrays, meta = load_checkpoint(path)
    stored = meta.get("model_config")
    if cfg is None:
        if stored is None:
            raise CheckpointFormatError(f"{path}: no model_config in metadata")
        try:
            cfg = ModelConfig(**stored)
        except TypeError as exc:
            raise CheckpointFormatError(f"{path}: bad model_config ({exc})") from None
    aux = {k[4:]: v for k, v in arrays.items() if k.startswith("aux.")}
    state = EncoderState({k: v for k, v in arrays.items() if not k.startswith("aux.")})
    try:
        check_compatible(state, cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return state, cfg, meta, aux
