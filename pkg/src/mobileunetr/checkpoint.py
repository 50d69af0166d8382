"""Binary checkpoint files.

Layout: ``MUTR1\\n``, an 8-byte little-endian header length, a UTF-8 JSON
header, then little-endian f32 blobs in header order. The header lists
``{name, shape, byte_offset}`` per tensor, with offsets relative to the
start of the blob section. Tensors are the model parameters, then the
batch-norm running statistics (``buffer:`` prefix), then optional AdamW
moments (``optim.m:`` / ``optim.v:`` prefixes).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import ModelConfig, load_config
from .errors import CheckpointFormatError, ConfigError, ConfigMismatchError, ShapeMismatchError
from .model import MobileUNETR, build_model
from .optim import OptimState

MAGIC = b"MUTR1\n"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def _first_difference(stored, expected, path: str = "") -> Optional[tuple[str, object, object]]:
    if isinstance(stored, dict) and isinstance(expected, dict):
        for key in list(expected) + [k for k in stored if k not in expected]:
            sub = f"{path}.{key}" if path else key
            if key not in stored or key not in expected:
                return sub, stored.get(key), expected.get(key)
            diff = _first_difference(stored[key], expected[key], sub)
            if diff:
                return diff
        return None
    if isinstance(stored, list) and isinstance(expected, list):
        if len(stored) != len(expected):
            return f"{path}.length", len(stored), len(expected)
        for i, (a, b) in enumerate(zip(stored, expected)):
            diff = _first_difference(a, b, f"{path}[{i}]")
            if diff:
                return diff
        return None
    return None if stored == expected else (path, stored, expected)


def _entries(model: MobileUNETR, optimizer: Optional[OptimState]) -> list[tuple[str, np.ndarray]]:
    params = model.named_parameters()
    out = [(name, p.data) for name, p in params]
    out += [(f"buffer:{name}", buf) for name, buf in model.named_buffers()]
    if optimizer is not None:
        if len(optimizer.m) != len(params):
            raise ShapeMismatchError(f"optimizer holds {len(optimizer.m)} slots for {len(params)} parameters")
        out += [(f"optim.m:{name}", m) for (name, _), m in zip(params, optimizer.m)]
        out += [(f"optim.v:{name}", v) for (name, _), v in zip(params, optimizer.v)]
    return out


def save_checkpoint(model: MobileUNETR, optimizer_state: Optional[OptimState], path: Union[str, Path],
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    tensors, blobs, offset = [], [], 0
    for name, arr in _entries(model, optimizer_state):
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "tensors": tensors,
        "optimizer": optimizer_state.hyperparams() if optimizer_state is not None else None,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def read_checkpoint(path: Union[str, Path]) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into its header and a name -> f32 array mapping."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise CheckpointFormatError(f"{path}: truncated before header length")
    (hlen,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + hlen:
        raise CheckpointFormatError(f"{path}: truncated header ({len(raw) - pos} of {hlen} bytes)")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {header.get('version')!r}")
    base = pos + hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        start = base + entry["byte_offset"]
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if start + nbytes > len(raw):
            raise CheckpointFormatError(f"{path}: truncated blob for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=start).reshape(shape)
    return header, arrays


def load_checkpoint(path: Union[str, Path], config: Union[None, str, dict, ModelConfig] = None,
                    allow_shape_compatible: bool = False) -> tuple[MobileUNETR, Optional[OptimState]]:
    """Rebuild the stored model and optimizer state.

    If ``config`` is given it must equal the stored one; with
    ``allow_shape_compatible`` any config whose tensor shapes match is
    accepted and the returned model uses ``config``.
    """
    header, arrays = read_checkpoint(path)
    try:
        stored_cfg = load_config(header["config"])
    except ConfigError as exc:
        raise CheckpointFormatError(f"{path}: stored config is invalid: {exc}") from None
    target_cfg = stored_cfg
    if config is not None:
        expected = load_config(config)
        diff = _first_difference(stored_cfg.to_dict(), expected.to_dict())
        if diff is not None and not allow_shape_compatible:
            raise ConfigMismatchError(*diff)
        target_cfg = expected

    model = build_model(target_cfg, seed=0)
    params = model.named_parameters()
    expected_names = [n for n, _ in params] + [f"buffer:{n}" for n, _ in model.named_buffers()]
    for name in expected_names:
        if name not in arrays:
            raise ShapeMismatchError(f"{path}: tensor {name} missing from checkpoint")
    for name, p in params:
        if arrays[name].shape != p.shape:
            raise ShapeMismatchError(f"{path}: {name} stored as {arrays[name].shape}, model expects {p.shape}")
        p.data = arrays[name].astype(p.data.dtype)
    for name, buf in model.named_buffers():
        stored = arrays[f"buffer:{name}"]
        if stored.shape != buf.shape:
            raise ShapeMismatchError(f"{path}: buffer {name} stored as {stored.shape}, expected {buf.shape}")
        model.set_buffer(name, stored)
    unknown = [n for n in arrays if n not in set(expected_names) and not n.startswith("optim.")]
    if unknown:
        raise ShapeMismatchError(f"{path}: unexpected tensors {unknown[:3]}")

    optimizer = None
    meta = header.get("optimizer")
    if meta is not None:
        m = [arrays[f"optim.m:{n}"].copy() for n, _ in params]
        v = [arrays[f"optim.v:{n}"].copy() for n, _ in params]
        optimizer = OptimState(m=m, v=v, **meta)
    return model, optimizer
