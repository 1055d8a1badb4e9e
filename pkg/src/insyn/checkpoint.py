"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"INSYNCKP" | u32 version | u32 meta_len | meta (UTF-8 JSON, sorted keys)
    u32 tensor_count
    per tensor: u16 name_len | name | u8 ndim | u32 dims... | float32 LE values
"""
from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO, Dict, Iterable, Tuple

import numpy as np
import torch

MAGIC = b"INSYNCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(stream: BinaryIO, tensors: Dict[str, torch.Tensor], meta: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<II", VERSION, len(meta_bytes)))
    stream.write(meta_bytes)
    stream.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f4")
        raw = name.encode("utf-8")
        stream.write(struct.pack("<H", len(raw)))
        stream.write(raw)
        stream.write(struct.pack("<B", arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        stream.write(arr.tobytes(order="C"))


def _read(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def load_checkpoint(stream: BinaryIO) -> Tuple[Dict[str, torch.Tensor], dict]:
    if _read(stream, len(MAGIC)) != MAGIC:
        raise CheckpointError("not an InSyn checkpoint")
    version, meta_len = struct.unpack("<II", _read(stream, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read(stream, meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", _read(stream, 4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(stream, 2))
        name = _read(stream, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(stream, 1))
        shape = struct.unpack(f"<{ndim}I", _read(stream, 4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(_read(stream, 4 * size), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    return tensors, meta


def section_tensors(model: torch.nn.Module, sections: Iterable[str]) -> Dict[str, torch.Tensor]:
    out = {}
    for sec in sections:
        for name, t in model.section(sec).state_dict().items():
            out[f"{sec}.{name}"] = t
    return out


def load_sections(model: torch.nn.Module, tensors: Dict[str, torch.Tensor]) -> list:
    """Copy every ``section.param`` tensor into ``model``; returns the sections loaded."""
    grouped: Dict[str, Dict[str, torch.Tensor]] = {}
    for key, t in tensors.items():
        sec, _, name = key.partition(".")
        grouped.setdefault(sec, {})[name] = t
    for sec, state in grouped.items():
        module = model.section(sec)
        own = module.state_dict()
        if set(own) != set(state):
            raise CheckpointError(f"section {sec!r}: parameter names do not match the model")
        for name, t in state.items():
            if tuple(own[name].shape) != tuple(t.shape):
                raise CheckpointError(f"section {sec!r}: shape mismatch for {name}")
        module.load_state_dict({k: v.to(own[k].dtype) for k, v in state.items()})
    return sorted(grouped)


def checkpoint_bytes(tensors: Dict[str, torch.Tensor], meta: dict) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(buf, tensors, meta)
    return buf.getvalue()
