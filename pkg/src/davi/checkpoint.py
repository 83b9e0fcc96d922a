"""Model checkpoints: a flat binary weights blob plus a JSON sidecar.

Blob layout, little-endian throughout:

    bytes 0-3  magic b"DAVI"
    byte  4    format version (currently 1)
    u16        architecture id length, then that many UTF-8 bytes
    u32        tensor count
    per tensor:
      u16      name length, then UTF-8 name
      u8       dtype code (1 = float32, 2 = int64)
      u8       ndim, then ndim * u32 dims
      raw little-endian payload

No pickling and no timestamps, so equal weights serialize to equal bytes.
The sidecar (<blob path> + ".json") duplicates the architecture id and
carries the training metadata (seed, epochs, manifest hash, ...).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import MissingArtifactError, ValidationError

MAGIC = b"DAVI"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.int64): 2}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    arch_id: str
    state: dict[str, torch.Tensor]
    metadata: dict = field(default_factory=dict)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path, arch_id: str, state: dict[str, torch.Tensor], metadata: dict | None = None) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<B", VERSION)]
    arch_bytes = arch_id.encode("utf-8")
    parts.append(struct.pack("<H", len(arch_bytes)))
    parts.append(arch_bytes)
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype not in _DTYPE_CODES:
            arr = arr.astype(np.float32)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    path.write_bytes(b"".join(parts))

    meta = {"format": "davi-checkpoint/1", "arch": arch_id}
    meta.update(metadata or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    view = memoryview(data)
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: bad checkpoint magic {data[:4]!r}")
    if data[4] != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {data[4]}")
    offset = 5

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, view, offset)
        offset += size
        return values

    (arch_len,) = take("<H")
    arch_id = bytes(view[offset : offset + arch_len]).decode("utf-8")
    offset += arch_len
    (n_tensors,) = take("<I")

    state: dict[str, torch.Tensor] = {}
    for _ in range(n_tensors):
        (name_len,) = take("<H")
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        code, ndim = take("<BB")
        if code not in _CODE_DTYPES:
            raise ValidationError(f"{path}: unknown tensor dtype code {code}")
        shape = take(f"<{ndim}I") if ndim else ()
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(view, dtype=dtype, count=count, offset=offset).reshape(shape)
        offset += nbytes
        state[name] = torch.from_numpy(arr.astype(_CODE_DTYPES[code]).copy())
    if offset != len(data):
        raise ValidationError(f"{path}: trailing bytes after last tensor")

    metadata: dict = {}
    sc = sidecar_path(path)
    if sc.is_file():
        metadata = json.loads(sc.read_text())
    return Checkpoint(arch_id=arch_id, state=state, metadata=metadata)


def file_digest(path) -> str:
    """sha256 of a file's bytes; used by determinism checks and manifest pinning."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"file not found: {path}")
    return hashlib.sha256(path.read_bytes()).hexdigest()
