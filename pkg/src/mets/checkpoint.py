"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"METSCKPT"                    magic
    u32 version
    u32 n, n bytes UTF-8 JSON      config block: {"encoder": {...}, "meta": {...}}
    u32 tensor count
    per tensor:
        u16 n, n bytes UTF-8       name
        u8 ndim, ndim x u32        shape
        prod(shape) x f32          data
"""

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, ModelParams, build_encoder
from .errors import CheckpointError
from .ops import BatchNormState
from .tensor import Tensor

MAGIC = b"METSCKPT"
VERSION = 1


def save_checkpoint(model, path):
    path = Path(path)
    block = json.dumps({"encoder": model.config.to_dict(), "meta": model.meta}, sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(block)), block,
              struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Return ``(config_block, {name: float32 array})`` without building a model."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path.read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (n,) = r.unpack("<I")
    try:
        block = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt config block") from None
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return block, arrays


def load_checkpoint(path, expected_config=None):
    """Rebuild :class:`ModelParams` (float32). Rejects a config other than ``expected_config``."""
    block, arrays = read_checkpoint(path)
    try:
        config = EncoderConfig.from_dict(block["encoder"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid encoder config ({exc})") from None
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: config mismatch: checkpoint has {config}, expected {expected_config}")

    template = build_encoder(config, seed=0, dtype=np.float32)
    params, bn, buffers = {}, {}, {}
    for name, ref in template.params.items():
        arr = arrays.pop(name, None)
        if arr is None or arr.shape != ref.shape:
            raise CheckpointError(f"{path}: tensor {name!r} missing or misshapen")
        params[name] = Tensor(arr, requires_grad=True)
    for name in template.bn_states:
        try:
            bn[name] = BatchNormState(arrays.pop(name + ".running_mean"), arrays.pop(name + ".running_var"))
        except KeyError:
            raise CheckpointError(f"{path}: running stats for {name!r} missing") from None
    for name in list(arrays):
        if not name.startswith("buffer."):
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        buffers[name[len("buffer."):]] = arrays.pop(name)
    return ModelParams(config, params, bn, buffers, dict(block.get("meta", {})))
