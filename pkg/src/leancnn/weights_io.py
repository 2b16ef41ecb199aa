"""Binary weights file (little-endian).

Layout::

    b"LCW1"
    u32 entry count
    per entry:
        u32 name length, UTF-8 name ("layer/slot")
        u32 rank, u32 dims[rank]
        u8  element type (0 = float32, 1 = float64)
        raw values, row-major

Trainability flags are run configuration and are not stored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .arch import ArchitectureSpec
from .params import LayerParams, ParameterSet

MAGIC = b"LCW1"
_TYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class WeightsFormatError(ValueError):
    pass


def encode_entries(entries) -> bytes:
    entries = list(entries)
    parts = [MAGIC, struct.pack("<I", len(entries))]
    for name, arr in entries:
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise WeightsFormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(arr, dtype=_TYPES[tag]).tobytes())
    return b"".join(parts)


def decode_entries(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise WeightsFormatError("bad magic (not an LCW1 weights file)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise WeightsFormatError("truncated weights file")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(data):
            raise WeightsFormatError("truncated weights file")
        try:
            name = bytes(data[pos : pos + n]).decode("utf-8")
        except UnicodeDecodeError:
            raise WeightsFormatError("entry name is not valid UTF-8") from None
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        (tag,) = take("<B")
        if tag not in _TYPES:
            raise WeightsFormatError(f"{name}: unknown element type tag {tag}")
        dtype = _TYPES[tag]
        size = int(np.prod(dims)) * dtype.itemsize
        if pos + size > len(data):
            raise WeightsFormatError("truncated weights file")
        out[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=pos).reshape(dims).astype(dtype.newbyteorder("="))
        pos += size
    if pos != len(data):
        raise WeightsFormatError(f"{len(data) - pos} trailing bytes")
    return out


def save_weights(path, params: ParameterSet) -> None:
    Path(path).write_bytes(encode_entries(params.tensors()))


def load_weights(path, spec: ArchitectureSpec | None = None) -> ParameterSet:
    """Read a weights file; with ``spec``, trainable flags come from the spec."""
    entries = decode_entries(Path(path).read_bytes())
    grouped: dict[str, dict[str, np.ndarray]] = {}
    for key, arr in entries.items():
        layer, _, slot = key.rpartition("/")
        grouped.setdefault(layer, {})[slot] = arr
    flags = {}
    if spec is not None:
        flags = {name: layer.trainable for name, layer, _ in spec.parametric()}
    params = ParameterSet()
    for layer, slots in grouped.items():
        if "weights" not in slots or "bias" not in slots:
            raise WeightsFormatError(f"{layer}: missing weights or bias entry")
        aux = {k: v for k, v in slots.items() if k not in ("weights", "bias")}
        params[layer] = LayerParams(slots["weights"], slots["bias"], flags.get(layer, True), aux)
    return params
