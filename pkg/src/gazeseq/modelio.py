"""GZWT model weight files.

Layout (little-endian): magic 'GZWT', u32 version=1, u8 arch id (1=lstm,
2=transformer), u8 n_classes, u32 total parameter count, then every tensor in
the model's documented order as u16 name length, name bytes, u32 rows,
u32 cols, row-major float64 values. Vectors serialize as 1 x n.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .nn import build_model

GZWT_MAGIC = b"GZWT"
GZWT_VERSION = 1
_ARCH_IDS = {"lstm": 1, "transformer": 2}
_ARCH_NAMES = {v: k for k, v in _ARCH_IDS.items()}

_HEADER = struct.Struct("<4sIBBI")


def _write_model(fh, model) -> None:
    fh.write(
        _HEADER.pack(
            GZWT_MAGIC,
            GZWT_VERSION,
            _ARCH_IDS[model.arch],
            model.n_classes,
            model.param_count(),
        )
    )
    for p in model.params:
        name = p.name.encode("utf-8")
        value = np.atleast_2d(np.asarray(p.value, dtype="<f8"))
        rows, cols = value.shape
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(value).tobytes())


def _read_model(fh):
    header = fh.read(_HEADER.size)
    magic, version, arch_id, n_classes, count = _HEADER.unpack(header)
    if magic != GZWT_MAGIC:
        raise ValueError("not a GZWT file")
    if version != GZWT_VERSION:
        raise ValueError(f"unsupported GZWT version {version}")
    if arch_id not in _ARCH_NAMES:
        raise ValueError(f"unknown architecture id {arch_id}")
    model = build_model(_ARCH_NAMES[arch_id], n_classes, seed=0)
    if model.param_count() != count:
        raise ValueError(
            f"parameter count {count} does not match {model.arch} architecture"
        )
    for p in model.params:
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        if name != p.name:
            raise ValueError(f"tensor order mismatch: {name!r} != {p.name!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        if rows * cols != p.size:
            raise ValueError(f"tensor {name!r}: {rows}x{cols} != {p.size} values")
        raw = fh.read(rows * cols * 8)
        values = np.frombuffer(raw, dtype="<f8").reshape(rows, cols)
        p.value[...] = values.reshape(p.value.shape)
    return model


def save_weights(model, path) -> None:
    with open(path, "wb") as fh:
        _write_model(fh, model)


def load_weights(path):
    with open(path, "rb") as fh:
        return _read_model(fh)


def weights_to_bytes(model) -> bytes:
    buf = io.BytesIO()
    _write_model(buf, model)
    return buf.getvalue()


def weights_from_bytes(blob: bytes):
    return _read_model(io.BytesIO(blob))
