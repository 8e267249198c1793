"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic        8 bytes   b"HTRCKPT\\x00"
    version      u32       FORMAT_VERSION
    config       u32 length + UTF-8 JSON of ModelConfig
    alphabet     u32 length + UTF-8 JSON list of characters
    n_tensors    u32
    per tensor:
      name       u16 length + UTF-8
      dtype      u8        0 = float64, 1 = float32
      ndim       u8
      dims       ndim x u32
      data       prod(dims) little-endian floats, row-major
    checksum     32 bytes  SHA-256 of every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .model import Model, ModelConfig, parameter_shapes

MAGIC = b"HTRCKPT\x00"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CorruptCheckpointError):
    pass


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def checkpoint_bytes(model: Model) -> bytes:
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION),
           _blob(json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")),
           _blob(json.dumps(list(model.alphabet), ensure_ascii=False).encode("utf-8")),
           struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype(_DTYPES[_CODES[arr.dtype]], copy=False).tobytes())
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: Model, path) -> None:
    data = checkpoint_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> Model:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    try:
        (n,) = r.unpack("<I")
        config = ModelConfig.from_dict(json.loads(r.take(n).decode("utf-8")))
        (n,) = r.unpack("<I")
        alphabet = json.loads(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, KeyError) as err:
        raise CorruptCheckpointError(f"bad checkpoint header: {err}") from err
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptCheckpointError(f"unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(shape)
        params[name] = arr.astype(dt.newbyteorder("="), copy=True)
    body_end = r.pos
    digest = r.take(32)
    if r.pos != len(data):
        raise CorruptCheckpointError("trailing bytes after checksum")
    if hashlib.sha256(data[:body_end]).digest() != digest:
        raise ChecksumError("checkpoint checksum does not match its contents")
    expected = parameter_shapes(config)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise CorruptCheckpointError("tensor set does not match the stored configuration")
    return Model(config, params, list(alphabet))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
