"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"UMBCKPT\\0"  u32 version
    text   config header, one ``key=value`` per line (all ModelConfig fields)
    tensors  model parameters
    tensors  optimizer first moments
    tensors  optimizer second moments
    text   training state as JSON (step, learning rate, rng state, ...)
    32 bytes  SHA-256 of everything above

``text`` is a u32 byte count plus UTF-8. ``tensors`` is a u32 count, then
per tensor: u16 name length, name, u8 dtype code, u8 ndim, u64 dims, raw
data. Parameters of a float32 model are stored as 32-bit floats; float64
models keep 64-bit storage so that resumed training stays bit-exact.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, UMambaNet

MAGIC = b"UMBCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    dtype: str = "float32"
    moments1: dict = field(default_factory=dict)
    moments2: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    def build_model(self):
        model = UMambaNet(self.config, dtype=np.dtype(self.dtype))
        model.load_state_dict(self.params)
        return model


def _text(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _tensors(named):
    out = [struct.pack("<I", len(named))]
    for name, arr in named.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def config_text(cfg: ModelConfig, dtype):
    lines = [f"{k}={v}" for k, v in cfg.to_dict().items()]
    lines.append(f"dtype={np.dtype(dtype).name}")
    return "\n".join(lines)


def encode(ckpt: Checkpoint):
    body = b"".join([
        MAGIC,
        struct.pack("<I", VERSION),
        _text(config_text(ckpt.config, ckpt.dtype)),
        _tensors(ckpt.params),
        _tensors(ckpt.moments1),
        _tensors(ckpt.moments2),
        _text(json.dumps(ckpt.state, sort_keys=True)),
    ])
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError("checkpoint is truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def tensors(self):
        (count,) = self.unpack("<I")
        named = {}
        for _ in range(count):
            (n,) = self.unpack("<H")
            name = self.take(n).decode("utf-8")
            code, ndim = self.unpack("<BB")
            if code not in _DTYPES:
                raise ValueError(f"{name}: unknown dtype code {code}")
            shape = self.unpack(f"<{ndim}Q")
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            named[name] = np.frombuffer(self.take(size), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return named


def decode(buf: bytes):
    """Parse and verify a checkpoint; raises ``ValueError`` on any corruption."""
    if len(buf) < len(MAGIC) + 4 + 32 or buf[:len(MAGIC)] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version} (expected {VERSION})")
    header = dict(line.split("=", 1) for line in r.text().splitlines() if line)
    dtype = header.pop("dtype", "float32")
    cfg = ModelConfig.from_dict(header)
    params, m1, m2 = r.tensors(), r.tensors(), r.tensors()
    state = json.loads(r.text())
    if r.pos != len(body):
        raise ValueError("trailing bytes in checkpoint")
    return Checkpoint(cfg, params, dtype, m1, m2, state)


def save(path, ckpt: Checkpoint):
    """Write atomically: a partial file never replaces a good checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(encode(ckpt))
        os.replace(tmp, path)
    except OSError as err:
        with contextlib.suppress(OSError):
            tmp.unlink(missing_ok=True)
        raise OSError(f"cannot write checkpoint {path}: {err}") from err


def load(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as err:
        raise OSError(f"cannot read checkpoint {path}: {err}") from err
    return decode(buf)


def save_model(path, model: UMambaNet, optimizer=None, state=None):
    ckpt = Checkpoint(model.cfg, model.state_dict(), model.dtype.name, state=dict(state or {}))
    if optimizer is not None:
        ckpt.moments1, ckpt.moments2 = optimizer.moments()
        ckpt.state.setdefault("optimizer", optimizer.scalars())
    save(path, ckpt)


def load_model(path):
    ckpt = load(path)
    return ckpt.build_model(), ckpt
