"""Binary checkpoint format (all integers little-endian).

    magic        8 bytes  b"VARLAB01"
    version      u32
    config       u32 length + UTF-8 text (config file format)
    trainer      tokens_seen u64, step u64, last_rescale u64, last_log u64,
                 window_loss_sum f64, window_steps u64
    prng         u32 length + UTF-8 JSON bit-generator state
    params       u32 count, then per parameter:
                 u32 path length + path bytes, tensor, init_std_effective f64 (NaN = unset)
    optimizer    t u64, u32 count, then per entry: path, tensor m, tensor v

    tensor       u8 dtype code (0 float32, 1 float64), u32 rank,
                 rank x u64 dims, raw little-endian data
"""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import InvalidCheckpoint
from .model import Model
from .optim import OptimState

MAGIC = b"VARLAB01"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class TrainerState:
    tokens_seen: int = 0
    step: int = 0
    last_rescale: int = 0
    last_log: int = 0
    window_loss_sum: float = 0.0
    window_steps: int = 0


@dataclass
class Checkpoint:
    config: config_mod.RunConfig
    model: Model
    optim: OptimState
    trainer: TrainerState
    prng_state: str


def _w_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _w_tensor(buf, t: np.ndarray) -> None:
    dt = t.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise InvalidCheckpoint(f"unsupported dtype {t.dtype}")
    buf.write(struct.pack("<BI", _DTYPE_CODES[dt], t.ndim))
    buf.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    buf.write(np.ascontiguousarray(t, dtype=dt).tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise InvalidCheckpoint(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def tensor(self) -> np.ndarray:
        code, rank = self.unpack("<BI")
        if code not in _CODE_DTYPES:
            raise InvalidCheckpoint(f"{self.path}: unknown dtype code {code}")
        dims = self.unpack(f"<{rank}Q") if rank else ()
        dt = _CODE_DTYPES[code]
        count = math.prod(dims)
        data = self.take(count * dt.itemsize)
        return np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def dumps(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _w_str(buf, config_mod.dumps(ck.config))
    tr = ck.trainer
    buf.write(struct.pack("<QQQQdQ", tr.tokens_seen, tr.step, tr.last_rescale, tr.last_log,
                          tr.window_loss_sum, tr.window_steps))
    _w_str(buf, ck.prng_state)
    buf.write(struct.pack("<I", len(ck.model.handles)))
    for h in ck.model.handles:
        _w_str(buf, h.path)
        _w_tensor(buf, ck.model.params[h.path])
        std = h.init_std_effective
        buf.write(struct.pack("<d", math.nan if std is None else std))
    buf.write(struct.pack("<QI", ck.optim.t, len(ck.optim.m)))
    for path in ck.model.params:
        if path in ck.optim.m:
            _w_str(buf, path)
            _w_tensor(buf, ck.optim.m[path])
            _w_tensor(buf, ck.optim.v[path])
    return buf.getvalue()


def loads(raw: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(raw, path)
    if r.take(8) != MAGIC:
        raise InvalidCheckpoint(f"{path}: bad magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise InvalidCheckpoint(f"{path}: unsupported version {version}")
    try:
        cfg = config_mod.loads(r.string())
    except ValueError as exc:
        raise InvalidCheckpoint(f"{path}: embedded config invalid: {exc}") from None
    trainer = TrainerState(*r.unpack("<QQQQdQ"))
    prng_state = r.string()
    model = Model(cfg.model, cfg.train.dtype)
    (n,) = r.unpack("<I")
    if n != len(model.handles):
        raise InvalidCheckpoint(f"{path}: {n} parameters, config implies {len(model.handles)}")
    for h in model.handles:
        p = r.string()
        if p != h.path:
            raise InvalidCheckpoint(f"{path}: expected parameter {h.path}, found {p}")
        t = r.tensor()
        if t.shape != h.shape:
            raise InvalidCheckpoint(f"{path}: {p} has shape {t.shape}, expected {h.shape}")
        model.params[p] = t.astype(model.params[p].dtype, copy=False)
        (std,) = r.unpack("<d")
        h.init_std_effective = None if math.isnan(std) else std
    o = cfg.optim
    optim = OptimState(o.beta1, o.beta2, o.eps, o.weight_decay, o.mode)
    optim.t, count = r.unpack("<QI")
    for _ in range(count):
        p = r.string()
        m, v = r.tensor(), r.tensor()
        if p not in model.params or m.shape != model.params[p].shape or v.shape != m.shape:
            raise InvalidCheckpoint(f"{path}: optimizer entry {p} does not match the model")
        optim.m[p], optim.v[p] = m, v
    if r.pos != len(raw):
        raise InvalidCheckpoint(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(cfg, model, optim, trainer, prng_state)


def save(ck: Checkpoint, path) -> None:
    """Atomic: write a temp file next to the target, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ck))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InvalidCheckpoint(f"cannot read checkpoint {path}: {exc}") from None
    return loads(raw, path)
