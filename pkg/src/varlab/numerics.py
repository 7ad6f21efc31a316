"""Dense tensor helpers, the deterministic PRNG and moment statistics.

Tensors are plain numpy arrays (C-contiguous, float32 or float64).  The PRNG
is PCG64 consumed through its raw 64-bit output only, so the stream does not
depend on numpy's distribution code (which is allowed to change between
releases).  Gaussians come from the Box-Muller transform of that stream.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import InvalidArgument, NumericFailure

DTYPES = {"float32": np.float32, "float64": np.float64}

_TWO_POW_M53 = 2.0**-53


class Prng:
    """Seeded PCG64 stream.  Same seed and call sequence give the same bits."""

    algorithm = "pcg64-raw53-boxmuller-v1"

    def __init__(self, seed: int):
        if not 0 <= seed < 2**64:
            raise InvalidArgument(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self._bitgen = np.random.PCG64(self.seed)

    def uniform01(self, n: int) -> np.ndarray:
        """n float64 draws in [0, 1) with 53 random bits each."""
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def standard_normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform01(2 * pairs)
        # 1 - u lies in (0, 1], so the log is finite.
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * math.pi) * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers in [0, high), by rejection-free multiply-shift on 53-bit uniforms."""
        return np.floor(self.uniform01(n) * high).astype(np.int64)

    def get_state(self) -> str:
        return json.dumps(self._bitgen.state, sort_keys=True)

    def set_state(self, state: str) -> None:
        self._bitgen.state = json.loads(state)


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise InvalidArgument(f"shape must be non-empty with positive dims, got {shape}")
    return shape


def sample_gaussian(shape, mean: float, std: float, prng: Prng, dtype="float32") -> np.ndarray:
    if std < 0:
        raise InvalidArgument(f"std must be >= 0, got {std}")
    shape = _check_shape(shape)
    z = prng.standard_normal(math.prod(shape))
    return (mean + std * z).reshape(shape).astype(DTYPES[dtype])


def sample_uniform(shape, lo: float, hi: float, prng: Prng, dtype="float32") -> np.ndarray:
    if not lo < hi:
        raise InvalidArgument(f"need lo < hi, got [{lo}, {hi})")
    shape = _check_shape(shape)
    u = prng.uniform01(math.prod(shape))
    x = (lo + (hi - lo) * u).astype(DTYPES[dtype])
    # rounding (and the dtype cast) can land exactly on hi
    top = np.nextafter(DTYPES[dtype](hi), DTYPES[dtype](lo))
    x = np.where(x >= DTYPES[dtype](hi), top, x)
    x = np.maximum(x, DTYPES[dtype](lo))
    return x.reshape(shape)


def moments(t: np.ndarray) -> tuple[float, float]:
    """Mean and population standard deviation (divisor M), accumulated in float64."""
    if t.size == 0:
        raise InvalidArgument("moments of an empty tensor")
    x = np.asarray(t, dtype=np.float64).ravel()
    mean = float(x.sum() / x.size)
    centered = x - mean
    std = math.sqrt(float(np.dot(centered, centered)) / x.size)
    return mean, std


def check_finite(t: np.ndarray, path: str | None = None) -> np.ndarray:
    if not np.isfinite(t).all():
        raise NumericFailure("non-finite values", path)
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise InvalidArgument(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return check_finite(np.matmul(a, b))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise InvalidArgument(f"add shape mismatch {a.shape} vs {b.shape}")
    return check_finite(a + b)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise InvalidArgument(f"mul shape mismatch {a.shape} vs {b.shape}")
    return check_finite(a * b)


def transpose(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise InvalidArgument(f"transpose expects a matrix, got shape {a.shape}")
    return np.ascontiguousarray(a.T)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along `axis` (rows by default)."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
