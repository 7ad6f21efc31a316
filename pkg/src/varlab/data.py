"""Byte-level and pretokenized corpora, packing into fixed windows, seeded batching.

`.tok` layout: 8-byte magic ``VLTOK001``, uint32 LE vocab_size, then ids as
little-endian uint16 (vocab_size <= 65536) or uint32.
"""

from __future__ import annotations

import functools
import sysconfig
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgument
from .numerics import Prng

TOK_MAGIC = b"VLTOK001"
BYTE_VOCAB = 256


@dataclass
class TokenStream:
    ids: np.ndarray  # int64
    vocab_size: int
    source: str  # "byte_corpus" | "pretokenized"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise InvalidArgument("token id out of range for vocab_size")

    def __len__(self) -> int:
        return int(self.ids.size)


def byte_encode(text: bytes | str) -> TokenStream:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return TokenStream(np.frombuffer(bytes(text), dtype=np.uint8), BYTE_VOCAB, "byte_corpus")


def byte_decode(stream: TokenStream) -> bytes:
    return stream.ids.astype(np.uint8).tobytes()


def _tok_dtype(vocab_size: int):
    return np.dtype("<u2") if vocab_size <= 65536 else np.dtype("<u4")


def write_tok(stream: TokenStream, path) -> None:
    body = stream.ids.astype(_tok_dtype(stream.vocab_size)).tobytes()
    header = TOK_MAGIC + np.uint32(stream.vocab_size).astype("<u4").tobytes()
    Path(path).write_bytes(header + body)


def read_tok(path) -> TokenStream:
    raw = Path(path).read_bytes()
    if raw[:8] != TOK_MAGIC:
        raise InvalidArgument(f"{path}: not a .tok file (bad magic)")
    if len(raw) < 12:
        raise InvalidArgument(f"{path}: truncated header")
    vocab = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    dt = _tok_dtype(vocab)
    if (len(raw) - 12) % dt.itemsize:
        raise InvalidArgument(f"{path}: body length is not a multiple of {dt.itemsize}")
    return TokenStream(np.frombuffer(raw[12:], dtype=dt), vocab, "pretokenized")


def stdlib_corpus(max_bytes: int = 8_000_000) -> bytes:
    """Python standard-library sources, sorted by path, as a ready-made byte corpus."""
    root = Path(sysconfig.get_paths()["stdlib"])
    chunks, total = [], 0
    for path in sorted(root.glob("*.py")):
        data = path.read_bytes()
        chunks.append(data)
        total += len(data)
        if total >= max_bytes:
            break
    return b"".join(chunks)[:max_bytes]


def load_corpus(path: str | None, fmt: str = "bytes", max_bytes: int | None = None) -> TokenStream:
    """fmt: "bytes" (raw file), "tok" (pretokenized) or "stdlib" (path ignored)."""
    if fmt == "stdlib":
        return byte_encode(stdlib_corpus(max_bytes or 8_000_000))
    if path is None:
        raise InvalidArgument("data.path is required for this data format")
    if fmt == "tok":
        stream = read_tok(path)
        if max_bytes:
            stream.ids = stream.ids[:max_bytes]
        return stream
    if fmt == "bytes":
        data = Path(path).read_bytes()
        return byte_encode(data[:max_bytes] if max_bytes else data)
    raise InvalidArgument(f"unknown data format {fmt!r}")


def pack(stream: TokenStream, ctx_len: int) -> np.ndarray:
    """Contiguous windows of ctx_len+1 ids; row[:-1] is the input, row[1:] the target.

    Windows advance by ctx_len and the final partial window is dropped.
    """
    if ctx_len < 2:
        raise InvalidArgument("ctx_len must be at least 2")
    n = (len(stream) - 1) // ctx_len
    if n < 1:
        raise InvalidArgument(f"stream of {len(stream)} tokens is shorter than ctx_len+1={ctx_len + 1}")
    ids = stream.ids
    starts = np.arange(n) * ctx_len
    return ids[starts[:, None] + np.arange(ctx_len + 1)[None, :]]


@functools.lru_cache(maxsize=4)
def epoch_order(n_pairs: int, seed: int, epoch: int = 0) -> np.ndarray:
    """Seeded permutation of pair indices for one epoch."""
    prng = Prng((seed * 1_000_003 + epoch) % 2**64)
    order = np.argsort(prng.uniform01(n_pairs), kind="stable")
    order.setflags(write=False)  # shared through the cache
    return order


def batches(pairs: np.ndarray, batch_size: int, seed: int, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """(inputs, targets) batches in a fixed shuffled order; the last partial batch is dropped."""
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    order = epoch_order(len(pairs), seed, epoch)
    for b in range(len(pairs) // batch_size):
        rows = pairs[order[b * batch_size:(b + 1) * batch_size]]
        yield rows[:, :-1], rows[:, 1:]


def batch_at(pairs: np.ndarray, batch_size: int, seed: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """The batch consumed at global `step`, cycling through reshuffled epochs."""
    per_epoch = len(pairs) // batch_size
    if per_epoch < 1:
        raise InvalidArgument(f"{len(pairs)} sequences cannot fill one batch of {batch_size}")
    epoch, b = divmod(step, per_epoch)
    order = epoch_order(len(pairs), seed, epoch)
    rows = pairs[order[b * batch_size:(b + 1) * batch_size]]
    return rows[:, :-1], rows[:, 1:]
