"""Weight-statistics, activation-probe and run-log records, written as CSV.

Reals are printed with ``repr`` (shortest round-trip form) so identical runs
produce identical bytes.  Wall-clock throughput lives in its own file.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .data import byte_encode
from .errors import NumericFailure
from .model import Model, forward
from .numerics import moments

DEFAULT_PROMPT = "Summer is warm. Winter is cold."


@dataclass
class StdRecord:
    tokens_seen: int
    path: str
    layer: int
    role: str
    mean: float
    std: float
    phase: str = "log"  # log | pre_rescale | post_rescale | failure | checkpoint


@dataclass
class ActivationRecord:
    layer: int
    max_abs: float
    prompt_id: str


@dataclass
class RunLogRecord:
    tokens_seen: int
    step: int
    loss: float
    lr: float


@dataclass
class ThroughputRecord:
    tokens_seen: int
    step: int
    tokens_per_second: float


@dataclass
class RescaleRecord:
    tokens_seen: int
    strategy: str
    touched: int
    skipped: int


def record_param_stats(model: Model, tokens_seen: int, phase: str = "log", handles=None) -> list[StdRecord]:
    out = []
    for h in handles if handles is not None else model.handles:
        mean, std = moments(model.params[h.path])
        out.append(StdRecord(tokens_seen, h.path, h.layer, h.role, mean, std, phase))
    return out


def prompt_id(prompt: str) -> str:
    if prompt == DEFAULT_PROMPT:
        return "summer-winter"
    return "p-" + hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:10]


def probe_max_activations(model: Model, prompt_tokens, pid: str = "custom") -> list[ActivationRecord]:
    """Per decoder layer, the largest |value| in the residual stream over the prompt."""
    tokens = np.asarray(prompt_tokens, dtype=np.int64).reshape(1, -1)
    _, residuals = forward(model, tokens)
    out = []
    for l, r in enumerate(residuals, start=1):
        peak = float(np.abs(r).max())
        if not np.isfinite(peak):
            raise NumericFailure("non-finite activation", f"layers.{l}")
        out.append(ActivationRecord(l, peak, pid))
    return out


def probe_prompt(model: Model, prompt: str = DEFAULT_PROMPT) -> list[ActivationRecord]:
    ids = byte_encode(prompt).ids[: model.config.ctx_len]
    return probe_max_activations(model, ids, prompt_id(prompt))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(records, sink, record_type=None, append: bool = False) -> None:
    """Header plus one row per record to a path or text stream.  When appending to a non-empty file the header is skipped."""
    records = list(records)
    cls = record_type or (type(records[0]) if records else None)
    if cls is None:
        raise ValueError("record_type is required for an empty record list")
    if hasattr(sink, "write"):
        _write_rows(sink, cls, records, header=True)
        return
    path = Path(sink)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    try:
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
            _write_rows(fh, cls, records, write_header)
    except OSError as exc:
        raise OSError(f"cannot write telemetry to {path}: {exc}") from exc


def _write_rows(fh, cls, records, header: bool) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow([f.name for f in fields(cls)])
    for r in records:
        w.writerow([_fmt(v) for v in astuple(r)])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
