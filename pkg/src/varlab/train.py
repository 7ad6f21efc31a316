"""The training loop: batch, loss/backward, clip, AdamW, rescale tick, telemetry, checkpoints."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

from . import checkpoint as ckpt_mod
from . import config as config_mod
from .checkpoint import Checkpoint, TrainerState
from .config import RunConfig
from .data import batch_at, load_corpus, pack
from .errors import InvalidArgument, NumericFailure
from .init import apply_init
from .model import Model, loss_and_grads, param_iter
from .numerics import Prng
from .optim import OptimState, adamw_step, clip_global_norm, decay_mask, lr_at
from .rescale import rescale_tick
from .telemetry import (
    ActivationRecord,
    RescaleRecord,
    RunLogRecord,
    StdRecord,
    ThroughputRecord,
    probe_prompt,
    record_param_stats,
    write_csv,
)

log = logging.getLogger(__name__)

CSV_FILES = {
    "std.csv": StdRecord,
    "run.csv": RunLogRecord,
    "throughput.csv": ThroughputRecord,
    "activations.csv": ActivationRecord,
    "rescale.csv": RescaleRecord,
}


@dataclass
class TrainResult:
    out_dir: Path
    tokens_seen: int
    steps: int
    final_loss: float | None
    paused: bool
    checkpoint: Path


def ckpt_name(tokens: int) -> str:
    return f"ckpt_{tokens:012d}.bin"


def new_run(cfg: RunConfig) -> Checkpoint:
    """Freshly initialized model and zeroed optimizer/trainer state."""
    cfg.validate()
    prng = Prng(cfg.train.seed)
    model = Model(cfg.model, cfg.train.dtype)
    apply_init(model, cfg.init, prng)
    o = cfg.optim
    optim = OptimState(o.beta1, o.beta2, o.eps, o.weight_decay, o.mode)
    return Checkpoint(cfg, model, optim, TrainerState(), prng.get_state())


class _Sink:
    def __init__(self, out: Path):
        self.out = out

    def reset(self) -> None:
        for name, cls in CSV_FILES.items():
            write_csv([], self.out / name, record_type=cls)

    def append(self, name: str, records) -> None:
        write_csv(records, self.out / name, record_type=CSV_FILES[name], append=True)


def train(cfg: RunConfig | None = None, *, out_dir=None, resume=None, stop_at_tokens: int | None = None) -> TrainResult:
    """Run (or resume) training until total_tokens, or until stop_at_tokens when given.

    Resuming appends to the CSVs in the output directory, so a paused and
    resumed run leaves the same deterministic files as an uninterrupted one.
    """
    if resume is not None:
        state = ckpt_mod.load(resume)
        cfg = state.config
    elif cfg is not None:
        state = new_run(cfg)
    else:
        raise InvalidArgument("need a config or a checkpoint to resume")
    out = Path(out_dir or cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sink = _Sink(out)
    model, optim, tr = state.model, state.optim, state.trainer

    if resume is None:
        config_mod.save(cfg, out / "config.cfg")
        sink.reset()
        sink.append("std.csv", record_param_stats(model, 0))

    stream = load_corpus(cfg.data.path, cfg.data.format, cfg.data.max_bytes)
    if stream.vocab_size > cfg.model.vocab_size:
        raise InvalidArgument(f"corpus vocab {stream.vocab_size} exceeds model vocab {cfg.model.vocab_size}")
    pairs = pack(stream, cfg.model.ctx_len)
    B = cfg.train.batch_size
    batch_tokens = B * cfg.model.ctx_len
    sched = cfg.schedule()
    decay = decay_mask(model, optim.decay_roles)
    targets_2d = param_iter(model, cfg.rescale.roles)
    total = cfg.train.total_tokens
    ck_every = cfg.train.checkpoint_interval_tokens
    window_start = time.perf_counter()
    window_tokens0 = tr.tokens_seen
    final_loss = None

    def snapshot(name: str) -> Path:
        path = out / name
        ckpt_mod.save(state, path)
        return path

    try:
        while tr.tokens_seen < total:
            inputs, targets = batch_at(pairs, B, cfg.train.seed, tr.step)
            loss, grads = loss_and_grads(model, inputs, targets)
            if cfg.optim.grad_clip > 0:
                grads = clip_global_norm(grads, cfg.optim.grad_clip)
            tokens = tr.tokens_seen + batch_tokens
            lr = lr_at(sched, tokens)
            adamw_step(model.params, grads, optim, lr, decay)
            tr.tokens_seen = tokens
            tr.step += 1
            tr.window_loss_sum += loss
            tr.window_steps += 1

            events = []
            _, tr.last_rescale = rescale_tick(model, cfg.rescale, tokens, tr.last_rescale, events)
            for ev in events:
                rows = []
                for h in targets_2d:
                    if h.path in ev.pre:
                        rows.append(StdRecord(tokens, h.path, h.layer, h.role, *ev.pre[h.path], "pre_rescale"))
                    if h.path in ev.post:
                        rows.append(StdRecord(tokens, h.path, h.layer, h.role, *ev.post[h.path], "post_rescale"))
                sink.append("std.csv", rows)
                sink.append("rescale.csv", [RescaleRecord(tokens, ev.strategy, len(ev.touched), len(ev.skipped))])

            if tokens - tr.last_log >= cfg.train.log_interval_tokens or tokens >= total:
                final_loss = tr.window_loss_sum / tr.window_steps
                sink.append("run.csv", [RunLogRecord(tokens, tr.step, final_loss, lr)])
                sink.append("std.csv", record_param_stats(model, tokens))
                now = time.perf_counter()
                tps = (tokens - window_tokens0) / max(now - window_start, 1e-9)
                sink.append("throughput.csv", [ThroughputRecord(tokens, tr.step, tps)])
                window_start, window_tokens0 = now, tokens
                tr.last_log = tokens
                tr.window_loss_sum, tr.window_steps = 0.0, 0
                log.info("tokens=%d step=%d loss=%.4f lr=%.3g tok/s=%.0f", tokens, tr.step, final_loss, lr, tps)

            if ck_every and tokens // ck_every > (tokens - batch_tokens) // ck_every and tokens < total:
                snapshot(ckpt_name(tokens))
            if stop_at_tokens is not None and tokens >= stop_at_tokens and tokens < total:
                path = snapshot(ckpt_name(tokens))
                return TrainResult(out, tokens, tr.step, final_loss, True, path)
    except NumericFailure:
        sink.append("std.csv", record_param_stats(model, tr.tokens_seen, phase="failure"))
        raise

    path = snapshot("final.bin")
    sink.append("activations.csv", probe_prompt(model))
    return TrainResult(out, tr.tokens_seen, tr.step, final_loss, False, path)
