"""AdamW (decoupled or L2-coupled decay), global-norm clipping, warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .model import DECODER_2D_ROLES, Model

# Norm gains/biases are never decayed.
DEFAULT_DECAY_ROLES = DECODER_2D_ROLES + ("embedding", "pos_embedding", "lm_head")
MODES = ("decoupled", "l2_coupled")


@dataclass
class LrSchedule:
    warmup_tokens: int
    total_tokens: int
    max_lr: float = 6e-4
    end_lr: float = 6e-5

    def validate(self) -> None:
        if not 0 < self.warmup_tokens < self.total_tokens:
            raise InvalidArgument("need 0 < warmup_tokens < total_tokens")


def lr_at(sched: LrSchedule, tokens: int) -> float:
    if tokens <= sched.warmup_tokens:
        return sched.max_lr * tokens / sched.warmup_tokens
    p = (tokens - sched.warmup_tokens) / (sched.total_tokens - sched.warmup_tokens)
    p = min(max(p, 0.0), 1.0)
    return sched.end_lr + (sched.max_lr - sched.end_lr) * (1.0 + math.cos(math.pi * p)) / 2.0


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        flat = g.ravel().astype(np.float64)
        total += float(np.dot(flat, flat))
    return math.sqrt(total)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale every gradient by max_norm/g when the global L2 norm g exceeds max_norm."""
    if max_norm <= 0:
        raise InvalidArgument("max_norm must be positive")
    g = global_norm(grads)
    if g <= max_norm:
        return grads
    factor = max_norm / g
    return {k: (v * factor).astype(v.dtype) for k, v in grads.items()}


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-7
    weight_decay: float = 0.1
    mode: str = "decoupled"
    decay_roles: tuple[str, ...] = DEFAULT_DECAY_ROLES
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown optimizer mode {self.mode!r}; expected one of {MODES}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise InvalidArgument("eps must be positive and weight_decay non-negative")


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState,
               lr: float, decay: dict[str, bool] | None = None) -> None:
    """One in-place AdamW update.

    `decay` maps path -> whether weight decay applies; by default every
    parameter is decayed.  Model-aware callers use `decay_mask`.
    """
    state.t += 1
    t = state.t
    b1, b2, lam = state.beta1, state.beta2, state.weight_decay
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for path, w in params.items():
        g = grads[path]
        if g.shape != w.shape:
            raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {w.shape} for {path}")
        decayed = lam != 0.0 and (decay is None or decay[path])
        if decayed and state.mode == "l2_coupled":
            g = g + lam * w
        m = state.m.get(path)
        if m is None:
            m = state.m[path] = np.zeros_like(w)
            state.v[path] = np.zeros_like(w)
        v = state.v[path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if decayed and state.mode == "decoupled":
            update += lam * w
        if not np.isfinite(update).all():
            raise NumericFailure("non-finite optimizer update", path)
        w -= (lr * update).astype(w.dtype, copy=False)


def decay_mask(model: Model, roles=DEFAULT_DECAY_ROLES) -> dict[str, bool]:
    roles = set(roles)
    return {h.path: h.role in roles for h in model.handles}
