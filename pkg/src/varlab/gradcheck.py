"""Central-difference check of the analytic gradients on tiny float64 models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NORM_ROLES, Model, ModelConfig, cross_entropy, forward, loss_and_grads
from .numerics import Prng

TOLERANCE = 1e-5


def tiny_config(arch: str) -> ModelConfig:
    return ModelConfig(arch=arch, d_model=16, n_layers=2, n_heads=2, d_ff=24, vocab_size=11, ctx_len=6)


@dataclass
class GradCheckReport:
    arch: str
    per_role: dict[str, float] = field(default_factory=dict)
    coords_per_role: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_role.values())

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _random_model(cfg: ModelConfig, prng: Prng) -> Model:
    # O(1) weights keep gradients well above finite-difference noise
    model = Model(cfg, "float64")
    for h in model.handles:
        z = prng.standard_normal(int(np.prod(h.shape))).reshape(h.shape)
        if h.role in NORM_ROLES:
            base = 1.0 if h.path.endswith(".weight") else 0.0
            model.params[h.path] = base + 0.3 * z
        else:
            model.params[h.path] = 0.5 * z
    return model


def rel_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    return 0.0 if scale == 0.0 else abs(analytic - numeric) / scale


def grad_check(arch: str, seed: int = 0, coords: int = 100, step: float = 1e-5,
               batch: int = 2, corrupt: bool = False) -> GradCheckReport:
    """Max relative error per role over `coords` sampled coordinates.

    `corrupt` perturbs one analytic gradient entry so the detector can be tested.
    """
    cfg = tiny_config(arch)
    prng = Prng(seed)
    model = _random_model(cfg, prng)
    tokens = prng.integers(batch * cfg.ctx_len, cfg.vocab_size).reshape(batch, cfg.ctx_len)
    targets = prng.integers(batch * cfg.ctx_len, cfg.vocab_size).reshape(batch, cfg.ctx_len)
    _, grads = loss_and_grads(model, tokens, targets)
    if corrupt:
        g = grads["lm_head"]
        g.flat[0] += 0.1 * (abs(g.flat[0]) + 1e-3)

    roles: dict[str, list] = {}
    for h in model.handles:
        roles.setdefault(h.role, []).append(h)

    report = GradCheckReport(arch, coords_per_role=coords)
    for role, handles in roles.items():
        sizes = np.array([np.prod(h.shape) for h in handles])
        picks = prng.integers(coords, int(sizes.sum()))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        worst = 0.0
        if corrupt and role == "lm_head":
            picks[0] = offsets[[h.path for h in handles].index("lm_head")]
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            h = handles[i]
            p = model.params[h.path].reshape(-1)
            j = int(flat - offsets[i])
            old = p[j]
            p[j] = old + step
            up = cross_entropy(forward(model, tokens)[0], targets)
            p[j] = old - step
            down = cross_entropy(forward(model, tokens)[0], targets)
            p[j] = old
            numeric = (up - down) / (2 * step)
            worst = max(worst, rel_error(float(grads[h.path].reshape(-1)[j]), numeric))
        report.per_role[role] = worst
    return report
