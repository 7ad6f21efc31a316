"""Named desk-scale experiment presets.

Desk scale keeps the reference ratios: warmup and the TVR interval are both 1%
of the token budget (1BT of 100BT at full scale).
"""

from __future__ import annotations

from .config import RunConfig
from .errors import InvalidArgument

DESK_TOKENS = 2_048_000  # 500 steps of 32 x 128
WD_TOKENS = 4_915_200  # 1200 steps


def desk(total_tokens: int = DESK_TOKENS, **overrides) -> RunConfig:
    base = {
        "model.arch": "glu_llama",
        "model.d_model": 64,
        "model.n_layers": 4,
        "model.n_heads": 2,
        "model.d_ff": 170,  # 64 * 5440/2048
        "model.ctx_len": 128,
        "model.vocab_size": 256,
        "train.batch_size": 32,
        "train.total_tokens": total_tokens,
        "optim.warmup_tokens": total_tokens // 100,
        "rescale.interval_tokens": total_tokens // 100,
        "train.log_interval_tokens": 10_000,
    }
    base.update(overrides)
    cfg = RunConfig().replace(**base)
    cfg.validate()
    return cfg


def _baseline(**kw) -> RunConfig:
    return desk(**{"init.scheme": "gaussian", "init.sigma": 0.02, **kw})


def _lir_tvr(sigma_init: float, sigma_target: float, **kw) -> RunConfig:
    return desk(**{
        "init.scheme": "lir", "init.sigma": sigma_init,
        "rescale.strategy": "tvr", "rescale.sigma_target": sigma_target, **kw,
    })


def _best(**kw) -> RunConfig:
    return _lir_tvr(0.006, 0.01, **kw)


def _wd_ablation():
    return {
        "wd0.1": _baseline(total_tokens=WD_TOKENS, **{"optim.weight_decay": 0.1}),
        "wd0.0": _baseline(total_tokens=WD_TOKENS, **{"optim.weight_decay": 0.0}),
    }


def _sir_vs_lir():
    return {
        "baseline": _baseline(),
        "sir": desk(**{"init.scheme": "sir", "init.sigma": 0.02}),
        "lir": desk(**{"init.scheme": "lir", "init.sigma": 0.02}),
    }


def _tvr_frequency():
    out = {}
    for pct in (0.5, 1, 2, 5):
        interval = int(DESK_TOKENS * pct / 100)
        out[f"every{pct}pct"] = _lir_tvr(0.006, 0.02, **{"rescale.interval_tokens": interval})
    return out


def _depth_target():
    return {
        "constant": _best(**{"rescale.depth_scaled": False}),
        "depth_scaled": _best(**{"rescale.depth_scaled": True}),
    }


def _activation_sweep():
    out = {"baseline": _baseline()}
    for s_init in (0.006, 0.01, 0.02):
        for s_target in (0.006, 0.01, 0.02):
            out[f"init{s_init}_target{s_target}"] = _lir_tvr(s_init, s_target)
    return out


def _gpt2_nonglu():
    gpt2 = {"model.arch": "gpt2_nonglu", "model.d_ff": 256, "optim.grad_clip": 1.0}
    return {
        "baseline": _baseline(**gpt2),
        "lir": desk(**{"init.scheme": "lir", "init.sigma": 0.02, **gpt2}),
        "lir_tvr": _best(**gpt2),
    }


PRESETS = {
    "baseline": lambda: {"baseline": _baseline()},
    "best": lambda: {"best": _best()},
    "wd_ablation": _wd_ablation,
    "sir_vs_lir": _sir_vs_lir,
    "tvr_frequency": _tvr_frequency,
    "depth_target": _depth_target,
    "activation_sweep": _activation_sweep,
    "gpt2_nonglu": _gpt2_nonglu,
}


def preset(name: str) -> dict[str, RunConfig]:
    """Variant name -> config.  Each variant gets its own out_dir under runs/<name>/."""
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    variants = PRESETS[name]()
    for variant, cfg in variants.items():
        cfg.train.out_dir = f"runs/{name}/{variant}"
    return variants
