"""Decoder-only transformer with a hand-written backward pass.

Two variants:

* ``glu_llama``   RMSNorm, rotary positions, SiLU-gated MLP, no biases.
* ``gpt2_nonglu`` LayerNorm (gamma, beta), learned absolute positions, GELU MLP, no biases.

Linear weights are stored (n_out, n_in) and applied as ``x @ W.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .numerics import DTYPES, check_finite

ARCHS = ("glu_llama", "gpt2_nonglu")

DECODER_2D_ROLES = ("attn_q", "attn_k", "attn_v", "attn_o", "mlp_gate", "mlp_up", "mlp_down")
NORM_ROLES = ("input_norm", "post_attn_norm", "final_norm")
ALL_ROLES = DECODER_2D_ROLES + NORM_ROLES + ("embedding", "pos_embedding", "lm_head")

_LAYER_ROLE_ORDER = DECODER_2D_ROLES + ("input_norm", "post_attn_norm")

GELU_C = math.sqrt(2.0 / math.pi)


@dataclass
class ModelConfig:
    arch: str = "glu_llama"
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 170
    vocab_size: int = 256
    ctx_len: int = 128
    norm_eps: float = 1e-5
    rope_theta: float = 10000.0

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise InvalidArgument(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "vocab_size", "ctx_len"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise InvalidArgument("d_model must be divisible by n_heads")
        if self.arch == "glu_llama" and (self.d_model // self.n_heads) % 2:
            raise InvalidArgument("rotary embeddings need an even head dimension")
        if self.norm_eps <= 0 or self.rope_theta <= 0:
            raise InvalidArgument("norm_eps and rope_theta must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def param_count(self) -> int:
        d, f, n, v = self.d_model, self.d_ff, self.n_layers, self.vocab_size
        if self.arch == "glu_llama":
            per_layer = 4 * d * d + 3 * d * f + 2 * d
            return 2 * v * d + n * per_layer + d
        per_layer = 4 * d * d + 2 * d * f + 4 * d
        return 2 * v * d + self.ctx_len * d + n * per_layer + 2 * d


# Full-scale 1B reference configuration; desk runs scale these down.
REFERENCE_1B = ModelConfig(
    arch="glu_llama", d_model=2048, n_layers=16, n_heads=16, d_ff=5440,
    vocab_size=65536, ctx_len=2048, norm_eps=1e-5,
)


@dataclass
class ParamHandle:
    path: str
    layer: int  # 1-based decoder layer, 0 for non-layer parameters
    role: str
    shape: tuple[int, ...]
    init_std_effective: float | None = None

    @property
    def n_in(self) -> int:
        return self.shape[-1]

    @property
    def n_out(self) -> int:
        return self.shape[0]


def _layer_params(cfg: ModelConfig, l: int) -> list[tuple[str, str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    p = f"layers.{l}"
    shapes = {
        "attn_q": (f"{p}.attn.q", (d, d)),
        "attn_k": (f"{p}.attn.k", (d, d)),
        "attn_v": (f"{p}.attn.v", (d, d)),
        "attn_o": (f"{p}.attn.o", (d, d)),
    }
    if cfg.arch == "glu_llama":
        shapes["mlp_gate"] = (f"{p}.mlp.gate", (f, d))
        shapes["mlp_up"] = (f"{p}.mlp.up", (f, d))
        shapes["mlp_down"] = (f"{p}.mlp.down", (d, f))
    else:
        shapes["mlp_up"] = (f"{p}.mlp.fc_in", (f, d))
        shapes["mlp_down"] = (f"{p}.mlp.fc_out", (d, f))
    out = []
    for role in _LAYER_ROLE_ORDER:
        if role in shapes:
            path, shape = shapes[role]
            out.append((path, role, shape))
        elif role in ("input_norm", "post_attn_norm"):
            out.append((f"{p}.{role}.weight", role, (d,)))
            if cfg.arch == "gpt2_nonglu":
                out.append((f"{p}.{role}.bias", role, (d,)))
    return out


def build_handles(cfg: ModelConfig) -> list[ParamHandle]:
    """Every parameter in canonical order: embeddings, layers 1..N, final norm, LM head."""
    cfg.validate()
    d = cfg.d_model
    handles = [ParamHandle("embed", 0, "embedding", (cfg.vocab_size, d))]
    if cfg.arch == "gpt2_nonglu":
        handles.append(ParamHandle("pos_embed", 0, "pos_embedding", (cfg.ctx_len, d)))
    for l in range(1, cfg.n_layers + 1):
        handles.extend(ParamHandle(path, l, role, shape) for path, role, shape in _layer_params(cfg, l))
    handles.append(ParamHandle("final_norm.weight", 0, "final_norm", (d,)))
    if cfg.arch == "gpt2_nonglu":
        handles.append(ParamHandle("final_norm.bias", 0, "final_norm", (d,)))
    handles.append(ParamHandle("lm_head", 0, "lm_head", (cfg.vocab_size, d)))
    return handles


class Model:
    """Parameter container.  Weights start at zero and norms at gamma=1, beta=0."""

    def __init__(self, config: ModelConfig, dtype: str = "float32"):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.handles = build_handles(config)
        self.params: dict[str, np.ndarray] = {}
        for h in self.handles:
            fill = 1.0 if h.path.endswith(".weight") and h.role in NORM_ROLES else 0.0
            self.params[h.path] = np.full(h.shape, fill, dtype=DTYPES[dtype])
        self._by_path = {h.path: h for h in self.handles}

    def handle(self, path: str) -> ParamHandle:
        return self._by_path[path]

    def astype(self, dtype: str) -> "Model":
        other = Model(self.config, dtype)
        for h, oh in zip(self.handles, other.handles):
            oh.init_std_effective = h.init_std_effective
            other.params[h.path] = self.params[h.path].astype(DTYPES[dtype])
        return other


def param_iter(model: Model, roles=DECODER_2D_ROLES) -> list[ParamHandle]:
    """Handles whose role is in `roles`, layer-major in fixed role order."""
    roles = set(roles)
    return [h for h in model.handles if h.role in roles]


# ---------------------------------------------------------------------------
# single-vector reference norms (also used by the tests as oracles)
# ---------------------------------------------------------------------------


def rmsnorm(h, gamma, eps: float) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if h.shape[-1] != gamma.shape[-1]:
        raise InvalidArgument("rmsnorm: h and gamma lengths differ")
    rms = np.sqrt((h * h).mean(axis=-1, keepdims=True) + eps)
    return gamma * h / rms


def layernorm(h, gamma, beta, eps: float) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if not (h.shape[-1] == np.shape(gamma)[-1] == np.shape(beta)[-1]):
        raise InvalidArgument("layernorm: h, gamma and beta lengths differ")
    mu = h.mean(axis=-1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
    return np.asarray(gamma) * (h - mu) / np.sqrt(var + eps) + np.asarray(beta)


# ---------------------------------------------------------------------------
# batched kernels with backward
# ---------------------------------------------------------------------------


def _rms_fwd(x, g, eps):
    rstd = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    xhat = x * rstd
    return xhat * g, (xhat, rstd)


def _rms_bwd(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg


def _ln_fwd(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _rope_tables(cfg: ModelConfig, T: int, dtype):
    half = cfg.head_dim // 2
    inv_freq = 1.0 / (cfg.rope_theta ** (np.arange(half, dtype=np.float64) * 2.0 / cfg.head_dim))
    ang = np.arange(T, dtype=np.float64)[:, None] * inv_freq[None, :]
    ang = np.concatenate([ang, ang], axis=-1)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _rotate_half(x):
    half = x.shape[-1] // 2
    return np.concatenate([-x[..., half:], x[..., :half]], axis=-1)


def _rotate_half_t(y):
    half = y.shape[-1] // 2
    return np.concatenate([y[..., half:], -y[..., :half]], axis=-1)


def _silu(x):
    sig = np.negative(x)
    np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)
    return x * sig, sig


def _gelu(x):
    t = np.tanh(GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _causal_softmax(q, k, mask):
    s = q @ k.transpose(0, 1, 3, 2)
    s += mask
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def _split_heads(x, B, T, H, Dh):
    return x.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)


def _merge_heads(x, B, T, D):
    return x.transpose(0, 2, 1, 3).reshape(B, T, D)


def _causal_mask(T: int, dtype) -> np.ndarray:
    return np.triu(np.full((T, T), -np.inf, dtype=dtype), k=1)


def _check_tokens(cfg: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise InvalidArgument(f"tokens must be [batch, ctx], got shape {tokens.shape}")
    if tokens.shape[1] > cfg.ctx_len:
        raise InvalidArgument(f"sequence length {tokens.shape[1]} exceeds ctx_len {cfg.ctx_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise InvalidArgument("token id out of range")
    return tokens.astype(np.int64)


def _forward(model: Model, tokens: np.ndarray, keep: bool):
    cfg, P = model.config, model.params
    tokens = _check_tokens(cfg, tokens)
    B, T = tokens.shape
    D, H, Dh = cfg.d_model, cfg.n_heads, cfg.head_dim
    dtype = DTYPES[model.dtype]
    llama = cfg.arch == "glu_llama"
    scale = dtype(1.0 / math.sqrt(Dh))
    mask = _causal_mask(T, dtype)

    x = P["embed"][tokens]
    if not llama:
        x = x + P["pos_embed"][:T]
    else:
        cos, sin = _rope_tables(cfg, T, dtype)

    caches = []
    residuals = []
    for l in range(1, cfg.n_layers + 1):
        p = f"layers.{l}"
        c = {}
        if llama:
            h1, c["n1"] = _rms_fwd(x, P[f"{p}.input_norm.weight"], cfg.norm_eps)
        else:
            h1, c["n1"] = _ln_fwd(x, P[f"{p}.input_norm.weight"], P[f"{p}.input_norm.bias"], cfg.norm_eps)
        q = _split_heads(h1 @ P[f"{p}.attn.q"].T, B, T, H, Dh)
        k = _split_heads(h1 @ P[f"{p}.attn.k"].T, B, T, H, Dh)
        v = _split_heads(h1 @ P[f"{p}.attn.v"].T, B, T, H, Dh)
        if llama:
            q = q * cos + _rotate_half(q) * sin
            k = k * cos + _rotate_half(k) * sin
        att = _causal_softmax(q * scale, k, mask)
        a = _merge_heads(att @ v, B, T, D)
        x2 = x + a @ P[f"{p}.attn.o"].T
        if llama:
            h2, c["n2"] = _rms_fwd(x2, P[f"{p}.post_attn_norm.weight"], cfg.norm_eps)
            gate = h2 @ P[f"{p}.mlp.gate"].T
            up = h2 @ P[f"{p}.mlp.up"].T
            sg, sig = _silu(gate)
            act = sg * up
            x3 = x2 + act @ P[f"{p}.mlp.down"].T
            if keep:
                c.update(gate=gate, up=up, sg=sg, sig=sig)
        else:
            h2, c["n2"] = _ln_fwd(x2, P[f"{p}.post_attn_norm.weight"], P[f"{p}.post_attn_norm.bias"], cfg.norm_eps)
            pre = h2 @ P[f"{p}.mlp.fc_in"].T
            act, t = _gelu(pre)
            x3 = x2 + act @ P[f"{p}.mlp.fc_out"].T
            if keep:
                c.update(pre=pre, t=t)
        if keep:
            c.update(h1=h1, q=q, k=k, v=v, att=att, a=a, h2=h2, act=act)
            caches.append(c)
        residuals.append(x3)
        x = x3

    if llama:
        hf, nf = _rms_fwd(x, P["final_norm.weight"], cfg.norm_eps)
    else:
        hf, nf = _ln_fwd(x, P["final_norm.weight"], P["final_norm.bias"], cfg.norm_eps)
    logits = hf @ P["lm_head"].T
    check_finite(logits, "logits")
    state = None
    if keep:
        state = dict(tokens=tokens, caches=caches, hf=hf, nf=nf, B=B, T=T)
        if llama:
            state.update(cos=cos, sin=sin)
    return logits, residuals, state


def forward(model: Model, tokens) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits [batch, ctx, vocab] and the residual stream after each decoder layer."""
    logits, residuals, _ = _forward(model, tokens, keep=False)
    return logits, residuals


def cross_entropy(logits: np.ndarray, targets, return_grad: bool = False):
    """Mean next-token negative log-likelihood.  Optionally also d(loss)/d(logits)."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgument(f"logits {logits.shape} do not conform to targets {targets.shape}")
    if not np.isfinite(logits).all():
        raise NumericFailure("non-finite logits", "logits")
    V = logits.shape[-1]
    flat = logits.reshape(-1, V)
    tflat = targets.reshape(-1)
    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    se = e.sum(axis=-1, keepdims=True)
    logp_t = (flat[np.arange(tflat.size), tflat] - m[:, 0]) - np.log(se[:, 0])
    loss = -float(np.sum(logp_t, dtype=np.float64)) / tflat.size
    if not return_grad:
        return loss
    grad = e / se
    grad[np.arange(tflat.size), tflat] -= 1.0
    grad /= tflat.size
    return loss, grad.reshape(logits.shape)


def loss_and_grads(model: Model, tokens, targets, loss_scale: float = 1.0):
    """Forward, loss and exact reverse-mode gradients for every parameter."""
    cfg, P = model.config, model.params
    logits, _, st = _forward(model, tokens, keep=True)
    loss, dlogits = cross_entropy(logits, targets, return_grad=True)
    if loss_scale != 1.0:
        dlogits = dlogits * loss_scale
    dtype = DTYPES[model.dtype]
    dlogits = dlogits.astype(dtype, copy=False)
    B, T = st["B"], st["T"]
    D, H, Dh = cfg.d_model, cfg.n_heads, cfg.head_dim
    llama = cfg.arch == "glu_llama"
    scale = dtype(1.0 / math.sqrt(Dh))
    G: dict[str, np.ndarray] = {}

    G["lm_head"] = dlogits.reshape(-1, cfg.vocab_size).T @ st["hf"].reshape(-1, D)
    dhf = dlogits @ P["lm_head"]
    if llama:
        dx, G["final_norm.weight"] = _rms_bwd(dhf, P["final_norm.weight"], st["nf"])
    else:
        dx, G["final_norm.weight"], G["final_norm.bias"] = _ln_bwd(dhf, P["final_norm.weight"], st["nf"])

    for l in range(cfg.n_layers, 0, -1):
        p = f"layers.{l}"
        c = st["caches"][l - 1]
        # MLP branch
        act2 = c["act"].reshape(-1, c["act"].shape[-1])
        dflat = dx.reshape(-1, D)
        if llama:
            G[f"{p}.mlp.down"] = dflat.T @ act2
            dact = dx @ P[f"{p}.mlp.down"]
            dup = dact * c["sg"]
            sig = c["sig"]
            dgate = 1.0 - sig
            dgate *= c["gate"]
            dgate += 1.0
            dgate *= sig
            dgate *= c["up"]
            dgate *= dact
            h2f = c["h2"].reshape(-1, D)
            G[f"{p}.mlp.up"] = dup.reshape(-1, cfg.d_ff).T @ h2f
            G[f"{p}.mlp.gate"] = dgate.reshape(-1, cfg.d_ff).T @ h2f
            dh2 = dup @ P[f"{p}.mlp.up"] + dgate @ P[f"{p}.mlp.gate"]
            dx2n, G[f"{p}.post_attn_norm.weight"] = _rms_bwd(dh2, P[f"{p}.post_attn_norm.weight"], c["n2"])
        else:
            G[f"{p}.mlp.fc_out"] = dflat.T @ act2
            dact = dx @ P[f"{p}.mlp.fc_out"]
            dpre = dact * _gelu_grad(c["pre"], c["t"])
            G[f"{p}.mlp.fc_in"] = dpre.reshape(-1, cfg.d_ff).T @ c["h2"].reshape(-1, D)
            dh2 = dpre @ P[f"{p}.mlp.fc_in"]
            dx2n, G[f"{p}.post_attn_norm.weight"], G[f"{p}.post_attn_norm.bias"] = _ln_bwd(
                dh2, P[f"{p}.post_attn_norm.weight"], c["n2"]
            )
        dx2 = dx + dx2n

        # attention branch
        G[f"{p}.attn.o"] = dx2.reshape(-1, D).T @ c["a"].reshape(-1, D)
        da = _split_heads(dx2 @ P[f"{p}.attn.o"], B, T, H, Dh)
        att = c["att"]
        datt = da @ c["v"].transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ da
        # softmax backward, in place on datt
        datt -= (att * datt).sum(axis=-1, keepdims=True)
        datt *= att
        ds = datt
        dq = (ds @ c["k"]) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ c["q"]) * scale
        if llama:
            cos, sin = st["cos"], st["sin"]
            dq = dq * cos + _rotate_half_t(dq * sin)
            dk = dk * cos + _rotate_half_t(dk * sin)
        dq = _merge_heads(dq, B, T, D).reshape(-1, D)
        dk = _merge_heads(dk, B, T, D).reshape(-1, D)
        dv = _merge_heads(dv, B, T, D).reshape(-1, D)
        h1f = c["h1"].reshape(-1, D)
        G[f"{p}.attn.q"] = dq.T @ h1f
        G[f"{p}.attn.k"] = dk.T @ h1f
        G[f"{p}.attn.v"] = dv.T @ h1f
        dh1 = (dq @ P[f"{p}.attn.q"] + dk @ P[f"{p}.attn.k"] + dv @ P[f"{p}.attn.v"]).reshape(B, T, D)
        if llama:
            dx1n, G[f"{p}.input_norm.weight"] = _rms_bwd(dh1, P[f"{p}.input_norm.weight"], c["n1"])
        else:
            dx1n, G[f"{p}.input_norm.weight"], G[f"{p}.input_norm.bias"] = _ln_bwd(
                dh1, P[f"{p}.input_norm.weight"], c["n1"]
            )
        dx = dx2 + dx1n

    tokens = st["tokens"]
    dE = np.zeros_like(P["embed"])
    np.add.at(dE, tokens.reshape(-1), dx.reshape(-1, D))
    G["embed"] = dE
    if not llama:
        dP = np.zeros_like(P["pos_embed"])
        dP[:T] = dx.sum(axis=0)
        G["pos_embed"] = dP

    for path, g in G.items():
        if not np.isfinite(g).all():
            raise NumericFailure("non-finite gradient", path)
    return loss, {h.path: G[h.path] for h in model.handles}


def backward(model: Model, tokens, targets) -> dict[str, np.ndarray]:
    return loss_and_grads(model, tokens, targets)[1]
