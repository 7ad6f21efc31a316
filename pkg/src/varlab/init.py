"""Weight initialization schemes and their application to a model."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgument
from .model import DECODER_2D_ROLES, NORM_ROLES, Model, ModelConfig, ParamHandle
from .numerics import Prng, sample_gaussian, sample_uniform

NORMAL_SCHEMES = ("gaussian", "xavier_normal", "kaiming_normal", "sir", "lir")
UNIFORM_SCHEMES = ("xavier_uniform", "kaiming_uniform", "ds_init")
SCHEMES = NORMAL_SCHEMES + UNIFORM_SCHEMES

# "last linear transformation" of each attention and MLP block
SIR_ROLES = ("attn_o", "mlp_down")


@dataclass
class InitSpec:
    scheme: str = "gaussian"
    sigma: float = 0.02
    alpha: float = 1.0
    roles: tuple[str, ...] = DECODER_2D_ROLES
    embed_sigma: float | None = None  # None -> sigma
    lm_head_sigma: float | None = None  # None -> sigma

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"unknown init scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.sigma <= 0:
            raise InvalidArgument("init sigma must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument("ds_init alpha must lie in [0, 1]")
        for s in (self.embed_sigma, self.lm_head_sigma):
            if s is not None and s <= 0:
                raise InvalidArgument("embedding / lm_head sigma must be positive")


def _check_target(spec: InitSpec, handle: ParamHandle) -> None:
    if handle.role not in spec.roles:
        raise InvalidArgument(f"{handle.path} (role {handle.role}) is not an init target")
    if handle.layer < 1:
        raise InvalidArgument(f"{handle.path} has no decoder layer index")


def effective_bound(spec: InitSpec, handle: ParamHandle, config: ModelConfig) -> float:
    """Half-width of the uniform distribution for the uniform-family schemes."""
    _check_target(spec, handle)
    n_in, n_out = handle.n_in, handle.n_out
    if spec.scheme == "xavier_uniform":
        return math.sqrt(6.0 / (n_in + n_out))
    if spec.scheme == "kaiming_uniform":
        return math.sqrt(6.0 / n_in)
    if spec.scheme == "ds_init":
        beta = math.sqrt(6.0 / (n_in + n_out))
        return beta * spec.alpha / math.sqrt(handle.layer)
    raise InvalidArgument(f"{spec.scheme} is not a uniform-family scheme")


def effective_std(spec: InitSpec, handle: ParamHandle, config: ModelConfig) -> float:
    """Standard deviation the scheme gives this parameter.

    For uniform schemes this is bound/sqrt(3), the std of U(-bound, bound).
    """
    _check_target(spec, handle)
    scheme = spec.scheme
    if scheme == "gaussian":
        return spec.sigma
    if scheme == "xavier_normal":
        return math.sqrt(2.0 / (handle.n_in + handle.n_out))
    if scheme == "kaiming_normal":
        return math.sqrt(2.0 / handle.n_in)
    if scheme == "sir":
        if handle.role in SIR_ROLES:
            return spec.sigma / math.sqrt(2 * config.n_layers)
        return spec.sigma
    if scheme == "lir":
        return spec.sigma / math.sqrt(handle.layer)
    return effective_bound(spec, handle, config) / math.sqrt(3.0)


def apply_init(model: Model, spec: InitSpec, prng: Prng) -> None:
    """Sample every parameter in canonical handle order from one PRNG stream."""
    spec.validate()
    cfg = model.config
    embed_sigma = spec.embed_sigma or spec.sigma
    head_sigma = spec.lm_head_sigma or spec.sigma
    for h in model.handles:
        if h.role in NORM_ROLES:
            fill = 1.0 if h.path.endswith(".weight") else 0.0
            model.params[h.path][...] = fill
            continue
        if h.role in spec.roles:
            if spec.scheme in UNIFORM_SCHEMES:
                bound = effective_bound(spec, h, cfg)
                w = sample_uniform(h.shape, -bound, bound, prng, model.dtype)
            else:
                w = sample_gaussian(h.shape, 0.0, effective_std(spec, h, cfg), prng, model.dtype)
            h.init_std_effective = effective_std(spec, h, cfg)
        else:
            if h.role == "lm_head":
                sigma = head_sigma
            elif h.role in ("embedding", "pos_embedding"):
                sigma = embed_sigma
            else:
                sigma = spec.sigma
            w = sample_gaussian(h.shape, 0.0, sigma, prng, model.dtype)
            h.init_std_effective = sigma
        model.params[h.path] = w
