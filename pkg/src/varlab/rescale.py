"""In-training weight rescaling: UWR, ZWR, TVR and the token-interval scheduler."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .model import DECODER_2D_ROLES, Model, ParamHandle, param_iter
from .numerics import moments

log = logging.getLogger(__name__)

STRATEGIES = ("none", "uwr", "zwr", "tvr")


@dataclass
class RescaleSpec:
    strategy: str = "none"
    interval_tokens: int = 20_000
    sigma_target: float | None = None
    depth_scaled: bool = False
    roles: tuple[str, ...] = DECODER_2D_ROLES

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown rescale strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.interval_tokens <= 0:
            raise InvalidArgument("rescale interval_tokens must be positive")
        if self.strategy == "tvr" and (self.sigma_target is None or self.sigma_target <= 0):
            raise InvalidArgument("tvr needs a positive sigma_target")

    def target_for(self, handle: ParamHandle) -> float:
        """sigma_target for this handle, divided by sqrt(layer) when depth-scaled."""
        if self.depth_scaled:
            return self.sigma_target / math.sqrt(handle.layer)
        return self.sigma_target


def uwr_apply(w: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm."""
    x = np.asarray(w, dtype=np.float64)
    norm = math.sqrt(float(np.dot(x.ravel(), x.ravel())))
    if norm == 0.0:
        raise DegenerateInput("zero matrix has no direction to keep")
    return (x / norm).astype(w.dtype)


def _restandardize(w: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise InvalidArgument("target std must be positive")
    mean, std = moments(w)
    if std == 0.0:
        raise DegenerateInput("tensor has zero standard deviation")
    x = np.asarray(w, dtype=np.float64)
    z = (x - mean) / std
    return (z * sigma + mean).astype(w.dtype)


def zwr_apply(w: np.ndarray, sigma_init: float) -> np.ndarray:
    """z-score the weights, then restore the init std and the current mean."""
    return _restandardize(w, sigma_init)


def tvr_apply(w: np.ndarray, sigma_target: float) -> np.ndarray:
    """Same transform as ZWR, but towards a chosen target std."""
    return _restandardize(w, sigma_target)


@dataclass
class RescaleEvent:
    tokens_seen: int
    strategy: str
    touched: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    pre: dict[str, tuple[float, float]] = field(default_factory=dict)
    post: dict[str, tuple[float, float]] = field(default_factory=dict)


def apply_strategy(model: Model, spec: RescaleSpec, tokens_seen: int = 0) -> RescaleEvent:
    """Rescale every target handle once.  Degenerate tensors are skipped with a warning."""
    event = RescaleEvent(tokens_seen, spec.strategy)
    if spec.strategy == "none":
        return event
    for h in param_iter(model, spec.roles):
        w = model.params[h.path]
        event.pre[h.path] = moments(w)
        try:
            if spec.strategy == "uwr":
                new = uwr_apply(w)
            elif spec.strategy == "zwr":
                new = zwr_apply(w, h.init_std_effective)
            else:
                new = tvr_apply(w, spec.target_for(h))
        except DegenerateInput as exc:
            log.warning("skipping %s at %d tokens: %s", h.path, tokens_seen, exc)
            event.skipped.append(h.path)
            continue
        model.params[h.path] = new
        event.touched.append(h.path)
        event.post[h.path] = moments(new)
    return event


def rescale_tick(model: Model, spec: RescaleSpec, tokens_seen: int, last_applied: int,
                 events: list | None = None) -> tuple[bool, int]:
    """Apply the strategy when a full interval has elapsed since the last application.

    At most one application per call, however many intervals were crossed.
    The RescaleEvent is appended to `events` when given.
    """
    if tokens_seen < last_applied:
        raise InvalidArgument("tokens_seen went backwards")
    if spec.strategy == "none" or tokens_seen - last_applied < spec.interval_tokens:
        return False, last_applied
    event = apply_strategy(model, spec, tokens_seen)
    if events is not None:
        events.append(event)
    return True, tokens_seen
