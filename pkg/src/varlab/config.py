"""Run configuration and its flat ``section.key = value`` text format.

Example::

    model.arch = glu_llama
    init.scheme = lir
    init.sigma = 0.006
    rescale.strategy = tvr
    rescale.sigma_target = 0.01

Blank lines and ``#`` comments are ignored.  Tuples are comma-separated,
optional values accept ``none``.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument
from .init import InitSpec
from .model import ALL_ROLES, ModelConfig
from .optim import MODES, LrSchedule
from .rescale import RescaleSpec


@dataclass
class OptimConfig:
    max_lr: float = 6e-4
    end_lr: float = 6e-5
    warmup_tokens: int = 20_480
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-7
    weight_decay: float = 0.1
    mode: str = "decoupled"
    grad_clip: float = 0.0  # 0 disables clipping

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown optim.mode {self.mode!r}")
        if self.grad_clip < 0:
            raise InvalidArgument("optim.grad_clip must be >= 0")


@dataclass
class DataConfig:
    format: str = "stdlib"  # bytes | tok | stdlib
    path: str | None = None
    max_bytes: int = 8_000_000


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_tokens: int = 2_048_000
    log_interval_tokens: int = 10_000
    checkpoint_interval_tokens: int = 0  # 0: final checkpoint only
    seed: int = 0
    dtype: str = "float32"
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    init: InitSpec = field(default_factory=InitSpec)
    rescale: RescaleSpec = field(default_factory=RescaleSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.optim.warmup_tokens, self.train.total_tokens, self.optim.max_lr, self.optim.end_lr)

    def validate(self) -> None:
        self.model.validate()
        self.init.validate()
        self.rescale.validate()
        self.optim.validate()
        self.schedule().validate()
        for roles in (self.init.roles, self.rescale.roles):
            bad = set(roles) - set(ALL_ROLES)
            if bad:
                raise InvalidArgument(f"unknown roles {sorted(bad)}")
        t = self.train
        if t.batch_size < 1 or t.total_tokens < 1 or t.log_interval_tokens < 1:
            raise InvalidArgument("train.batch_size, total_tokens and log_interval_tokens must be positive")
        if t.dtype not in ("float32", "float64"):
            raise InvalidArgument("train.dtype must be float32 or float64")
        if self.data.format not in ("bytes", "tok", "stdlib"):
            raise InvalidArgument(f"unknown data.format {self.data.format!r}")
        if self.data.format == "bytes" and self.model.vocab_size != 256:
            raise InvalidArgument("byte corpora need model.vocab_size = 256")

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. replace(**{"optim.weight_decay": 0.0})."""
        text = dumps(self)
        cfg = loads(text)
        for key, value in changes.items():
            _set(cfg, key, value if isinstance(value, str) else _format(value))
        return cfg


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(text: str, hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if text.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse(text, inner)
    if origin is tuple:
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if hint is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise InvalidArgument(f"expected a boolean, got {text!r}")
    if hint is int:
        return int(text.replace("_", ""))
    if hint is float:
        return float(text)
    return text


def _set(cfg: RunConfig, key: str, text: str) -> None:
    try:
        section, name = key.split(".", 1)
        obj = getattr(cfg, section)
    except (ValueError, AttributeError):
        raise InvalidArgument(f"unknown config key {key!r}") from None
    hints = typing.get_type_hints(type(obj))
    if name not in hints:
        raise InvalidArgument(f"unknown config key {key!r}")
    try:
        setattr(obj, name, _parse(text.strip(), hints[name]))
    except ValueError as exc:
        raise InvalidArgument(f"bad value for {key}: {exc}") from None


def loads(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        _set(cfg, key.strip(), value)
    cfg.validate()
    return cfg


def dumps(cfg: RunConfig) -> str:
    lines = []
    for section in dataclasses.fields(cfg):
        obj = getattr(cfg, section.name)
        for f in dataclasses.fields(obj):
            lines.append(f"{section.name}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def load(path) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
