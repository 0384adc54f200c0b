"""Flat ``key = value`` run configuration shared by all subcommands.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys are rejected. Booleans accept true/false/1/0, ``clip_norm`` and
``d`` accept ``none``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import SynthConfig, parse_key_values
from .evalfuse import DEFAULT_BETA
from .exceptions import ConfigError, FormatError
from .model import Architecture
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # architecture; d=None means "synth: 64, train: the dataset's dimension"
    d: int | None = None
    hidden: int = 512
    h: int = 256
    slots: int = 512
    similarity: str = "dot"
    # training
    batch: int = 64
    d_steps: int = 2
    epochs: int = 30
    lr_d: float = 1e-4
    lr_g: float = 1e-4
    momentum: float = 0.9
    lambda_cls: float = 1.0
    lambda_rec: float = 0.1
    non_saturating: bool = False
    clip_norm: float | None = None
    seed: int = 0
    # fusion
    beta: float = DEFAULT_BETA
    # synthetic data
    classes: int = 8
    progress: int = 10
    train_per_class: int = 100
    test_per_class: int = 50
    sigma_v: float = 0.1
    sigma_x: float = 0.2
    gamma: float = 1.0

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch=self.batch, d_steps=self.d_steps, epochs=self.epochs,
                           lr_d=self.lr_d, lr_g=self.lr_g, momentum=self.momentum,
                           lambda_cls=self.lambda_cls, lambda_rec=self.lambda_rec,
                           seed=self.seed, non_saturating=self.non_saturating,
                           clip_norm=self.clip_norm)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(d=64 if self.d is None else self.d, classes=self.classes,
                           progress=self.progress, train_per_class=self.train_per_class,
                           test_per_class=self.test_per_class, sigma_v=self.sigma_v,
                           sigma_x=self.sigma_x, gamma=self.gamma, seed=self.seed)

    def architecture(self, d: int, classes: int) -> Architecture:
        if self.d is not None and self.d != d:
            raise ConfigError(f"config says d={self.d} but the dataset has dimension {d}")
        return Architecture(d=d, hidden=self.hidden, h=self.h, slots=self.slots,
                            classes=classes, similarity=self.similarity)

    def as_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if "None" in kind and text.lower() == "none":
            return None
        if kind.startswith("bool"):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def apply_overrides(config: RunConfig, items: dict[str, str]) -> RunConfig:
    unknown = sorted(set(items) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return replace(config, **{k: _coerce(k, v) for k, v in items.items()})


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    config = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            config = apply_overrides(config, parse_key_values(text, str(path)))
        except FormatError as exc:
            raise ConfigError(str(exc)) from None
    return apply_overrides(config, overrides or {})
