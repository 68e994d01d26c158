"""Run configuration: INI-style sections parsed with configparser.

Sections: [model], [train], [task], [eval]. Unknown keys are errors so typos
do not silently fall back to defaults. ``PROMPTGAR_SEED`` in the environment
overrides ``train.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field

from ..data.degrade import DegradationSpec
from ..data.synthetic import SyntheticTaskSpec
from ..decoder import normalize_mode
from ..model import ModelConfig

SEED_ENV = "PROMPTGAR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # full-scale recipe is 200 epochs at batch 64, lr 2e-4; desk defaults below
    lr: float = 3e-4
    steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.01
    warmup: int = 0
    min_lr: float = 0.0
    grad_clip: float = 1.0
    n_frames: int = 8
    n_instances: int = 12
    train_clips: int = 4000
    val_clips: int = 256
    val_every: int = 250
    check_head_identity: bool = False

    def __post_init__(self):
        for name in ("steps", "batch_size", "n_frames", "n_instances", "train_clips", "val_clips", "val_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")


@dataclass
class EvalConfig:
    test_clips: int = 256
    batch_size: int = 32
    head_mode: str = "both"
    trials: int = 3
    shuffle_trials: int = 5
    degradation: DegradationSpec = field(default_factory=DegradationSpec)

    def __post_init__(self):
        try:
            self.head_mode = normalize_mode(self.head_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.model.n_classes != self.task.n_classes:
            raise ConfigError(f"model has {self.model.n_classes} classes but the task has {self.task.n_classes}")
        if self.model.channels != self.task.channels:
            raise ConfigError("model.channels must match task.channels")

    def to_dict(self) -> dict:
        ev = dataclasses.asdict(self.eval)
        ev["degradation"] = _spec_to_dict(self.eval.degradation)
        return {"model": self.model.to_dict(), "train": dataclasses.asdict(self.train),
                "task": self.task.to_dict(), "eval": ev}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        ev = dict(d.get("eval", {}))
        deg = ev.pop("degradation", {}) or {}
        if deg.get("relabel_ids") is not None:
            deg["relabel_ids"] = tuple(tuple(p) for p in deg["relabel_ids"])
        try:
            return cls(ModelConfig(**d.get("model", {})), TrainConfig(**d.get("train", {})),
                       SyntheticTaskSpec(**d.get("task", {})), EvalConfig(degradation=DegradationSpec(**deg), **ev))
        except TypeError as e:
            raise ConfigError(str(e)) from None


def _spec_to_dict(spec: DegradationSpec) -> dict:
    d = dataclasses.asdict(spec)
    if d["relabel_ids"] is not None:
        d["relabel_ids"] = [list(p) for p in d["relabel_ids"]]
    return d


def _parse_value(raw: str, hint, where: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if raw.lower() in ("", "none"):
            return None
        for a in args:
            try:
                return _parse_value(raw, a, where)
            except ConfigError:
                continue
        raise ConfigError(f"{where}: cannot parse {raw!r}")
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if hint is tuple or origin is tuple:
            return tuple(int(p) for p in raw.replace("x", ",").split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None
    raise ConfigError(f"{where}: unsupported field type {hint}")


def _section(cp: configparser.ConfigParser, name: str, cls) -> dict:
    if not cp.has_section(name):
        return {}
    hints = typing.get_type_hints(cls)
    out = {}
    for key, raw in cp.items(name):
        if key not in hints:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _parse_value(raw, hints[key], f"[{name}] {key}")
    return out


def _relabel(raw: str) -> tuple:
    # "3:7, 7:3" -> ((3, 7), (7, 3))
    pairs = []
    for part in raw.split(","):
        if part.strip():
            a, b = part.split(":")
            pairs.append((int(a), int(b)))
    return tuple(pairs)


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    known = {"model", "train", "task", "eval", "degrade"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    model = _section(cp, "model", ModelConfig)
    train = _section(cp, "train", TrainConfig)
    task = _section(cp, "task", SyntheticTaskSpec)
    ev = _section(cp, "eval", EvalConfig)
    deg = {}
    if cp.has_section("degrade"):
        relabel = cp.get("degrade", "relabel_ids", fallback=None)
        if relabel is not None:
            cp.remove_option("degrade", "relabel_ids")
        deg = _section(cp, "degrade", DegradationSpec)
        if relabel:
            deg["relabel_ids"] = _relabel(relabel)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            train["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if "n_classes" in task and "n_classes" not in model:
        model["n_classes"] = task["n_classes"]
    if "channels" in task and "channels" not in model:
        model["channels"] = task["channels"]
    try:
        return RunConfig(ModelConfig(**model), TrainConfig(**train), SyntheticTaskSpec(**task),
                         EvalConfig(degradation=DegradationSpec(**deg), **ev))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, env: dict | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), env)


def tiny_config() -> RunConfig:
    """Small enough for finite-difference checks of every parameter."""
    return RunConfig(
        model=ModelConfig(dim=8, n_pooled=2, heads=2, decoder_layers=1, encoder_blocks=1, patch=(2, 4, 4)),
        train=TrainConfig(steps=50, batch_size=2, n_frames=2, n_instances=2, train_clips=16, val_clips=4, val_every=25),
        task=SyntheticTaskSpec(min_instances=2, max_instances=2, min_frames=2, max_frames=2, size=8),
        eval=EvalConfig(test_clips=4, batch_size=2),
    )
