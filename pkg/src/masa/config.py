"""Experiment configuration: strict JSON <-> dataclass round trip.

Keys named ``_note`` are accepted (and dropped) anywhere so configs can
carry comments.  Every other unknown key is an error.
"""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .variants import VARIANTS

ALGORITHMS = ("ppo", "bc", "iql")
POLICY_KINDS = ("expert", "weak", "half-expert", "weak-expert", "mixed", "asym-expert")
OUTPUT_ROOT_ENV = "MASA_OUTPUT_ROOT"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class PpoConfig:
    gamma: float = 0.99
    tau: float = 0.95
    e_clip: float = 0.2
    entropy_coef: float = 0.0
    critic_coef: float = 2.0
    learning_rate: float = 3e-4
    mini_epochs: int = 5
    kl_threshold: float = 0.0008
    grad_norm_clip: float = 1.0
    critic_epochs_after_stop: bool = True
    value_bootstrap: bool = True
    normalize_input: bool = True
    normalize_value: bool = True
    normalize_advantage: bool = True
    num_actors: int = 64
    horizon_length: int = 32
    minibatch_size: int = 512
    total_env_steps: int = 200_000
    policy_hidden: tuple[int, ...] = (128, 64)
    critic_hidden: tuple[int, ...] = (128, 64)
    activation: str = "elu"
    log_std_init: float = 0.0
    sym_loss_weights: tuple[float, float] = (1.0, 1.0)
    eval_episodes: int = 64

    def validate(self, prefix: str = "ppo") -> None:
        for name in ("gamma", "tau"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{prefix}.{name}", f"must lie in [0, 1], got {getattr(self, name)}")
        _positive(self, prefix, "e_clip", "learning_rate", "num_actors", "horizon_length", "minibatch_size",
                  "total_env_steps", "mini_epochs", "eval_episodes")
        _nonneg(self, prefix, "entropy_coef", "critic_coef", "kl_threshold", "grad_norm_clip")
        _widths(self, prefix, "policy_hidden", "critic_hidden")
        if self.activation not in ("elu", "tanh"):
            raise ConfigError(f"{prefix}.activation", f"must be 'elu' or 'tanh', got {self.activation!r}")
        if len(self.sym_loss_weights) != 2 or min(self.sym_loss_weights) < 0:
            raise ConfigError(f"{prefix}.sym_loss_weights", "must be two non-negative weights")


# settings for GPU-scale three-finger runs; far too large for desk-scale envs
LARGE_SCALE_PPO_PROFILE = dict(
    num_actors=16384, horizon_length=16, minibatch_size=16384, mini_epochs=4, learning_rate=3e-4,
    critic_coef=4.0, policy_hidden=(256, 256, 128, 128), critic_hidden=(256, 256, 128, 128),
)


@dataclass
class IqlConfig:
    expectile: float = 0.7
    temperature: float = 3.0
    discount: float = 0.99
    target_update_rate: float = 0.005
    awr_weight_clip: float = 100.0

    def validate(self, prefix: str = "offline.iql") -> None:
        if not 0.5 < self.expectile < 1.0:
            raise ConfigError(f"{prefix}.expectile", "must lie in (0.5, 1)")
        if self.temperature <= 0:
            raise ConfigError(f"{prefix}.temperature", "must be > 0")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError(f"{prefix}.discount", "must lie in [0, 1]")
        if not 0.0 < self.target_update_rate <= 1.0:
            raise ConfigError(f"{prefix}.target_update_rate", "must lie in (0, 1]")
        _positive(self, prefix, "awr_weight_clip")


@dataclass
class OfflineConfig:
    dataset: str = ""
    augment: bool = False
    grad_steps: int = 3000
    batch_size: int = 256
    learning_rate: float = 3e-4
    policy_hidden: tuple[int, ...] = (128, 64)
    critic_hidden: tuple[int, ...] = (128, 64)
    activation: str = "elu"
    log_std_init: float = -1.0
    eval_episodes: int = 100
    log_every: int = 500
    iql: IqlConfig = field(default_factory=IqlConfig)

    def validate(self, prefix: str = "offline") -> None:
        _positive(self, prefix, "grad_steps", "batch_size", "learning_rate", "eval_episodes", "log_every")
        _widths(self, prefix, "policy_hidden", "critic_hidden")
        if self.activation not in ("elu", "tanh"):
            raise ConfigError(f"{prefix}.activation", f"must be 'elu' or 'tanh', got {self.activation!r}")
        self.iql.validate(f"{prefix}.iql")


@dataclass
class DatasetConfig:
    policy_kind: str = "expert"
    episodes: int = 500
    output: str = "dataset.jsonl"

    def validate(self, prefix: str = "dataset") -> None:
        if self.policy_kind not in POLICY_KINDS:
            raise ConfigError(f"{prefix}.policy_kind", f"must be one of {POLICY_KINDS}")
        _positive(self, prefix, "episodes")


@dataclass
class RunConfig:
    run_name: str = "run"
    env_id: str = "rotreach"
    env_params: dict = field(default_factory=dict)
    variant: str = "MASA"
    algorithm: str = "ppo"
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def validate(self) -> "RunConfig":
        from .envs import ENVS, make_env

        if not self.run_name or "/" in self.run_name:
            raise ConfigError("run_name", "must be a non-empty name without '/'")
        if self.env_id not in ENVS:
            raise ConfigError("env_id", f"unknown env {self.env_id!r}; known: {sorted(ENVS)}")
        try:
            make_env(self.env_id, **self.env_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError("env_params", str(exc)) from None
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.seeds or any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds", "must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "must not repeat")
        self.ppo.validate()
        self.offline.validate()
        self.dataset.validate()
        return self

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc, "").validate()

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def output_root(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return Path(root) / self.run_name if root else Path(self.output_dir) / self.run_name


def _positive(obj, prefix, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ConfigError(f"{prefix}.{name}", f"must be > 0, got {getattr(obj, name)}")


def _nonneg(obj, prefix, *names):
    for name in names:
        if getattr(obj, name) < 0:
            raise ConfigError(f"{prefix}.{name}", f"must be >= 0, got {getattr(obj, name)}")


def _widths(obj, prefix, *names):
    for name in names:
        w = getattr(obj, name)
        if not w or any(not isinstance(x, int) or x < 1 for x in w):
            raise ConfigError(f"{prefix}.{name}", "must be a non-empty list of positive integers")


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    return x


def _coerce(tp, value, name: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(name, "must be an object")
        return _build(tp, value, name + ".")
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, "must be a list")
        (inner, *_) = typing.get_args(tp) or (object,)
        items = [_coerce(inner, v, name) for v in value]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"must be true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"must be an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"must be a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(name, f"must be a string, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(name, "must be an object")
        return {k: v for k, v in value.items() if k != "_note"}
    return value


def _build(cls, doc: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key == "_note":
            continue
        if key not in names:
            raise ConfigError(prefix + key, "unknown key")
        kwargs[key] = _coerce(hints[key], value, prefix + key)
    return cls(**kwargs)
