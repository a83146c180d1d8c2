"""Run configuration: a YAML file validated against nested dataclasses.

Unknown keys and wrongly typed values are rejected before any work starts.
Relative input paths resolve against the config file's directory, while
``output_dir`` is relative to the working directory. ``pkg://name``
refers to a file bundled in ``stabdesign/data``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .agent import AgentConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .reward.surrogate import SurrogateConfig

PKG_PREFIX = "pkg://"


@dataclass
class DataSection:
    pdb_files: list[str] = field(default_factory=list)
    pdb_dir: str | None = None
    chain: str | None = None
    ddg_csv: str | None = None
    flip_sign: bool = False


@dataclass
class PretrainSection:
    steps: int = 0
    lr: float = 1e-3
    mask_rate: float = 0.15


@dataclass
class SurrogateSection:
    hidden_dim: int = 64
    cross_heads: int = 4
    batch_size: int = 32
    epochs: int = 30
    lr: float = 3e-3
    encoder_lr_scale: float = 0.1
    freeze_encoder: bool = False
    k_folds: int = 5


@dataclass
class OracleSection:
    kind: str = "synthetic"  # synthetic | table | surrogate
    landscape: str = "planted"  # planted | mixed_sign
    planted_position: int | None = None  # default: middle node
    planted_aa: str = "W"
    positive_fraction: float = 0.15
    landscape_seed: int = 0
    surrogate_dir: str | None = None


@dataclass
class AgentSection:
    episodes: int = 2000
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int | None = None
    replay_capacity: int = 2000
    batch_size: int = 32
    target_sync_period: int = 50
    max_steps_per_episode: int = 1
    hidden_dim: int = 64
    lr: float = 1e-3
    reward_threshold: float | None = None
    resume_from: str | None = None


@dataclass
class BenchmarkSection:
    methods: list[str] = field(default_factory=lambda: ["random", "exhaustive", "bo_gp"])
    budget: int = 31
    repeats: int = 10
    init_samples: int = 5
    agent_checkpoint: str | None = None


@dataclass
class EvalSection:
    mode: str = "max_substitution"  # max_substitution | q1
    temperature: float = 1.0
    top_k: int = 10


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    encoder_passthrough: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    agent: AgentSection = field(default_factory=AgentSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def surrogate_config(self) -> SurrogateConfig:
        s = self.surrogate
        return SurrogateConfig(
            encoder=self.encoder, hidden_dim=s.hidden_dim, cross_heads=s.cross_heads, batch_size=s.batch_size,
            epochs=s.epochs, lr=s.lr, encoder_lr_scale=s.encoder_lr_scale, freeze_encoder=s.freeze_encoder,
            k_folds=s.k_folds, seed=self.seed,
        )

    def agent_config(self) -> AgentConfig:
        a = dataclasses.asdict(self.agent)
        a.pop("episodes")
        a.pop("resume_from")
        return AgentConfig(**a)


_CHOICES = {
    "oracle.kind": ("synthetic", "table", "surrogate"),
    "oracle.landscape": ("planted", "mixed_sign"),
    "eval.mode": ("max_substitution", "q1"),
}
_METHODS = ("random", "exhaustive", "bo_gp", "hrl")


def _check_type(value, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value is None and type(None) in args:
            return None
        for a in args:
            if a is type(None):
                continue
            try:
                return _check_type(value, a, key)
            except ConfigError:
                pass
        raise ConfigError(f"{key}: invalid value {value!r}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_check_type(v, args[0], f"{key}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    raise ConfigError(f"{key}: unsupported type {tp}")


def _build(cls, raw, prefix: str = ""):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {raw!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        keys = [f"{prefix}.{k}" if prefix else str(k) for k in unknown]
        raise ConfigError(f"unknown key(s): {', '.join(keys)}; allowed: {', '.join(sorted(names))}")
    kwargs = {k: _check_type(v, hints[k], f"{prefix}.{k}" if prefix else k) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw)
    for key, allowed in _CHOICES.items():
        sec, name = key.split(".")
        v = getattr(getattr(cfg, sec), name)
        if v not in allowed:
            raise ConfigError(f"{key}: {v!r} is not one of {', '.join(allowed)}")
    bad = [m for m in cfg.benchmark.methods if m not in _METHODS]
    if bad:
        raise ConfigError(f"benchmark.methods: unknown method(s) {bad}; choose from {', '.join(_METHODS)}")
    if cfg.agent.episodes < 1:
        raise ConfigError("agent.episodes must be >= 1")
    try:
        cfg.agent_config()
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from None
    return cfg


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        nxt = d.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted}: {k} is not a section")
        d = nxt
    d[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, val = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(val)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: {exc}") from None


def load_config(path: str | Path | None, overrides: list[str] = ()) -> tuple[RunConfig, Path]:
    """Read a YAML config (or a run manifest, whose ``config`` entry is reused).

    Returns the config and the directory that relative paths resolve against.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        p = resolve_path(str(path), Path.cwd())
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        if "config_hash" in raw and "config" in raw:
            base = Path(raw.get("base_dir", p.parent))
            raw = raw["config"]
        else:
            base = p.parent.resolve()
    for o in overrides:
        _set_path(raw, *parse_override(o))
    return from_dict(raw), base


def resolve_path(value: str, base: Path) -> Path:
    if value.startswith(PKG_PREFIX):
        return Path(str(resources.files("stabdesign.data").joinpath(value[len(PKG_PREFIX):])))
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def dump_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
