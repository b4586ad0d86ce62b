"""Run configuration: one JSON document per experiment.

Every block maps onto a dataclass; unknown keys are rejected with their path.
The top-level ``seed`` is the only seed; it is copied into the scene, model and
training blocks, which therefore must not set their own.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ssdm.errors import ConfigError
from ssdm.segnet import ModelConfig
from ssdm.synthgeo import SceneSpec
from ssdm.train import TrainConfig

SCHEMA = 1
SEED_ENV = "SSDM_SEED"


@dataclass
class DataConfig:
    count: int = 250
    ratio: float = 0.8


@dataclass
class EvalConfig:
    split: str = "test"
    drift: float = 0.0


@dataclass
class BenchConfig:
    grids: list[list[int]] = field(default_factory=lambda: [[32, 32], [64, 64]])
    width: int = 32
    heads: int = 2
    repeats: int = 3


@dataclass
class GradcheckConfig:
    seeds: int = 20
    eps: float = 1e-5
    tol: float = 1e-4


@dataclass
class RunConfig:
    schema: int = SCHEMA
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)

    def with_seed(self, seed: int) -> RunConfig:
        d = to_dict(self)
        for name in _SEEDED:
            d[name].pop("seed")
        return from_dict({**d, "seed": int(seed)})

    def with_variant(self, variant: str) -> RunConfig:
        d = to_dict(self)
        d["model"]["variant"] = variant
        return from_dict(d)

    def hash(self) -> str:
        return config_hash(self)


_BLOCKS = {"scene": SceneSpec, "data": DataConfig, "model": ModelConfig, "train": TrainConfig,
           "eval": EvalConfig, "bench": BenchConfig, "gradcheck": GradcheckConfig}
_SEEDED = ("scene", "model", "train")


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(raw) - {"schema", "seed", *_BLOCKS})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {unknown}")
    if raw.get("schema", SCHEMA) != SCHEMA:
        raise ConfigError(f"config: unsupported schema {raw.get('schema')!r}, expected {SCHEMA}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"config.seed: expected a non-negative integer, got {seed!r}")
    blocks = {}
    for name, cls in _BLOCKS.items():
        sub = raw.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config.{name}: expected an object, got {type(sub).__name__}")
        sub = dict(sub)
        if name in _SEEDED:
            if "seed" in sub and sub["seed"] != seed:
                raise ConfigError(f"config.{name}.seed: set the top-level seed instead")
            sub["seed"] = seed
        blocks[name] = _build(cls, sub, f"config.{name}")
    if blocks["eval"].split not in ("train", "test"):
        raise ConfigError(f"config.eval.split: expected 'train' or 'test', got {blocks['eval'].split!r}")
    return RunConfig(schema=SCHEMA, seed=seed, **blocks)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "value"):  # enums
        return obj.value
    return obj


def to_dict(cfg: RunConfig) -> dict:
    return _plain(cfg)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    """First 64 bits of SHA-256 over the canonical serialization, as 16 hex digits."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return from_dict(raw)


def resolve_seed(cfg: RunConfig, flag: int | None = None, env: dict | None = None) -> RunConfig:
    """Apply seed overrides: the ``--seed`` flag wins over ``SSDM_SEED``, which wins over the file."""
    env = os.environ if env is None else env
    if flag is not None:
        return cfg.with_seed(flag)
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from e
        return cfg.with_seed(seed)
    return cfg
