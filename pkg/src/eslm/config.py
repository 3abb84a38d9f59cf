"""Experiment configuration: strict JSON with defaults, hashing, provenance."""

import hashlib
import json
from dataclasses import dataclass, field, fields

from .datasets import DataConfig
from .errors import ConfigError
from .funnel import EpisodeConfig, WorldConfig
from .optim import AdagradConfig
from .training import VARIANTS


@dataclass(frozen=True)
class FunnelSettings:
    ps_size: int = 25
    impression_size: int = 6
    match_noise: float = 2.0
    rank_noise: float = 1.0
    episodes_per_user: int = 4

    def validate(self, n_items: int) -> None:
        if self.episodes_per_user < 1:
            raise ConfigError("funnel.episodes_per_user must be >= 1")
        self.episode_config().validate(n_items)

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(ps_size=self.ps_size,
                             impression_size=self.impression_size,
                             match_noise=self.match_noise,
                             rank_noise=self.rank_noise)


@dataclass(frozen=True)
class DataSettings:
    seq_cap: int = 20
    test_episodes: int = 1
    train_negative_keep: float = 0.1
    n_time_buckets: int = 32

    def validate(self) -> None:
        if self.n_time_buckets < 1:
            raise ConfigError("data.n_time_buckets must be >= 1")
        self.data_config().validate()

    def data_config(self) -> DataConfig:
        return DataConfig(seq_cap=self.seq_cap, test_episodes=self.test_episodes,
                          train_negative_keep=self.train_negative_keep)


@dataclass(frozen=True)
class ModelSettings:
    emb_dim: int = 16
    n_heads: int = 2
    head_dim: int = 8
    hidden1: int = 64
    hidden2: int = 32

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"model.{f.name} must be >= 1")


@dataclass(frozen=True)
class LossSettings:
    dp_weight: float = 1.0  # weight of the conditional head's term
    alpha: float = 0.1      # candidate-stage share of the blended rank score

    def validate(self) -> None:
        if self.dp_weight < 0:
            raise ConfigError("loss.dp_weight must be >= 0")
        if self.alpha < 0:
            raise ConfigError("loss.alpha must be >= 0")


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 1500
    batch_size: int = 256
    variants: tuple = VARIANTS

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("train.steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.variants:
            raise ConfigError("train.variants must not be empty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(
                    f"train.variants contains unknown variant {v!r}")


@dataclass(frozen=True)
class RankSettings:
    traffic: float = 100.0
    pv_variant: str = "esmm"
    ps_variant: str = "eslm"

    def validate(self) -> None:
        if self.traffic <= 0:
            raise ConfigError("rank.traffic must be positive")
        for name in ("pv_variant", "ps_variant"):
            if getattr(self, name) not in VARIANTS:
                raise ConfigError(f"rank.{name} must be one of {VARIANTS}")


_SECTIONS = {
    "world": WorldConfig,
    "funnel": FunnelSettings,
    "data": DataSettings,
    "model": ModelSettings,
    "optim": AdagradConfig,
    "loss": LossSettings,
    "train": TrainSettings,
    "rank": RankSettings,
}

# every default is an assumption of this implementation unless the source
# setting was reported; the manifest provenance block records which is which
_REPORTED_KEYS = frozenset({"optim.lr", "loss.alpha"})


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=lambda: WorldConfig(
        users=2000, items=5000))
    funnel: FunnelSettings = field(default_factory=FunnelSettings)
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    optim: AdagradConfig = field(default_factory=AdagradConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    rank: RankSettings = field(default_factory=RankSettings)
    seeds: tuple = (0,)

    def validate(self) -> None:
        self.world.validate()
        self.funnel.validate(self.world.items)
        self.data.validate()
        self.model.validate()
        self.optim.validate()
        self.loss.validate()
        self.train.validate()
        self.rank.validate()
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        for s in self.seeds:
            if not isinstance(s, int) or s < 0:
                raise ConfigError(f"seeds must be nonnegative integers, got {s!r}")


def _coerce_section(name: str, cls, given: dict, base):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    allowed = {f.name for f in fields(cls)}
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown config key {name}.{key}")
    # partial sections overlay the defaults, so one-key overrides stay terse
    kwargs = {f.name: getattr(base, f.name) for f in fields(cls)}
    kwargs.update(given)
    if name == "train" and "variants" in given:
        if not isinstance(given["variants"], list):
            raise ConfigError("train.variants must be a list")
        kwargs["variants"] = tuple(given["variants"])
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a validated config from a parsed JSON document; strict keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    allowed = set(_SECTIONS) | {"seeds"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key}")
    defaults = ExperimentConfig()
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _coerce_section(name, cls, doc[name],
                                           getattr(defaults, name))
    if "seeds" in doc:
        if not isinstance(doc["seeds"], list):
            raise ConfigError("seeds must be a list of integers")
        kwargs["seeds"] = tuple(doc["seeds"])
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully normalized document: every key present, defaults filled in."""
    doc = {}
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        doc[name] = {f.name: _plain(getattr(section, f.name))
                     for f in fields(cls)}
    doc["seeds"] = list(cfg.seeds)
    return doc


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def config_hash(cfg: ExperimentConfig) -> str:
    """Twelve hex digits over the normalized document, seeds excluded.

    Seeds are excluded so sibling runs of one experiment share a hash and
    stay comparable; everything else changes the hash.
    """
    doc = config_to_dict(cfg)
    doc.pop("seeds")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def provenance(cfg: ExperimentConfig) -> dict:
    """Per-key origin marker: 'reported' settings versus our assumptions."""
    out = {}
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            key = f"{name}.{f.name}"
            out[key] = "reported" if key in _REPORTED_KEYS else "assumed"
    return out
