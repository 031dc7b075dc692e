"""Experiment configuration: YAML in, dataclasses out, snapshot back to plain dicts."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..decoder import DecodePolicy
from ..fusion import FusionConfig
from ..sources import SOURCE_TAGS
from ..worldsim import DetectorConfig, TrainConfig, WorldConfig
from ..metrics import POPE_SPLITS


class ConfigError(ValueError):
    pass


# fixed stream ids; master_seed + stream id (+ scene index) seeds each component
STREAMS = {"world": 1, "scenes": 2, "detector": 3, "mc": 4, "decode": 5, "pope": 6,
           "train": 7, "bootstrap": 8, "bench": 9}


def stream(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, STREAMS[name], *keys])


@dataclass
class PopeSettings:
    splits: list[str] = field(default_factory=lambda: list(POPE_SPLITS))
    k_per_scene: int = 3
    # separate contrast weight for probing (0.1 is a common choice); None reuses fusion.alpha
    alpha: float | None = None

    def __post_init__(self):
        bad = set(self.splits) - set(POPE_SPLITS)
        if bad:
            raise ValueError(f"unknown POPE splits {sorted(bad)}")
        if self.k_per_scene < 1:
            raise ValueError("k_per_scene must be >= 1")


@dataclass
class MetricsConfig:
    chair: bool = True
    pope: PopeSettings | None = None
    # number of scenes whose oracle rollouts supply divergence contexts; 0 disables
    divergence_scenes: int = 0
    bootstrap_resamples: int = 10_000
    # e.g. {"grid": [10, 100, 1000], "n_seeds": 20, "n_scenes": 5}
    mc_convergence: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsConfig":
        d = dict(d)
        pope = d.pop("pope", None)
        if pope is True:
            pope = {}
        return cls(pope=PopeSettings(**pope) if isinstance(pope, dict) else None, **d)


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decode: DecodePolicy = field(default_factory=DecodePolicy)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    n_scenes: int = 100
    sources: list[str] = field(default_factory=lambda: ["base", "mf_only", "coad"])
    output_dir: str | None = None
    master_seed: int = 0
    finetuned: str = "constructed"
    train: TrainConfig = field(default_factory=TrainConfig)
    train_tokens: int = 100_000
    # per-token fused distributions recorded for this many scenes (audit trail)
    audit_scenes: int = 0
    prompt: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError("n_scenes must be >= 1")
        if not self.sources:
            raise ConfigError("sources must be nonempty")
        bad = [s for s in self.sources if s not in SOURCE_TAGS]
        if bad:
            raise ConfigError(f"unknown sources {bad}; expected a subset of {SOURCE_TAGS}")
        if self.finetuned not in ("constructed", "trained"):
            raise ConfigError("finetuned must be 'constructed' or 'trained'")
        if self.fusion.marginal_mode == "exact" and self.world.n_categories > 16:
            raise ConfigError("exact marginalization needs n_categories <= 16")

    def to_dict(self) -> dict:
        metrics = dataclasses.asdict(self.metrics)
        return {
            "world": self.world.to_dict(),
            "detector": self.detector.to_dict(),
            "fusion": self.fusion.to_dict(),
            "decode": self.decode.to_dict(),
            "metrics": metrics,
            "n_scenes": self.n_scenes,
            "sources": list(self.sources),
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "finetuned": self.finetuned,
            "train": dataclasses.asdict(self.train),
            "train_tokens": self.train_tokens,
            "audit_scenes": self.audit_scenes,
            "prompt": list(self.prompt),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        try:
            parts = dict(
                world=WorldConfig.from_dict(d.pop("world", {}) or {}),
                detector=DetectorConfig.from_dict(d.pop("detector", {}) or {}),
                fusion=FusionConfig.from_dict(d.pop("fusion", {}) or {}),
                decode=DecodePolicy.from_dict(d.pop("decode", {}) or {}),
                metrics=MetricsConfig.from_dict(d.pop("metrics", {}) or {}),
                train=TrainConfig(**(d.pop("train", {}) or {})),
            )
            return cls(**parts, **d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return ExperimentConfig.from_dict(raw)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
