"""World configuration, scene sampling, and the oracle / pretrained / finetuned models."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..core import (BOS, EOS, N_SPECIAL, NO, PROBE, YES, Scene, Vocab,
                    as_object_vector)
from .loglinear import Featurizer, LogLinearLM

DEFAULT_CATEGORIES = (
    "person", "dog", "pizza", "knife", "fork", "table", "cup", "bench",
    "car", "bus", "bicycle", "umbrella", "chair", "cat", "bottle", "clock",
)
DEFAULT_FILLERS = (
    "a", "the", "on", "with", "and", "is", "of", "near", "some", "there",
    "in", "two", "small", "large", "sitting", "next", "to", "at", "by", "white",
)


def _names(prefix: str, defaults, n: int) -> list[str]:
    return [defaults[i] if i < len(defaults) else f"{prefix}{i}" for i in range(n)]


def _per_category(v, C: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(v, dtype=float), (C,)).copy()
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return arr


@dataclass
class WorldConfig:
    n_categories: int = 8
    n_filler: int = 12
    # cooccur[d][c]: score boost for naming c right after d was named (M_p only)
    cooccur: Any = None
    presence_prior: Any = 0.35
    perception_fpr: Any = 0.0
    perception_fnr: Any = 0.0
    markov_k: int = 2
    seed: int | None = 0
    gamma: float = 0.5
    # score offset that hides an object token unless its category is believed present
    block: float = 25.0
    probe_strength: float = 8.0
    probe_prior_weight: float = 0.5
    repeat_penalty: float = 6.0
    eos_base: float = -2.0
    eos_per_mention: float = 0.6
    eos_per_token: float = 0.3
    markov_scale: float = 1.0
    category_names: list[str] | None = None
    filler_names: list[str] | None = None

    def __post_init__(self):
        C = self.n_categories
        if C < 1:
            raise ValueError("n_categories must be >= 1")
        if self.markov_k < 1:
            raise ValueError("markov_k must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.cooccur is None:
            self.cooccur = np.zeros((C, C))
        self.cooccur = np.asarray(self.cooccur, dtype=float)
        if self.cooccur.shape != (C, C):
            raise ValueError("cooccur must be C x C")
        if np.any(self.cooccur < 0):
            raise ValueError("cooccur must be nonnegative")
        if np.any(np.diag(self.cooccur) != 0):
            raise ValueError("cooccur diagonal must be zero")
        self.presence_prior = _per_category(self.presence_prior, C, "presence_prior")
        self.perception_fpr = _per_category(self.perception_fpr, C, "perception_fpr")
        self.perception_fnr = _per_category(self.perception_fnr, C, "perception_fnr")
        if self.category_names is None:
            self.category_names = _names("obj", DEFAULT_CATEGORIES, C)
        if self.filler_names is None:
            self.filler_names = _names("w", DEFAULT_FILLERS, self.n_filler)
        if len(self.category_names) != C or len(self.filler_names) != self.n_filler:
            raise ValueError("name lists do not match category/filler counts")

    def category_index(self, name: str) -> int:
        return list(self.category_names).index(name)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        cooccur = d.get("cooccur")
        if isinstance(cooccur, dict):
            # sparse form: {"knife": {"fork": 27.0}, ...}
            names = d.get("category_names") or _names("obj", DEFAULT_CATEGORIES, d.get("n_categories", 8))
            m = np.zeros((len(names), len(names)))
            for src, row in cooccur.items():
                for dst, v in row.items():
                    m[names.index(src), names.index(dst)] = v
            d["cooccur"] = m
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class WorldModelSuite:
    config: WorldConfig
    vocab: Vocab
    featurizer: Featurizer
    oracle: LogLinearLM
    pretrained: LogLinearLM
    gamma: float
    trained_f: LogLinearLM | None = None
    trained_f_no_z: LogLinearLM | None = None
    _percepts: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def C(self) -> int:
        return self.vocab.n_categories

    def with_trained(self, model: LogLinearLM | None = None, no_z: LogLinearLM | None = None):
        return dataclasses.replace(
            self,
            trained_f=model if model is not None else self.trained_f,
            trained_f_no_z=no_z if no_z is not None else self.trained_f_no_z,
            _percepts={},
        )

    def percept(self, scene: Scene) -> np.ndarray:
        """M_p's static, corrupted belief about ``scene`` (frozen per scene)."""
        key = (scene.seed, scene.z_star.tobytes())
        got = self._percepts.get(key)
        if got is None:
            cfg = self.config
            rng = np.random.default_rng([cfg.seed or 0, scene.seed, 0xBE1])
            u = rng.random(self.C)
            z = scene.z_star.astype(bool)
            flip = np.where(z, u < cfg.perception_fnr, u < cfg.perception_fpr)
            got = (z ^ flip).astype(float)
            got.setflags(write=False)
            self._percepts[key] = got
        return got


def build_vocab(config: WorldConfig) -> Vocab:
    return Vocab.build(config.category_names, config.filler_names)


def _oracle_theta(config: WorldConfig, feat: Featurizer, rng: np.random.Generator) -> np.ndarray:
    V, C, k = feat.V, feat.C, feat.markov_k
    block = config.block
    objs = np.arange(N_SPECIAL, N_SPECIAL + C)
    fillers = np.arange(N_SPECIAL + C, V)
    emitting = np.concatenate([[EOS], objs, fillers])
    th = np.zeros((feat.n_features, V))

    th[0, [BOS, YES, NO, PROBE]] = -block
    th[0, EOS] = config.eos_base
    th[0, fillers] = rng.normal(0.0, 0.5, size=len(fillers))
    th[0, objs] = rng.uniform(0.5, 1.5, size=C) - block
    for j in range(1, k + 1):
        start = feat.lag(j, 0)
        table = rng.normal(0.0, config.markov_scale / j, size=(V, len(emitting)))
        th[start:start + V][:, emitting] = table
    for c in range(C):
        th[feat.mentioned0 + c, objs[c]] = -config.repeat_penalty
        th[feat.mentioned0 + c, EOS] = config.eos_per_mention
        th[feat.z0 + c, objs[c]] = block
        th[feat.probe_q0 + c, YES] = -config.probe_strength
        th[feat.probe_z0 + c * C + c, YES] = 2.0 * config.probe_strength
    th[feat.length_idx, EOS] = config.eos_per_token
    # probe context: only yes/no are speakable
    th[feat.probe_any_idx, :] = -2.0 * block
    th[feat.probe_any_idx, [YES, NO]] = block
    return th


def _pretrained_theta(config: WorldConfig, feat: Featurizer, oracle_theta: np.ndarray) -> np.ndarray:
    th = oracle_theta.copy()
    C = feat.C
    objs = np.arange(N_SPECIAL, N_SPECIAL + C)
    th[feat.recent0:feat.recent0 + C][:, objs] += config.cooccur
    for q in range(C):
        for d in range(C):
            if d != q:
                th[feat.probe_z0 + q * C + d, YES] += config.probe_prior_weight * config.cooccur[d, q]
    return th


def generate_world(config: WorldConfig) -> WorldModelSuite:
    """Instantiate M*, M_p and the mixture weight from a seeded config."""
    vocab = build_vocab(config)
    feat = Featurizer(vocab, config.markov_k)
    rng = np.random.default_rng(config.seed)
    th_star = _oracle_theta(config, feat, rng)
    th_p = _pretrained_theta(config, feat, th_star)
    return WorldModelSuite(
        config=config, vocab=vocab, featurizer=feat,
        oracle=LogLinearLM(feat, th_star), pretrained=LogLinearLM(feat, th_p),
        gamma=float(config.gamma),
    )


def sample_scene(config: WorldConfig, rng: np.random.Generator) -> Scene:
    seed = int(rng.integers(0, 2**62))
    z = np.random.default_rng([seed, 0x5CE]).random(config.n_categories) < config.presence_prior
    return Scene(z_star=z.astype(np.int8), seed=seed)


def sample_scenes(config: WorldConfig, n: int, rng: np.random.Generator) -> list[Scene]:
    return [sample_scene(config, rng) for _ in range(n)]


def oracle_next(x, z, suite: WorldModelSuite) -> np.ndarray:
    return suite.oracle.next(x, as_object_vector(z, suite.C))


def pretrained_next(x, scene: Scene, suite: WorldModelSuite) -> np.ndarray:
    return suite.pretrained.next(x, suite.percept(scene))


def finetuned_constructed_next(x, scene: Scene, z, suite: WorldModelSuite,
                               p_pretrained: np.ndarray | None = None) -> np.ndarray:
    """gamma * P_*(x, z) + (1 - gamma) * P_p(x, scene)."""
    if p_pretrained is None:
        p_pretrained = pretrained_next(x, scene, suite)
    g = suite.gamma
    return g * oracle_next(x, z, suite) + (1.0 - g) * p_pretrained


def finetuned_no_z_next(x, scene: Scene, suite: WorldModelSuite,
                        p_pretrained: np.ndarray | None = None) -> np.ndarray:
    """Finetuned model that never saw an object vector.

    Without ``z`` the only object evidence is the backbone's own percept, so the
    oracle half of the mixture is conditioned on that corrupted percept.
    """
    if p_pretrained is None:
        p_pretrained = pretrained_next(x, scene, suite)
    g = suite.gamma
    return g * suite.oracle.next(x, suite.percept(scene)) + (1.0 - g) * p_pretrained


def random_world_config(rng: np.random.Generator, n_categories: int = 6, n_filler: int = 10,
                        gamma: float | None = None, **overrides) -> WorldConfig:
    """Random confounded world: sparse strong co-occurrence pairs and percept noise."""
    C = n_categories
    cooccur = np.zeros((C, C))
    for d in range(C):
        partners = rng.choice([c for c in range(C) if c != d], size=min(2, C - 1), replace=False) if C > 1 else []
        for c in partners:
            cooccur[d, c] = rng.uniform(20.0, 30.0)
    kwargs = dict(
        n_categories=C, n_filler=n_filler, cooccur=cooccur,
        presence_prior=rng.uniform(0.2, 0.6, size=C),
        perception_fpr=rng.uniform(0.0, 0.2), perception_fnr=rng.uniform(0.0, 0.2),
        markov_k=int(rng.integers(1, 3)), seed=int(rng.integers(0, 2**31)),
        gamma=float(rng.uniform(0.2, 0.9)) if gamma is None else gamma,
    )
    kwargs.update(overrides)
    return WorldConfig(**kwargs)
