"""Simulated object detector producing per-category presence probabilities."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Scene, Vocab


@dataclass
class DetectorConfig:
    tpr: object = 1.0
    fpr: object = 0.0
    # inf rounds beliefs to {0, 1}; 1.0 reports flat-prior posteriors
    confidence_sharpness: float = 1.0

    def __post_init__(self):
        if not self.confidence_sharpness > 0:
            raise ValueError("confidence_sharpness must be positive")
        for name in ("tpr", "fpr"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} must lie in [0, 1]")

    def rates(self, C: int) -> tuple[np.ndarray, np.ndarray]:
        tpr = np.broadcast_to(np.asarray(self.tpr, dtype=float), (C,))
        fpr = np.broadcast_to(np.asarray(self.fpr, dtype=float), (C,))
        return tpr, fpr

    @property
    def noiseless(self) -> bool:
        return bool(np.all(np.asarray(self.tpr) == 1) and np.all(np.asarray(self.fpr) == 0))

    def to_dict(self) -> dict:
        def plain(v):
            return np.asarray(v).tolist()
        s = self.confidence_sharpness
        return {"tpr": plain(self.tpr), "fpr": plain(self.fpr),
                "confidence_sharpness": "inf" if math.isinf(s) else s}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if "confidence_sharpness" in d:
            d["confidence_sharpness"] = float(d["confidence_sharpness"])
        return cls(**d)


def _sharpen(p: np.ndarray, sharpness: float) -> np.ndarray:
    out = p.copy()
    inner = (p > 0) & (p < 1)
    if math.isinf(sharpness):
        out[inner] = np.where(p[inner] > 0.5, 1.0, np.where(p[inner] < 0.5, 0.0, 0.5))
        return out
    logit = np.log(p[inner]) - np.log1p(-p[inner])
    out[inner] = 1.0 / (1.0 + np.exp(-sharpness * logit))
    return out


def calibrated_confidence(tpr: np.ndarray, fpr: np.ndarray, sharpness: float) -> tuple[np.ndarray, np.ndarray]:
    """Beliefs reported for a detection and for a miss, per category."""
    with np.errstate(invalid="ignore", divide="ignore"):
        hit = np.where(tpr + fpr > 0, tpr / (tpr + fpr), 0.5)
        miss = np.where(2 - tpr - fpr > 0, (1 - tpr) / (2 - tpr - fpr), 0.5)
    return _sharpen(hit, sharpness), _sharpen(miss, sharpness)


def detect(scene: Scene, dconfig: DetectorConfig, rng: np.random.Generator) -> np.ndarray:
    """Object belief for ``scene``; reads nothing but the scene."""
    C = scene.n_categories
    tpr, fpr = dconfig.rates(C)
    rate = np.where(scene.z_star == 1, tpr, fpr)
    fired = rng.random(C) < rate
    hit, miss = calibrated_confidence(tpr, fpr, dconfig.confidence_sharpness)
    return np.where(fired, hit, miss)


class BeliefCache:
    """Runs the detector at most once per scene and counts real invocations."""

    def __init__(self, dconfig: DetectorConfig, seed: int = 0):
        self.dconfig = dconfig
        self.seed = seed
        self.calls = 0
        self._cache: dict[int, np.ndarray] = {}

    def belief(self, scene: Scene) -> np.ndarray:
        got = self._cache.get(scene.seed)
        if got is None:
            self.calls += 1
            rng = np.random.default_rng([self.seed, scene.seed, 0xDE7])
            got = detect(scene, self.dconfig, rng)
            got.setflags(write=False)
            self._cache[scene.seed] = got
        return got

    __call__ = belief


def sample_z(belief, rng: np.random.Generator) -> np.ndarray:
    belief = np.asarray(belief, dtype=float)
    return (rng.random(belief.shape) < belief).astype(np.int8)


def sample_z_many(belief, n: int, rng: np.random.Generator) -> np.ndarray:
    belief = np.asarray(belief, dtype=float)
    return (rng.random((n, belief.size)) < belief).astype(np.int8)


def format_belief(belief, vocab: Vocab, digits: int = 2) -> str:
    """Human-readable belief vector, e.g. ``"person: 0.98, bench: 0.20"``."""
    names = vocab.category_names
    return ", ".join(f"{names[c]}: {float(b):.{digits}f}" for c, b in enumerate(belief))
