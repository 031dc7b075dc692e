"""Causal contrastive fusion: marginalize M_f over object beliefs, contrast with M_p."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .core import (LOG_FLOOR, DegenerateDistributionError, Scene,
                   probs_from_logits, softmax_rows)
from .worldsim import BeliefCache, LogLinearLM, WorldModelSuite, pretrained_next, sample_z_many

EXACT_LIMIT = 16
MARGINAL_MODES = ("exact", "monte_carlo", "soft")
SPACES = ("probability", "logit")


class EnumerationLimitError(ValueError):
    pass


class DegenerateFusionError(DegenerateDistributionError):
    def __init__(self, msg: str, context=None):
        super().__init__(msg if context is None else f"{msg} (context={list(context)})")
        self.context = context


@dataclass
class FusionConfig:
    alpha: float = 1.5
    marginal_mode: str = "soft"
    n_samples: int = 1
    space: str = "logit"
    clamp_floor: float = 0.0
    rng_seed: int = 0
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.marginal_mode not in MARGINAL_MODES:
            raise ValueError(f"marginal_mode must be one of {MARGINAL_MODES}")
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}")
        if self.marginal_mode == "monte_carlo" and self.n_samples < 1:
            raise ValueError("monte_carlo mode needs n_samples >= 1")
        if self.clamp_floor < 0:
            raise ValueError("clamp_floor must be >= 0")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be > 0")

    @staticmethod
    def alpha_for_gamma(gamma: float) -> float:
        """Contrast weight that exactly inverts a point-mass mixture weight."""
        return (1.0 - gamma) / gamma

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        return cls(**d)


@functools.lru_cache(maxsize=None)
def all_object_vectors(C: int) -> np.ndarray:
    """All 2^C binary object vectors, one per row (read-only, cached)."""
    if C > EXACT_LIMIT:
        raise EnumerationLimitError(f"exact marginalization limited to C <= {EXACT_LIMIT}, got {C}")
    Z = np.array(list(itertools.product((0, 1), repeat=C)), dtype=np.int8)
    Z.setflags(write=False)
    return Z


def bernoulli_mass(Z: np.ndarray, belief: np.ndarray) -> np.ndarray:
    """Product-Bernoulli probability of each row of ``Z``."""
    b = np.asarray(belief, dtype=float)
    return np.prod(np.where(Z == 1, b, 1.0 - b), axis=1)


@functools.lru_cache(maxsize=64)
def _support(C: int, belief_bytes: bytes) -> tuple[np.ndarray, np.ndarray]:
    b = np.frombuffer(belief_bytes, dtype=float)
    Z = all_object_vectors(C)
    w = bernoulli_mass(Z, b)
    keep = w > 0
    Zk, wk = Z[keep].astype(float), w[keep]
    Zk.setflags(write=False)
    wk.setflags(write=False)
    return Zk, wk


def object_support(C: int, belief) -> tuple[np.ndarray, np.ndarray]:
    """Object vectors with nonzero Bernoulli(belief) mass and their masses.

    The belief is fixed per scene, so results are memoized on its bytes.
    """
    b = np.ascontiguousarray(belief, dtype=float)
    if b.shape != (C,):
        raise ValueError(f"belief has shape {b.shape}, expected ({C},)")
    return _support(C, b.tobytes())


def _expected_finetuned(x, Z: np.ndarray, weights: np.ndarray, suite: WorldModelSuite,
                        p_pretrained: np.ndarray, finetuned: LogLinearLM | None) -> np.ndarray:
    keep = weights > 0
    if not keep.all():
        weights, Z = weights[keep], Z[keep]
    if len(weights) == 0:
        raise DegenerateDistributionError("object measure has no mass")
    w = weights
    model = finetuned if finetuned is not None else suite.oracle
    if len(w) == 1:
        # a point-mass belief (noiseless detector) needs a single model call
        expected = w[0] * model.next(x, Z[0])
    else:
        expected = w @ model.next_many(x, Z)
    if finetuned is not None:
        return expected
    # constructed M_f is affine in P_*; with weights summing to one the M_p half factors out
    g = suite.gamma
    return g * expected + (1.0 - g) * p_pretrained


def marginal_finetuned_exact(x, scene: Scene, belief, suite: WorldModelSuite,
                             p_pretrained: np.ndarray | None = None,
                             finetuned: LogLinearLM | None = None) -> np.ndarray:
    """Sum over all 2^C object vectors of Bernoulli(belief) mass times M_f(x, z).

    ``finetuned`` swaps the constructed mixture for a fitted model.
    """
    Z, w = object_support(suite.C, belief)
    if p_pretrained is None:
        p_pretrained = pretrained_next(x, scene, suite)
    return _expected_finetuned(x, Z, w, suite, p_pretrained, finetuned)


def marginal_finetuned_mc(x, scene: Scene, belief, n_samples: int, rng: np.random.Generator,
                          suite: WorldModelSuite, p_pretrained: np.ndarray | None = None,
                          finetuned: LogLinearLM | None = None) -> np.ndarray:
    """Average of M_f over ``n_samples`` object vectors drawn from the belief."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    draws = sample_z_many(belief, n_samples, rng)
    # identical draws give identical M_f outputs; evaluate each distinct vector once
    Z, counts = np.unique(draws, axis=0, return_counts=True)
    if p_pretrained is None:
        p_pretrained = pretrained_next(x, scene, suite)
    return _expected_finetuned(x, Z, counts / n_samples, suite, p_pretrained, finetuned)


def marginal_finetuned_soft(x, scene: Scene, belief, suite: WorldModelSuite,
                            p_pretrained: np.ndarray | None = None,
                            finetuned: LogLinearLM | None = None) -> np.ndarray:
    """Feed the belief vector itself as the object input of M_f."""
    belief = np.asarray(belief, dtype=float)
    if finetuned is not None:
        return finetuned.next(x, belief)
    if p_pretrained is None:
        p_pretrained = pretrained_next(x, scene, suite)
    g = suite.gamma
    return g * suite.oracle.next(x, belief) + (1.0 - g) * p_pretrained


def contrast_logits(s_f: np.ndarray, s_p: np.ndarray, alpha: float) -> np.ndarray:
    return probs_from_logits((1.0 + alpha) * np.asarray(s_f) - alpha * np.asarray(s_p))


def contrast(p_marginal: np.ndarray, p_pretrained: np.ndarray, config: FusionConfig,
             context=None) -> np.ndarray:
    """(1 + alpha) * P_f - alpha * P_p, in probability or logit space."""
    p_f = np.asarray(p_marginal, dtype=float)
    p_p = np.asarray(p_pretrained, dtype=float)
    if p_f.shape != p_p.shape:
        raise ValueError("distributions are over different vocabularies")
    a = config.alpha
    if a == 0:
        return p_f
    if config.space == "logit":
        # floored logs are always finite, so the unchecked softmax is safe here
        floor = config.log_floor
        s_f = np.log(np.maximum(p_f, floor))
        s_p = np.log(np.maximum(p_p, floor))
        s = (1.0 + a) * s_f - a * s_p
        # the floor must not revive tokens the finetuned marginal rules out
        dead = p_f <= 0
        if dead.any():
            if dead.all():
                raise DegenerateFusionError("finetuned marginal has no mass", context)
            s[dead] = -np.inf
        return softmax_rows(s)
    raw = (1.0 + a) * p_f - a * p_p
    clamped = np.where(raw > 0, raw, config.clamp_floor)
    # entries are finite and nonnegative by construction, so skip normalize()'s checks
    total = clamped.sum()
    if not total > 0:
        raise DegenerateFusionError("fused distribution has no positive mass", context)
    return clamped / total


def marginal_finetuned(x, scene: Scene, belief, suite: WorldModelSuite, config: FusionConfig,
                       rng: np.random.Generator | None = None,
                       p_pretrained: np.ndarray | None = None,
                       finetuned: LogLinearLM | None = None) -> np.ndarray:
    mode = config.marginal_mode
    if mode == "exact":
        return marginal_finetuned_exact(x, scene, belief, suite, p_pretrained, finetuned)
    if mode == "soft":
        return marginal_finetuned_soft(x, scene, belief, suite, p_pretrained, finetuned)
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    return marginal_finetuned_mc(x, scene, belief, config.n_samples, rng, suite, p_pretrained,
                                 finetuned)


def coad_next_token(x, scene: Scene, suite: WorldModelSuite, detector: BeliefCache,
                    config: FusionConfig, rng: np.random.Generator | None = None,
                    finetuned: LogLinearLM | None = None) -> np.ndarray:
    """Fused next-token distribution; the belief depends on the scene only."""
    belief = detector.belief(scene)
    p_p = pretrained_next(x, scene, suite)
    p_f = marginal_finetuned(x, scene, belief, suite, config, rng, p_pretrained=p_p,
                             finetuned=finetuned)
    return contrast(p_f, p_p, config, context=x)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())

