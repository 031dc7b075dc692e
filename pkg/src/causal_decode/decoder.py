"""Autoregressive generation and yes/no probing over any next-token source."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import BOS, EOS, NO, PROBE, YES, DegenerateDistributionError, Scene

# A next-token source maps a context (token ids so far) to a distribution over the vocabulary.
NextTokenSource = Callable[[Sequence[int]], np.ndarray]


class DecodeError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"source failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


class DegenerateProbeError(DegenerateDistributionError):
    pass


@dataclass
class DecodePolicy:
    mode: str = "sample"
    temperature: float = 0.2
    max_tokens: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("greedy", "sample"):
            raise ValueError("mode must be 'greedy' or 'sample'")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodePolicy":
        return cls(**d)


@dataclass(frozen=True)
class Caption:
    tokens: tuple[int, ...]
    scene_ref: int
    source_tag: str

    def to_record(self, vocab) -> dict:
        return {"scene_seed": self.scene_ref, "source": self.source_tag,
                "tokens": vocab.decode(self.tokens)}


def apply_temperature(p: np.ndarray, temperature: float) -> np.ndarray:
    """``p ** (1 / T)`` renormalised; zero-probability tokens stay at zero."""
    p = np.asarray(p, dtype=float)
    if temperature != 1.0:
        p = (p / p.max()) ** (1.0 / temperature)
    return p / p.sum()


def select_token(p: np.ndarray, policy: DecodePolicy, rng: np.random.Generator) -> int:
    if policy.mode == "greedy":
        return int(np.argmax(p))  # first maximum: lowest index wins ties
    q = apply_temperature(p, policy.temperature)
    cdf = np.cumsum(q)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(q) - 1))


def generate(scene: Scene, prompt: Sequence[int], source: NextTokenSource, policy: DecodePolicy,
             rng: np.random.Generator | None = None, source_tag: str = "") -> Caption:
    """Query ``source`` on the growing prefix, append the chosen token, stop at EOS."""
    if not prompt or prompt[0] != BOS:
        raise ValueError("prompt must start with BOS")
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    x = list(prompt)
    out: list[int] = []
    for step in range(policy.max_tokens):
        try:
            p = source(tuple(x))
        except Exception as exc:
            raise DecodeError(step, exc) from exc
        y = select_token(p, policy, rng)
        out.append(y)
        x.append(y)
        if y == EOS:
            break
    return Caption(tuple(out), scene.seed, source_tag or getattr(source, "tag", ""))


def probe_prompt(category: int, vocab) -> tuple[int, ...]:
    return (BOS, PROBE, vocab.object_token(category))


def answer_probe(scene: Scene, category: int, source: NextTokenSource, policy: DecodePolicy | None,
                 vocab) -> tuple[str, float]:
    """Ask whether ``category`` is present; ties answer ``no``.

    ``policy`` is accepted for interface symmetry: the answer compares P(yes) and
    P(no), which any temperature leaves in the same order.
    """
    if not 0 <= category < vocab.n_categories:
        raise IndexError(f"category {category} out of range")
    p = source(probe_prompt(category, vocab))
    p_yes, p_no = float(p[YES]), float(p[NO])
    total = p_yes + p_no
    if total <= 0:
        raise DegenerateProbeError(f"no mass on yes/no for category {category} in scene {scene.seed}")
    return ("yes" if p_yes > p_no else "no"), p_yes / total
