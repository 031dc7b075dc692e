"""Shared vocabulary/scene types and distribution arithmetic."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

PROB_ATOL = 1e-9
LOG_FLOOR = 1e-12


class DegenerateDistributionError(ValueError):
    """Raised when a vector cannot be turned into a probability distribution."""


# Reserved token layout: specials first, then object names, then fillers.
BOS, EOS, YES, NO, PROBE = 0, 1, 2, 3, 4
N_SPECIAL = 5
SPECIAL_NAMES = ("<bos>", "<eos>", "yes", "no", "<probe>")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    object_map: Mapping[int, int]
    n_categories: int
    bos: int = BOS
    eos: int = EOS
    yes: int = YES
    no: int = NO
    probe: int = PROBE

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token names must be unique")
        specials = (self.bos, self.eos, self.yes, self.no, self.probe)
        if len(set(specials)) != len(specials):
            raise ValueError("special indices must be distinct")
        if any(s in self.object_map for s in specials):
            raise ValueError("special tokens cannot name objects")
        cats = sorted(self.object_map.values())
        if cats != list(range(self.n_categories)):
            raise ValueError("each category needs exactly one naming token")

    @classmethod
    def build(cls, category_names: Sequence[str], filler_names: Sequence[str]) -> "Vocab":
        tokens = tuple(SPECIAL_NAMES) + tuple(category_names) + tuple(filler_names)
        object_map = {N_SPECIAL + c: c for c in range(len(category_names))}
        return cls(tokens=tokens, object_map=object_map, n_categories=len(category_names))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def object_token(self, category: int) -> int:
        if not 0 <= category < self.n_categories:
            raise IndexError(f"category {category} out of range")
        return N_SPECIAL + category

    def category_of(self, token: int) -> int | None:
        return self.object_map.get(token)

    @property
    def category_names(self) -> list[str]:
        return [self.tokens[self.object_token(c)] for c in range(self.n_categories)]

    def index(self, name: str) -> int:
        return self.tokens.index(name)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class Scene:
    """Abstract image: ground-truth object presence plus its identity seed."""

    z_star: np.ndarray = field(compare=False)
    seed: int = 0

    def __post_init__(self):
        z = np.asarray(self.z_star, dtype=np.int8)
        if z.ndim != 1 or not np.isin(z, (0, 1)).all():
            raise ValueError("z_star must be a binary vector")
        z.setflags(write=False)
        object.__setattr__(self, "z_star", z)

    @property
    def n_categories(self) -> int:
        return len(self.z_star)

    def present(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.z_star)]

    def absent(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.z_star == 0)]


def check_dist(p: np.ndarray, atol: float = PROB_ATOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0) and abs(p.sum() - 1.0) <= atol)


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise DegenerateDistributionError("normalize expects finite nonnegative entries")
    total = v.sum()
    if total <= 0:
        raise DegenerateDistributionError("cannot normalize an all-zero vector")
    return v / total


def logits_from_probs(p, floor: float = LOG_FLOOR) -> np.ndarray:
    """Elementwise ``log(max(p, floor))``; the floor keeps contrastive arithmetic finite."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    return np.log(np.maximum(np.asarray(p, dtype=float), floor))


def probs_from_logits(s, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite logits")
    s = s / temperature
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(s: np.ndarray) -> np.ndarray:
    """Row softmax without the finiteness check (hot path)."""
    if s.ndim == 1:
        e = np.exp(s - s.max())
        return e / e.sum()
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def as_object_vector(z, n_categories: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (n_categories,):
        raise ValueError(f"object vector has length {z.shape}, expected {n_categories}")
    if np.any(z < 0) or np.any(z > 1):
        raise ValueError("object vector entries must lie in [0, 1]")
    return z
