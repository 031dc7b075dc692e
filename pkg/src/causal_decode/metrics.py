"""CHAIR, POPE and next-token divergence to the oracle."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Scene, Vocab

POPE_SPLITS = ("random", "popular", "adversarial")


def extract_mentions(caption: Iterable[int], vocab: Vocab) -> set[int]:
    """Categories whose naming token appears anywhere in ``caption``."""
    tokens = getattr(caption, "tokens", caption)
    omap = vocab.object_map
    return {omap[t] for t in tokens if t in omap}


@dataclass(frozen=True)
class ChairReport:
    chair_s: float
    chair_i: float
    n_captions: int
    n_mentions: int
    n_hallucinated_mentions: int
    n_hallucinated_captions: int
    # CHAIR_I is 0/0 without mentions; reported as 0 and flagged here
    no_mentions: bool = False

    @property
    def chair_s_pct(self) -> float:
        return 100.0 * self.chair_s

    @property
    def chair_i_pct(self) -> float:
        return 100.0 * self.chair_i

    def as_dict(self) -> dict:
        d = asdict(self)
        d["chair_s_pct"] = self.chair_s_pct
        d["chair_i_pct"] = self.chair_i_pct
        return d


def chair_counts(captions: Sequence, scenes: Sequence[Scene], vocab: Vocab) -> np.ndarray:
    """Per-caption (mentions, hallucinated mentions) as an (n, 2) integer array."""
    if len(captions) != len(scenes):
        raise ValueError(f"{len(captions)} captions for {len(scenes)} scenes")
    out = np.zeros((len(captions), 2), dtype=np.int64)
    for i, (cap, scene) in enumerate(zip(captions, scenes)):
        m = extract_mentions(cap, vocab)
        out[i, 0] = len(m)
        out[i, 1] = sum(1 for c in m if scene.z_star[c] == 0)
    return out


def chair_from_counts(counts: np.ndarray) -> ChairReport:
    n = len(counts)
    mentions = int(counts[:, 0].sum())
    hall = int(counts[:, 1].sum())
    hall_caps = int((counts[:, 1] > 0).sum())
    return ChairReport(
        chair_s=hall_caps / n if n else 0.0,
        chair_i=hall / mentions if mentions else 0.0,
        n_captions=n, n_mentions=mentions,
        n_hallucinated_mentions=hall, n_hallucinated_captions=hall_caps,
        no_mentions=mentions == 0,
    )


def chair(captions: Sequence, scenes: Sequence[Scene], vocab: Vocab) -> ChairReport:
    return chair_from_counts(chair_counts(captions, scenes, vocab))


@dataclass(frozen=True)
class Probe:
    scene_seed: int
    category: int
    present: bool
    split: str


@dataclass
class ProbeSet:
    probes: list[Probe]
    skipped_scenes: int = 0

    def __len__(self) -> int:
        return len(self.probes)

    def __iter__(self):
        return iter(self.probes)


def build_pope_probes(scenes: Sequence[Scene], split: str, k_per_scene: int,
                      rng: np.random.Generator, cooccur: np.ndarray | None = None) -> ProbeSet:
    """k positives plus k split-specific negatives per scene.

    random: uniform over absent categories; popular: absent categories ranked by
    presence count over ``scenes``; adversarial: absent categories ranked by
    co-occurrence with the scene's present categories (``cooccur[d, c]``).
    """
    if not scenes:
        raise ValueError("no scenes")
    if split not in POPE_SPLITS:
        raise ValueError(f"split must be one of {POPE_SPLITS}")
    if split == "adversarial" and cooccur is None:
        raise ValueError("adversarial split needs the co-occurrence matrix")
    C = scenes[0].n_categories
    popularity = np.sum([s.z_star for s in scenes], axis=0)
    probes: list[Probe] = []
    skipped = 0
    for scene in scenes:
        present, absent = scene.present(), scene.absent()
        n_pos = min(k_per_scene, len(present))
        if n_pos:
            pos = rng.choice(present, size=n_pos, replace=False)
            probes += [Probe(scene.seed, int(c), True, split) for c in sorted(pos)]
        if not absent:
            skipped += 1
            continue
        k = min(k_per_scene, len(absent))
        if split == "random":
            neg = sorted(int(c) for c in rng.choice(absent, size=k, replace=False))
        elif split == "popular":
            neg = sorted(absent, key=lambda c: (-popularity[c], c))[:k]
        else:
            pull = np.asarray(cooccur)[present].sum(axis=0) if present else np.zeros(C)
            neg = sorted(absent, key=lambda c: (-pull[c], -popularity[c], c))[:k]
        probes += [Probe(scene.seed, int(c), False, split) for c in neg]
    if skipped:
        warnings.warn(f"{skipped} scene(s) have no absent category; negatives skipped",
                      RuntimeWarning, stacklevel=2)
    return ProbeSet(probes, skipped)


@dataclass(frozen=True)
class PopeReport:
    """Confusion-matrix metrics; ``None`` marks an undefined ratio."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    yes_ratio: float | None
    tp: int
    fp: int
    fn: int
    tn: int

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float) -> float | None:
    return a / b if b else None


def pope_eval(probes: Iterable[Probe], answers: Sequence) -> PopeReport:
    probes = list(probes)
    if len(probes) != len(answers):
        raise ValueError("answers not aligned with probes")
    tp = fp = fn = tn = 0
    for probe, ans in zip(probes, answers):
        said_yes = (ans[0] if isinstance(ans, tuple) else ans) in ("yes", True)
        if probe.present:
            tp += said_yes
            fn += not said_yes
        else:
            fp += said_yes
            tn += not said_yes
    total = tp + fp + fn + tn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = None
    if precision is not None and recall is not None and tp > 0:
        # same as 2PR / (P + R), without the extra rounding
        f1 = 2 * tp / (2 * tp + fp + fn)
    return PopeReport(_ratio(tp + tn, total), precision, recall, f1,
                      _ratio(tp + fp, total), tp, fp, fn, tn)


def kl_next_token(p, q) -> float:
    """KL(p || q); ``math.inf`` when p puts mass where q has none."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    ps, qs = p[support], q[support]
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def avg_divergence(source: Callable, oracle: Callable, contexts: Sequence) -> float:
    """Mean KL(source(x) || oracle(x)) over ``contexts``."""
    if not contexts:
        raise ValueError("no contexts")
    return float(np.mean([kl_next_token(source(x), oracle(x)) for x in contexts]))


def rollout_contexts(caption_tokens: Sequence[int], prompt: Sequence[int]) -> list[tuple[int, ...]]:
    """Every prefix a decoder queried while producing ``caption_tokens``."""
    x = list(prompt)
    out = []
    for y in caption_tokens:
        out.append(tuple(x))
        x.append(y)
    return out


def bootstrap_chair_i(counts: dict[str, np.ndarray], n_resamples: int, rng: np.random.Generator,
                      level: float = 0.95) -> dict:
    """Paired bootstrap over scenes for CHAIR_I of every source and all pairwise gaps.

    ``counts[tag]`` is the per-scene (mentions, hallucinated) array; all sources share
    the same resampled scene indices.
    """
    tags = list(counts)
    n = len(counts[tags[0]])
    idx = rng.integers(0, n, size=(n_resamples, n))
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    stats = {}
    for tag in tags:
        c = counts[tag]
        mentions = c[idx, 0].sum(axis=1)
        hall = c[idx, 1].sum(axis=1)
        stats[tag] = np.divide(hall, mentions, out=np.zeros(n_resamples), where=mentions > 0)
    out = {"per_source": {}, "diff": {}}
    for tag in tags:
        out["per_source"][tag] = (float(np.quantile(stats[tag], lo_q)),
                                  float(np.quantile(stats[tag], hi_q)))
    for a in tags:
        for b in tags:
            if a < b:
                d = stats[a] - stats[b]
                out["diff"][f"{a}-{b}"] = (float(np.quantile(d, lo_q)), float(np.quantile(d, hi_q)))
    return out
