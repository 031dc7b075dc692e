"""Empirical finetuned model: sample a mixture corpus and fit it by maximum likelihood."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from ..core import BOS, EOS, PROBE, Scene, softmax_rows
from .loglinear import Featurizer, LogLinearLM
from .world import WorldModelSuite


@dataclass(frozen=True)
class CaptionRecord:
    scene_seed: int
    z: tuple[float, ...]
    prompt: tuple[int, ...]
    tokens: tuple[int, ...]


@dataclass
class TrainConfig:
    steps: int = 300
    l2: float = 1e-5
    use_z: bool = True
    # Gaussian jitter on previous-token features, applied to a random half of the examples
    context_noise: bool = False
    noise_sigma: float = 0.005
    noise_prob: float = 0.5
    seed: int = 0


def sample_mixture_corpus(suite: WorldModelSuite, scenes: Sequence[Scene], gamma: float,
                          rng: np.random.Generator, n_tokens: int,
                          z_of: Callable[[Scene], np.ndarray] | None = None,
                          max_len: int = 64, probe_records: bool = False) -> list[CaptionRecord]:
    """Captions whose tokens come from M_* with prob ``gamma`` and from M_p otherwise.

    ``z_of`` picks the object vector stored with each record (default: ground truth);
    the oracle half conditions on it.  Scenes are cycled until ``n_tokens`` are drawn.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    if z_of is None:
        def z_of(s):
            return s.z_star.astype(float)
    records: list[CaptionRecord] = []
    total = 0
    i = 0
    while total < n_tokens:
        scene = scenes[i % len(scenes)]
        i += 1
        z = np.asarray(z_of(scene), dtype=float)
        prompts = [(BOS,)]
        if probe_records:
            prompts += [(BOS, PROBE, suite.vocab.object_token(c)) for c in range(suite.C)]
        for prompt in prompts:
            x = list(prompt)
            out = []
            limit = 1 if len(prompt) > 1 else max_len
            for _ in range(limit):
                p = gamma * suite.oracle.next(x, z) + (1 - gamma) * suite.pretrained.next(x, suite.percept(scene))
                y = int(rng.choice(len(p), p=p / p.sum()))
                out.append(y)
                x.append(y)
                if y == EOS:
                    break
            records.append(CaptionRecord(scene.seed, tuple(z.tolist()), prompt, tuple(out)))
            total += len(out)
    return records


def design_matrix(records: Sequence[CaptionRecord], feat: Featurizer, use_z: bool = True,
                  noise: tuple[float, float] | None = None,
                  rng: np.random.Generator | None = None) -> tuple[sp.csr_matrix, np.ndarray]:
    rows, cols, vals, targets = [], [], [], []
    lag_lo, lag_hi = feat.lag0, feat.mentioned0
    C = feat.C
    r = 0
    for rec in records:
        z = np.asarray(rec.z, dtype=float)
        x = list(rec.prompt)
        for y in rec.tokens:
            idx, val, q = feat.context(x)
            if noise is not None and rng.random() < noise[1]:
                val = [v + rng.normal(0.0, noise[0]) if lag_lo <= i < lag_hi else v
                       for i, v in zip(idx, val)]
            if use_z:
                nz = np.flatnonzero(z)
                idx = idx + [feat.z0 + int(c) for c in nz]
                val = val + [float(z[c]) for c in nz]
                if q is not None:
                    idx += [feat.probe_z0 + q * C + int(c) for c in nz]
                    val += [float(z[c]) for c in nz]
            rows.extend([r] * len(idx))
            cols.extend(idx)
            vals.extend(val)
            targets.append(y)
            x.append(y)
            r += 1
    phi = sp.csr_matrix((vals, (rows, cols)), shape=(r, feat.n_features))
    return phi, np.asarray(targets, dtype=np.int64)


def train_finetuned(corpus: Sequence[CaptionRecord], suite: WorldModelSuite,
                    config: TrainConfig | None = None) -> LogLinearLM:
    """Fit a log-linear M_f by L2-regularised maximum likelihood (zero init, fixed step budget)."""
    if not corpus:
        raise ValueError("empty corpus")
    config = config or TrainConfig()
    feat = suite.featurizer
    rng = np.random.default_rng(config.seed)
    noise = (config.noise_sigma, config.noise_prob) if config.context_noise else None
    phi, y = design_matrix(corpus, feat, use_z=config.use_z, noise=noise, rng=rng)
    n, F = phi.shape
    V = feat.V
    if n == 0:
        raise ValueError("corpus contains no tokens")
    onehot = sp.csr_matrix((np.ones(n), (np.arange(n), y)), shape=(n, V))
    phiT = phi.T.tocsr()

    def objective(flat):
        th = flat.reshape(F, V)
        s = phi @ th
        m = s.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
        nll = (lse - s[np.arange(n), y]).mean()
        p = softmax_rows(s)
        grad = (phiT @ p - phiT @ onehot) / n + config.l2 * th
        return nll + 0.5 * config.l2 * float(flat @ flat), np.asarray(grad).ravel()

    res = scipy.optimize.minimize(objective, np.zeros(F * V), jac=True, method="L-BFGS-B",
                                  options={"maxiter": config.steps})
    return LogLinearLM(feat, res.x.reshape(F, V))


def trained_next(x, z, model: LogLinearLM) -> np.ndarray:
    return model.next(x, z)
