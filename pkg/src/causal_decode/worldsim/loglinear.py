"""Log-linear next-token models over a fixed context featurization.

Every model in the testbed scores a token ``y`` after context ``x`` as

    s(x, y) = b(x, y) + sum_c z_c * w_{c,y}(x)

where ``b`` collects the context-only features and ``w`` the object-vector
interaction (plain ``z`` features plus probe-slot x ``z`` features).  The
score is linear in ``z``, so a soft belief in [0, 1]^C can be fed in place
of a binary vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import PROBE, Vocab, softmax_rows


@dataclass(frozen=True)
class Featurizer:
    """Maps a context to sparse feature activations.

    Feature blocks, in row order of the weight matrix:
      bias | lag_1..lag_k one-hots (V each) | mentioned (C) | recent (C) |
      length | probe_any | probe_q (C) | z (C) | probe_q x z (C*C)
    """

    vocab: Vocab
    markov_k: int

    def __post_init__(self):
        if self.markov_k < 1:
            raise ValueError("markov_k must be >= 1")
        V, C, k = self.vocab.size, self.vocab.n_categories, self.markov_k
        offsets = {"V": V, "C": C, "lag0": 1, "mentioned0": 1 + k * V}
        offsets["recent0"] = offsets["mentioned0"] + C
        offsets["length_idx"] = offsets["recent0"] + C
        offsets["probe_any_idx"] = offsets["length_idx"] + 1
        offsets["probe_q0"] = offsets["probe_any_idx"] + 1
        offsets["z0"] = offsets["probe_q0"] + C
        offsets["probe_z0"] = offsets["z0"] + C
        offsets["n_features"] = offsets["probe_z0"] + C * C
        for name, value in offsets.items():
            object.__setattr__(self, name, value)
        # single-entry memo: the dual models featurize the same context back to back
        object.__setattr__(self, "_last", (None, None))

    def lag(self, j: int, token: int) -> int:
        return self.lag0 + (j - 1) * self.V + token

    def probe_category(self, x) -> int | None:
        """Category asked about when ``x`` ends in ``[PROBE, object]``."""
        if len(x) >= 2 and x[-2] == PROBE:
            return self.vocab.category_of(x[-1])
        return None

    def context(self, x) -> tuple[list[int], list[float], int | None]:
        """Active context-feature indices/values and the probed category (if any)."""
        key, hit = self._last
        if key is not None and key == x:
            return hit
        out = self._context(x)
        if isinstance(x, tuple):
            object.__setattr__(self, "_last", (x, out))
        return out

    def _context(self, x) -> tuple[list[int], list[float], int | None]:
        if len(x) == 0:
            raise ValueError("context must contain at least BOS")
        V, k = self.V, self.markov_k
        bos = self.vocab.bos
        idx = [0]
        val = [1.0]
        n = len(x)
        recent: set[int] = set()
        for j in range(1, k + 1):
            tok = x[n - j] if n - j >= 0 else bos
            idx.append(self.lag0 + (j - 1) * V + tok)
            val.append(1.0)
            c = self.vocab.category_of(tok) if n - j >= 0 else None
            if c is not None:
                recent.add(c)
        omap = self.vocab.object_map
        mentioned = {omap[t] for t in x if t in omap}
        for c in sorted(mentioned):
            idx.append(self.mentioned0 + c)
            val.append(1.0)
        for c in sorted(recent):
            idx.append(self.recent0 + c)
            val.append(1.0)
        length = n - 1
        if length:
            idx.append(self.length_idx)
            val.append(float(length))
        q = self.probe_category(x)
        if q is not None:
            idx.append(self.probe_any_idx)
            val.append(1.0)
            idx.append(self.probe_q0 + q)
            val.append(1.0)
        return idx, val, q


class LogLinearLM:
    """Next-token model ``softmax(phi(x, z) @ theta)``."""

    def __init__(self, featurizer: Featurizer, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (featurizer.n_features, featurizer.V):
            raise ValueError(f"theta shape {theta.shape} does not match featurizer")
        theta.setflags(write=False)
        self.featurizer = featurizer
        self.theta = theta
        f = featurizer
        zw = theta[f.z0:f.z0 + f.C]
        self._z_weights = {None: zw}
        for q in range(f.C):
            start = f.probe_z0 + q * f.C
            self._z_weights[q] = zw + theta[start:start + f.C]

    def base_scores(self, x) -> tuple[np.ndarray, int | None]:
        idx, val, q = self.featurizer.context(x)
        rows = self.theta[idx]
        return np.asarray(val) @ rows, q

    def z_weights(self, q: int | None) -> np.ndarray:
        """Per-category weights w_{c,y}, including the probe-slot interaction for ``q``."""
        return self._z_weights[q]

    def scores(self, x, z) -> np.ndarray:
        base, q = self.base_scores(x)
        return base + np.asarray(z, dtype=float) @ self.z_weights(q)

    def next(self, x, z) -> np.ndarray:
        return softmax_rows(self.scores(x, z))

    def next_many(self, x, Z: np.ndarray) -> np.ndarray:
        """Distributions for each row of ``Z`` at the same context, shape (n, V)."""
        base, q = self.base_scores(x)
        return softmax_rows(base + np.asarray(Z, dtype=float) @ self.z_weights(q))

