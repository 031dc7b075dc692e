"""Named next-token sources bound to a scene: oracle, base, mf_only, coad, coad_no_z."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .core import Scene
from .fusion import FusionConfig, contrast, marginal_finetuned
from .worldsim import (BeliefCache, WorldModelSuite, finetuned_no_z_next, oracle_next,
                       pretrained_next)

SOURCE_TAGS = ("oracle", "base", "mf_only", "coad", "coad_no_z")


class Source:
    """Callable ``context -> TokenDist`` for one scene, with a query counter."""

    def __init__(self, tag: str, fn):
        self.tag = tag
        self._fn = fn
        self.calls = 0

    def __call__(self, x) -> np.ndarray:
        self.calls += 1
        return self._fn(x)


def make_source(tag: str, scene: Scene, suite: WorldModelSuite, detector: BeliefCache,
                fusion: FusionConfig, rng: np.random.Generator | None = None,
                finetuned: str = "constructed") -> Source:
    """Build source ``tag`` for ``scene``.

    ``rng`` feeds Monte Carlo marginalization; ``finetuned='trained'`` uses the
    fitted models attached to the suite instead of the constructed mixture.
    """
    if tag not in SOURCE_TAGS:
        raise ValueError(f"unknown source {tag!r}; expected one of {SOURCE_TAGS}")
    if finetuned not in ("constructed", "trained"):
        raise ValueError("finetuned must be 'constructed' or 'trained'")
    if tag == "oracle":
        z = scene.z_star.astype(float)
        return Source(tag, lambda x: oracle_next(x, z, suite))
    if tag == "base":
        return Source(tag, lambda x: pretrained_next(x, scene, suite))

    model = model_no_z = None
    if finetuned == "trained":
        model, model_no_z = suite.trained_f, suite.trained_f_no_z
        if model is None or model_no_z is None:
            raise ValueError("suite has no trained finetuned models attached")

    def fused(x, cfg):
        belief = detector.belief(scene)
        p_p = pretrained_next(x, scene, suite)
        p_f = marginal_finetuned(x, scene, belief, suite, cfg, rng, p_pretrained=p_p,
                                 finetuned=model)
        return contrast(p_f, p_p, cfg, context=x)

    if tag == "mf_only":
        mf_cfg = replace(fusion, alpha=0.0)
        return Source(tag, lambda x: fused(x, mf_cfg))
    if tag == "coad":
        return Source(tag, lambda x: fused(x, fusion))

    def no_z(x):
        p_p = pretrained_next(x, scene, suite)
        if model_no_z is not None:
            p_f = model_no_z.next(x, np.zeros(suite.C))
        else:
            p_f = finetuned_no_z_next(x, scene, suite, p_pretrained=p_p)
        return contrast(p_f, p_p, fusion, context=x)

    return Source(tag, no_z)
