"""Ready-made confounded world used by the example config and the acceptance suite."""
from __future__ import annotations

from ..decoder import DecodePolicy
from ..fusion import FusionConfig
from ..worldsim import DetectorConfig, WorldConfig
from .config import ExperimentConfig, MetricsConfig, PopeSettings

# language-prior pairs: naming the key makes the pretrained model reach for the values
KITCHEN_STREET_COOCCUR = {
    "knife": {"fork": 27.0},
    "fork": {"knife": 27.0},
    "pizza": {"knife": 26.0, "table": 26.0},
    "dog": {"person": 26.0},
    "cup": {"table": 26.0},
    "table": {"cup": 26.0, "bench": 25.0},
    "person": {"dog": 26.0, "bench": 25.0},
    "bench": {"person": 25.0},
}


def confounded_world(seed: int = 3, gamma: float = 0.5) -> WorldConfig:
    return WorldConfig.from_dict(dict(
        n_categories=8, n_filler=12, seed=seed, gamma=gamma,
        presence_prior=0.35, perception_fpr=0.1, perception_fnr=0.1,
        cooccur=KITCHEN_STREET_COOCCUR,
    ))


def confounded_experiment(n_scenes: int = 1000, alpha: float = 1.0, master_seed: int = 0,
                          sources=("base", "mf_only", "coad"), **fusion_overrides) -> ExperimentConfig:
    fusion = dict(alpha=alpha, marginal_mode="exact", space="probability")
    fusion.update(fusion_overrides)
    return ExperimentConfig(
        world=confounded_world(),
        detector=DetectorConfig(tpr=1.0, fpr=0.0),
        fusion=FusionConfig(**fusion),
        decode=DecodePolicy(mode="sample", temperature=0.2, max_tokens=512),
        metrics=MetricsConfig(chair=True, pope=PopeSettings(k_per_scene=3)),
        n_scenes=n_scenes,
        sources=list(sources),
        master_seed=master_seed,
    )
