"""Synthetic multimodal world: scenes, models M_*, M_p, M_f, and the detector."""
from .detector import (BeliefCache, DetectorConfig, calibrated_confidence, detect,
                       format_belief, sample_z, sample_z_many)
from .loglinear import Featurizer, LogLinearLM
from .training import (CaptionRecord, TrainConfig, sample_mixture_corpus, train_finetuned,
                       trained_next)
from .world import (WorldConfig, WorldModelSuite, build_vocab, finetuned_constructed_next,
                    finetuned_no_z_next, generate_world, oracle_next, pretrained_next,
                    random_world_config, sample_scene, sample_scenes)

__all__ = [
    "BeliefCache", "CaptionRecord", "DetectorConfig", "Featurizer", "LogLinearLM",
    "TrainConfig", "WorldConfig", "WorldModelSuite", "build_vocab", "calibrated_confidence",
    "detect", "finetuned_constructed_next", "finetuned_no_z_next", "format_belief",
    "generate_world", "oracle_next", "pretrained_next", "random_world_config",
    "sample_mixture_corpus", "sample_scene", "sample_scenes", "sample_z", "sample_z_many",
    "train_finetuned", "trained_next",
]
