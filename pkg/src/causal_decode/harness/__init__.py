from .config import ConfigError, ExperimentConfig, MetricsConfig, PopeSettings, load_config
from .presets import confounded_experiment, confounded_world
from .report import emit_report
from .runner import RunRecord, bench_throughput, run_experiment, sweep_alpha

__all__ = [
    "ConfigError", "ExperimentConfig", "MetricsConfig", "PopeSettings", "RunRecord",
    "bench_throughput", "confounded_experiment", "confounded_world", "emit_report",
    "load_config", "run_experiment", "sweep_alpha",
]
