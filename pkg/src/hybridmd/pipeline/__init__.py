"""Run configuration, stage orchestration, benchmarks and report figures."""

from .config import RunConfig, format_config, parse_config
from .runner import (ForceEngine, PipelineResult, RunMetrics, build_model, build_system,
                     force_field_from_config, ns_per_day, run_pipeline)

__all__ = [
    "ForceEngine", "PipelineResult", "RunConfig", "RunMetrics", "build_model", "build_system",
    "force_field_from_config", "format_config", "ns_per_day", "parse_config", "run_pipeline",
]
