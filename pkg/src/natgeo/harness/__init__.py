"""Reproducible experiments, CSV output and the oracle check suite."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import (ExperimentOutput, cross_chart_gaps, run_experiment, run_invariance,
                          run_mlp_benchmark, run_order_study, run_small_curvature)
from .records import ORDER_HEADER, RUN_HEADER, RunRecord, parse_csv

__all__ = [
    "ExperimentConfig", "ExperimentOutput", "ORDER_HEADER", "RUN_HEADER", "RunRecord",
    "cross_chart_gaps", "load_config", "parse_config", "parse_csv", "run_experiment",
    "run_invariance", "run_mlp_benchmark", "run_order_study", "run_small_curvature",
]
