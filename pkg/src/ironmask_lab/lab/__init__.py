"""Experiment harness and command-line front end."""

from .experiments import (
    ExperimentSpec,
    challenger_sample,
    defense_sweep,
    estimate_rates,
    load_templates,
    simulate_sampler_success,
)
from .report import Report, run_experiment

__all__ = [
    "ExperimentSpec",
    "Report",
    "challenger_sample",
    "defense_sweep",
    "estimate_rates",
    "load_templates",
    "run_experiment",
    "simulate_sampler_success",
]
