"""Experiment orchestration and the command line interface."""
from .config import ExperimentConfig, load_config
from .experiments import (run_convergence, run_flexibility, run_measure_convergence,
                          run_oracle_suite)

__all__ = ["ExperimentConfig", "load_config", "run_convergence", "run_flexibility",
           "run_measure_convergence", "run_oracle_suite"]
