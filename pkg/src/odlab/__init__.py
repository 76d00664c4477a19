"""Simulation lab for multi-opinion 3-Majority and 2-Choices consensus dynamics."""

from .dynamics import Configuration, ProtocolKind, RunResult, StepKernel, run, step_async, step_fast, step_naive
from .experiments import ExperimentKind, ExperimentSpec, InitSpec, run_experiment
from .observables import StoppingLedger, ThresholdConfig, summarize

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "ExperimentKind",
    "ExperimentSpec",
    "InitSpec",
    "ProtocolKind",
    "RunResult",
    "StepKernel",
    "StoppingLedger",
    "ThresholdConfig",
    "run",
    "run_experiment",
    "step_async",
    "step_fast",
    "step_naive",
    "summarize",
]
