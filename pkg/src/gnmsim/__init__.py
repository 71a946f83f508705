"""Discrete-event grid scheduling simulator in which every provider node
predicts its own task outcomes from history (rough-set rules plus case-based
reasoning) and bids for work through its local scheduler."""

__version__ = "0.1.0"

from .domain import (Job, JobGroupSpec, LocalSchedulerSpec, ModelParams, Prediction, Priority,
                     Scenario, ScenarioError, Task, TaskRecord, TaskState, load_scenario)
from .simulation import RunLog, run_experiment, run_replication

__all__ = [
    "Job", "JobGroupSpec", "LocalSchedulerSpec", "ModelParams", "Prediction", "Priority",
    "RunLog", "Scenario", "ScenarioError", "Task", "TaskRecord", "TaskState",
    "load_scenario", "run_experiment", "run_replication",
]
