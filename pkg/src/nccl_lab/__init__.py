"""Desk-scale continual-learning lab with fixed simplex prototypes."""

from .config import ExperimentConfig, config_hash, parse_config, \
    parse_config_text, serialize_config
from .continual import ReplayBuffer, RunRecord, Task, TaskStream, \
    make_blob_stream, run_experiment, train_task
from .estimator import SAMixClassifier
from .geometry import PrototypeSet, build_etf, lerp, slerp

__all__ = [
    "ExperimentConfig", "PrototypeSet", "ReplayBuffer", "RunRecord",
    "SAMixClassifier", "Task", "TaskStream", "build_etf", "config_hash",
    "lerp", "make_blob_stream", "parse_config", "parse_config_text",
    "run_experiment", "serialize_config", "slerp", "train_task",
]

__version__ = "0.1.0"
