"""Rank-one adapter growth with automatic stopping, plus fixed-rank baselines."""
from .analysis import cosine_similarity_probe, effective_rank, flops_step, rank_report
from .baselines import LoraConfig, ReloraConfig, train_lora, train_relora
from .config import ConfigError, ExperimentConfig, format_config, parse_config
from .controller import ControllerConfig, RunRecord, RunResult, TrainingError, run
from .linalg import DimensionError, NumericError
from .optim import AdamConfig, WarmupSchedule
from .tasks import TaskSpec, make_task

__all__ = [
    "AdamConfig", "ConfigError", "ControllerConfig", "DimensionError", "ExperimentConfig",
    "LoraConfig", "NumericError", "ReloraConfig", "RunRecord", "RunResult", "TaskSpec",
    "TrainingError", "WarmupSchedule", "cosine_similarity_probe", "effective_rank",
    "flops_step", "format_config", "make_task", "parse_config", "rank_report", "run",
    "train_lora", "train_relora",
]
