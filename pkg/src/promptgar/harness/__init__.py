from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, EvalConfig, RunConfig, TrainConfig, load_config, parse_config, tiny_config
from .evaluate import Evaluator, evaluate
from .flexcheck import FlexReport, flexcheck
from .gradcheck import GradcheckReport, gradcheck
from .metrics import MetricsReport, predict
from .train import TrainingError, TrainResult, train

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "EvalConfig",
    "RunConfig",
    "TrainConfig",
    "load_config",
    "parse_config",
    "tiny_config",
    "Evaluator",
    "evaluate",
    "FlexReport",
    "flexcheck",
    "GradcheckReport",
    "gradcheck",
    "MetricsReport",
    "predict",
    "TrainingError",
    "TrainResult",
    "train",
]
