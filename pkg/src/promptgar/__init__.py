"""Prompt-conditioned group activity recognition on a numpy autodiff core."""

from .model import Batch, ModelConfig, PromptGAR, collate, prompt_batch

__version__ = "0.1.0"

__all__ = ["Batch", "ModelConfig", "PromptGAR", "collate", "prompt_batch", "__version__"]
