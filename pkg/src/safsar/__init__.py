"""Few-shot action recognition at desk scale: episodic sampling, class
prototypes, text-video fusion, cosine-softmax classification, and dual-loss
training on a self-contained reverse-mode autodiff core."""

__version__ = "0.1.0"

from .numerics import GradTape, ParamStore, Tensor, backward, grad_check
from .model import ModelConfig, forward_episode
from .pipeline import Pipeline, PipelineDims, build_pipeline, load_pipeline, save_pipeline
from .episodic import (
    Dataset,
    Episode,
    EvalReport,
    TrainConfig,
    TrainResult,
    evaluate,
    sample_episode,
    train,
)
from .synth import synth_generate

__all__ = [
    "GradTape",
    "ParamStore",
    "Tensor",
    "backward",
    "grad_check",
    "ModelConfig",
    "forward_episode",
    "Pipeline",
    "PipelineDims",
    "build_pipeline",
    "load_pipeline",
    "save_pipeline",
    "Dataset",
    "Episode",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "sample_episode",
    "train",
    "synth_generate",
    "__version__",
]
