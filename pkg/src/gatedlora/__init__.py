"""Rank-partitioned low-rank adapter experts with metadata-gated routing.

A frozen linear backbone carries N low-rank adapter experts that split one
rank budget; two softmax gates, driven by a sample's task id and era id,
weight the experts inside and outside the up-projection. Everything runs on
a small tape-based autodiff core in 64-bit floats, so analytic gradients
can be checked against finite differences and whole training runs replay
bit for bit from a seed.

The submodules layer cleanly: `tensor` (autodiff core), `adapters` and
`router` (the architecture), `backbone` (assembled models), `synthdata`
(conflict-tunable synthetic grids), `training` (optimization and the
ablation suite), `analysis` (gate utilization and smoothness), `config`,
`checkpoint`, and `cli`. The names below cover the common experiment loop;
import a submodule for the rest.
"""

from .analysis import mean_gate_entropy, smoothness, utilization
from .backbone import build_model, forward, gradient_check
from .config import RunConfig, apply_overrides, load_config, save_config
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .router import GranularityMap, RoutingMode
from .synthdata import Dataset, Sample, SynthSpec, generate
from .tensor import Tape, Tensor, backward
from .training import (
    RunResult,
    TrainConfig,
    evaluate,
    run_ablation_suite,
    train,
    train_separate_per_task,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward",
    "RoutingMode", "GranularityMap",
    "build_model", "forward", "gradient_check",
    "SynthSpec", "Dataset", "Sample", "generate",
    "TrainConfig", "RunResult", "train", "train_separate_per_task",
    "evaluate", "run_ablation_suite",
    "utilization", "smoothness", "mean_gate_entropy",
    "RunConfig", "load_config", "save_config", "apply_overrides",
    "save_checkpoint", "load_checkpoint", "model_from_checkpoint",
    "__version__",
]
