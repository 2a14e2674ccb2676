"""Multi-person motion forecasting with a small MLP-style network on numpy.

The package bundles a reverse-mode autodiff engine on float64 arrays, the
forecasting network, its losses and metrics, synthetic scene generation,
a trainer with checkpointing and an ``empmp`` command-line tool.
"""

from .estimator import EMPMPForecaster, PersonSorter, TemporalDCT
from .losses import LossBreakdown, joint_loss, total_loss, velocity_loss
from .metrics import FrameScheme, MetricReport, SCHEMES, ape_at, evaluate, fde_at, jpe_at, mpjpe, vim_at
from .model import PRESETS, EmpmpModel, ModelConfig, count_flops, count_params, forward, preset
from .train import AdamState, TrainPlan, adam_step, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "EMPMPForecaster", "EmpmpModel", "FrameScheme", "LossBreakdown", "MetricReport",
    "ModelConfig", "PRESETS", "PersonSorter", "SCHEMES", "TemporalDCT", "TrainPlan", "adam_step",
    "ape_at", "count_flops", "count_params", "evaluate", "fde_at", "forward", "joint_loss", "jpe_at",
    "mpjpe", "preset", "total_loss", "train", "velocity_loss", "vim_at",
]
