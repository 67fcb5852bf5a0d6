"""Diffusion generation of multivariate time series with selective state-space denoisers.

Everything runs on numpy: a small reverse-mode autodiff engine, selective
scans with lag-state fusion and channel permutation, a cosine-schedule DDPM
with x0 prediction, the training losses and the evaluation metrics.
"""

from .data import WindowedDataset, ingest_csv, ingest_series
from .diffusion import DiffusionSchedule, cosine_schedule, sample
from .losses import LossWeights, total_loss
from .metrics import MetricReport, evaluate
from .network import DiMTS, ModelConfig
from .permutation import ChannelPermutation, pearson_similarity, solve_ordering
from .training import RunConfig, generate, load_state, save_state, train

__version__ = "0.1.0"

__all__ = [
    "ChannelPermutation", "DiMTS", "DiffusionSchedule", "LossWeights", "MetricReport",
    "ModelConfig", "RunConfig", "WindowedDataset", "cosine_schedule", "evaluate", "generate",
    "ingest_csv", "ingest_series", "load_state", "pearson_similarity", "sample", "save_state",
    "solve_ordering", "total_loss", "train",
]
