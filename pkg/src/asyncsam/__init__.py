"""Asynchronous sharpness-aware minimization on numpy, with a serial emulator,
a two-thread concurrent runner and diagnostics."""
from __future__ import annotations

__version__ = "0.1.0"

from .calibrate import CalibrationResult, ThrottleSpec, ascent_batch_size, calibrate, measure_time_per_sample
from .data import BatchSampler, Dataset, MiniBatch, generate_gaussian_blobs, load_idx_dataset, read_idx, write_idx
from .instrument import (
    BoundCheck, LandscapeGrid, cosine_similarity, flatness_score, grad_norm_trace, loss_landscape,
    probe_cossim_trace, theorem1_check,
)
from .objectives import (
    DimensionMismatch, LogisticObjective, MLPObjective, ParamVector, QuadraticObjective, eval_gradient, eval_loss,
    finite_diff_gradient, full_gradient, full_loss, random_quadratic, smoothness_constant,
)
from .optimizers import (
    OptimizerConfig, async_sam_step, gsam_combine, gsam_step, looksam_step, perturb, sam_step, sgd_step,
)
from .pipeline import TrainingTrace, load_trace, replay, train, write_trace

__all__ = [
    "BatchSampler", "BoundCheck", "CalibrationResult", "Dataset", "DimensionMismatch", "LandscapeGrid",
    "LogisticObjective", "MLPObjective", "MiniBatch", "OptimizerConfig", "ParamVector", "QuadraticObjective",
    "ThrottleSpec", "TrainingTrace", "ascent_batch_size", "async_sam_step", "calibrate", "cosine_similarity",
    "eval_gradient", "eval_loss", "finite_diff_gradient", "flatness_score", "full_gradient", "full_loss",
    "generate_gaussian_blobs", "grad_norm_trace", "gsam_combine", "gsam_step", "load_idx_dataset", "load_trace",
    "looksam_step", "loss_landscape", "measure_time_per_sample", "perturb", "probe_cossim_trace",
    "random_quadratic", "read_idx", "replay", "sam_step", "sgd_step", "smoothness_constant", "theorem1_check",
    "train", "write_idx", "write_trace",
]
