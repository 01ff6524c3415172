"""Sparse Tucker factorization of partially observed tensors.

Element-wise coordinate updates fit a core and factor matrices on the observed
entries only, while responsibility-ranked pruning drives the result toward a
target sparsity or an automatically detected elbow of the error curve.
"""
from ._backend import DEFAULT as DEFAULT_BACKEND
from ._backend import available as available_backends
from .model import (ResponsibilityTable, TuckerModel, init_random, load_model, normalize_columns,
                    partial_reconstruct, reconstruct_entry, reconstruct_many, reconstruction_error,
                    save_model, sparsity)
from .pruning import (PruneSchedule, StopController, compute_core_responsibilities,
                      compute_factor_responsibilities, compute_responsibilities, elbow_statistic,
                      prune_step, should_prune)
from .report import model_summary, row_density_report, scaling_benchmark
from .tensor import (ModeIndex, SparseTensor, TensorFormatError, build_mode_index, gen_synthetic,
                     load_coo, load_indices, save_coo, split_train_test)
from .trainer import IterationRecord, IterationReport, TrainConfig, evaluate_test, fit, predict
from .updates import (RowUpdateScratch, compute_delta, update_all_factors, update_core, update_core_block,
                      update_core_l1, update_core_lf, update_factor_row_l1, update_factor_row_lf)

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "build_mode_index",
    "compute_core_responsibilities",
    "compute_delta",
    "compute_factor_responsibilities",
    "compute_responsibilities",
    "DEFAULT_BACKEND",
    "elbow_statistic",
    "evaluate_test",
    "fit",
    "gen_synthetic",
    "init_random",
    "IterationRecord",
    "IterationReport",
    "load_coo",
    "load_indices",
    "load_model",
    "ModeIndex",
    "model_summary",
    "normalize_columns",
    "partial_reconstruct",
    "predict",
    "prune_step",
    "PruneSchedule",
    "reconstruct_entry",
    "reconstruct_many",
    "reconstruction_error",
    "ResponsibilityTable",
    "row_density_report",
    "RowUpdateScratch",
    "save_coo",
    "save_model",
    "scaling_benchmark",
    "should_prune",
    "SparseTensor",
    "sparsity",
    "split_train_test",
    "StopController",
    "TensorFormatError",
    "TrainConfig",
    "TuckerModel",
    "update_all_factors",
    "update_core",
    "update_core_block",
    "update_core_l1",
    "update_core_lf",
    "update_factor_row_l1",
    "update_factor_row_lf",
]
