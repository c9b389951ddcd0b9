"""Deep residual correction networks for partial domain adaptation, at desk scale."""

from .data import Dataset, ShiftSpec, generate_shifted_blobs, load_csv, minibatches, save_csv
from .kernels import (SKIPPED, KernelBank, classwise_mkmmd, gaussian_kernel, jmmd_linear,
                      jmmd_quadratic, median_bandwidth, mmd_quadratic)
from .losses import (LossBreakdown, LossConfig, compute_class_weights, cross_entropy, harden,
                     total_loss, weighted_class_loss)
from .network import Architecture, DrcnModel, forward_source, forward_target, init_model
from .training import History, TrainConfig, group_lr, lr_at, sgd_momentum_step, train
from .evaluation import (EvalReport, accuracy, dump_features, layer_response_stats,
                         proxy_a_distance, weight_split_report)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ShiftSpec", "generate_shifted_blobs", "load_csv", "minibatches", "save_csv",
    "SKIPPED", "KernelBank", "classwise_mkmmd", "gaussian_kernel", "jmmd_linear",
    "jmmd_quadratic", "median_bandwidth", "mmd_quadratic",
    "LossBreakdown", "LossConfig", "compute_class_weights", "cross_entropy", "harden",
    "total_loss", "weighted_class_loss",
    "Architecture", "DrcnModel", "forward_source", "forward_target", "init_model",
    "History", "TrainConfig", "group_lr", "lr_at", "sgd_momentum_step", "train",
    "EvalReport", "accuracy", "dump_features", "layer_response_stats", "proxy_a_distance",
    "weight_split_report",
]
