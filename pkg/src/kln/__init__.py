"""Conditional moment-matching classification with a learned compound kernel.

A pre-specified characteristic kernel is composed with a dense encoder made
approximately injective by an auto-encoder; the conditional-discrepancy loss
trains the kernel and the label prediction together, in supervised and
semi-supervised modes.
"""

from .cmmd import (
    CmmdValue,
    GramPack,
    Wrt,
    build_gram_pack,
    cmmd_backward,
    cmmd_gradients,
    cmmd_oracle,
    cmmd_value,
    h_matrix,
)
from .data import Dataset, load_idx, split_labeled, synth_blobs, train_test_split
from .diagnostics import h_heatmap, kernel_histogram, separation_score
from .kernels import KernelSpec, compound_gram, gaussian_mixture, gram, linear
from .network import (
    ModelParams,
    ae_loss,
    classify,
    confidence_loss,
    decode,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    Mode,
    TrainConfig,
    TrainReport,
    evaluate,
    semi_supervised_step,
    supervised_step,
    train,
)

__all__ = [
    "CmmdValue",
    "Dataset",
    "GramPack",
    "KernelSpec",
    "Mode",
    "ModelParams",
    "TrainConfig",
    "TrainReport",
    "Wrt",
    "ae_loss",
    "build_gram_pack",
    "classify",
    "cmmd_backward",
    "cmmd_gradients",
    "cmmd_oracle",
    "cmmd_value",
    "compound_gram",
    "confidence_loss",
    "decode",
    "encode",
    "evaluate",
    "gaussian_mixture",
    "gram",
    "h_heatmap",
    "h_matrix",
    "init_params",
    "kernel_histogram",
    "linear",
    "load_checkpoint",
    "load_idx",
    "save_checkpoint",
    "semi_supervised_step",
    "separation_score",
    "split_labeled",
    "supervised_step",
    "synth_blobs",
    "train",
    "train_test_split",
]

__version__ = "0.1.0"
