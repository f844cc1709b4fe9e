"""Freehand sketch semantic segmentation, built from scratch.

A small tensor library with reverse-mode differentiation carries a
three-stage residual segmentation network with affine transform encoders;
preprocessing, a reweighted loss, stroke metrics, label-schema tooling, a
training harness, and a CLI round out the pipeline.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    EmptySketchError,
    ParameterError,
    ScheduleError,
    SketchSegError,
    StateError,
    UndefinedMetricError,
    UnmappedLabelError,
)
from .loss import ClassWeights, cross_entropy, reweighted_cross_entropy
from .metrics import EvalReport, c_metric, p_metric
from .model import (
    ModelConfig,
    SegmentationNetwork,
    build_model,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)
from .prep import PrepConfig, bounding_box, normalize, recolor, thin
from .schema import (
    LabelMap,
    Palette,
    RemapTable,
    builtin_palette,
    builtin_remap_table,
    remap,
    validate,
)
from .stn import AffineTransformEncoder, affine_grid, grid_sample
from .tensor import Tape, Tensor
from .train import TrainConfig, evaluate, poly_lr, train

__version__ = "0.1.0"

__all__ = [
    "AffineTransformEncoder",
    "CheckpointError",
    "ClassWeights",
    "ConfigError",
    "DataError",
    "DimensionError",
    "EmptySketchError",
    "EvalReport",
    "LabelMap",
    "ModelConfig",
    "Palette",
    "ParameterError",
    "PrepConfig",
    "RemapTable",
    "ScheduleError",
    "SegmentationNetwork",
    "SketchSegError",
    "StateError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "UndefinedMetricError",
    "UnmappedLabelError",
    "affine_grid",
    "bounding_box",
    "build_model",
    "builtin_palette",
    "builtin_remap_table",
    "c_metric",
    "cross_entropy",
    "evaluate",
    "grid_sample",
    "load_checkpoint",
    "normalize",
    "p_metric",
    "poly_lr",
    "predict_labels",
    "recolor",
    "remap",
    "reweighted_cross_entropy",
    "save_checkpoint",
    "thin",
    "train",
    "validate",
]
