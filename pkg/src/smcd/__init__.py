"""Patch-metric change detection for bitemporal SAR-style images.

Learns a Mahalanobis-form change metric from spatially-jittered patch
constraint pairs with a one-slack max-margin trainer, sweeps it into a
difference image and binary change map, and evaluates against ground
truth.  A seeded synthetic speckled-scene generator makes the whole
pipeline verifiable at desk scale.
"""

from .constraints import (
    ConstraintPair,
    ConstraintSet,
    extract_patch,
    load_constraints,
    sample_constraints,
    save_constraints,
)
from .diffops import (
    MetricModel,
    diff_lr,
    diff_sub,
    lift,
    load_model,
    mahalanobis,
    save_model,
    score,
)
from .errors import DataError, FormatError, NumericError, UsageError
from .inference import (
    EvalReport,
    baseline_lr_map,
    change_map,
    difference_image,
    evaluate,
)
from .raster import (
    INTENSITY_FLOOR,
    LabelMap,
    Raster,
    load_labels,
    load_raster,
    save_labels,
    save_pgm_preview,
    save_raster,
)
from .solver import SolverState, TrainConfig, find_most_violated, psd_project, solve_working_qp, train
from .synth import SceneConfig, bilinear_shift, gen_scene, speckle_field

__version__ = "0.1.0"

__all__ = [
    "ConstraintPair",
    "ConstraintSet",
    "DataError",
    "EvalReport",
    "FormatError",
    "INTENSITY_FLOOR",
    "LabelMap",
    "MetricModel",
    "NumericError",
    "Raster",
    "SceneConfig",
    "SolverState",
    "TrainConfig",
    "UsageError",
    "baseline_lr_map",
    "bilinear_shift",
    "change_map",
    "diff_lr",
    "diff_sub",
    "difference_image",
    "evaluate",
    "extract_patch",
    "find_most_violated",
    "gen_scene",
    "lift",
    "load_constraints",
    "load_labels",
    "load_model",
    "load_raster",
    "mahalanobis",
    "psd_project",
    "sample_constraints",
    "save_constraints",
    "save_labels",
    "save_model",
    "save_pgm_preview",
    "save_raster",
    "score",
    "solve_working_qp",
    "speckle_field",
    "train",
]
