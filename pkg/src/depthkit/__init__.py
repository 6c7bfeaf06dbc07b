"""depthkit: monocular depth estimation toolkit.

Encoder-decoder depth network with pluggable backbones, composite
L1/gradient/SSIM training loss on reciprocal depth targets, a seeded
augmentation policy, and a full quantitative + qualitative evaluation
suite, all runnable at desk scale through a tiny backbone and a
procedural toy dataset.
"""

from .augment import AugmentPolicy, apply_policy
from .core import (
    CropRect,
    DepthMap,
    RgbImage,
    TargetMap,
    center_crop,
    clip_depth,
    horizontal_flip,
    inverse_reciprocal_transform,
    reciprocal_transform,
    resize_bilinear,
)
from .data import DatasetProfile, DepthDataset, Sample, inpaint_depth, make_toy_dataset
from .loss import LossWeights, SsimParams, composite_loss, gradient_check
from .metrics import MetricReport, evaluate_set
from .model import BackboneSpec, ModelConfig, build_model, count_parameters, make_tiny_backbone
from .trainer import TrainConfig, evaluate_model, predict_with_mirror, train

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "apply_policy",
    "CropRect",
    "DepthMap",
    "RgbImage",
    "TargetMap",
    "center_crop",
    "clip_depth",
    "horizontal_flip",
    "inverse_reciprocal_transform",
    "reciprocal_transform",
    "resize_bilinear",
    "DatasetProfile",
    "DepthDataset",
    "Sample",
    "inpaint_depth",
    "make_toy_dataset",
    "LossWeights",
    "SsimParams",
    "composite_loss",
    "gradient_check",
    "MetricReport",
    "evaluate_set",
    "BackboneSpec",
    "ModelConfig",
    "build_model",
    "count_parameters",
    "make_tiny_backbone",
    "TrainConfig",
    "evaluate_model",
    "predict_with_mirror",
    "train",
]
