"""Optimization loop, checkpointing, and mirror-averaged inference."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from . import core, metrics
from .augment import AugmentPolicy
from .core import DepthMap, RgbImage
from .data import DatasetProfile, DepthDataset, batch_indices, prepare_training_pair
from .loss import LossWeights, SsimParams, composite_loss_terms
from .metrics import MetricReport
from .model import (
    DepthModel,
    ModelConfig,
    build_model,
    densenet_spec,
    make_tiny_backbone,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "StepRecord",
    "TrainResult",
    "build_model_for_training",
    "train",
    "predict_with_mirror",
    "evaluate_model",
    "save_checkpoint",
    "load_checkpoint",
    "load_model_from_checkpoint",
]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    max_iterations: int = 200
    validation_interval: int = 50
    seed: int = 0
    val_fraction: float = 0.05
    loss_weights: LossWeights = field(default_factory=LossWeights)
    ssim_params: SsimParams | None = None  # None -> derived from the dataset profile
    # ablation switches
    encoder_variant: str = "tiny"  # tiny | densenet169 | densenet201
    tiny_width: float = 1.0 / 16.0
    pretrained_encoder: bool = False
    encoder_weights_uri: str | None = None
    half_decoder: bool = False
    color_aug_off: bool = False
    random_init_encoder: bool = False
    no_skip_connections: bool = False

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.max_iterations < 1 or self.validation_interval < 1:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


class StepRecord(NamedTuple):
    iteration: int
    l_depth: float
    l_grad: float
    l_ssim: float
    total: float
    wall_time: float


@dataclass
class TrainResult:
    model: DepthModel
    steps: list[StepRecord]
    val_curve: list[tuple[int, float]]
    train_ids: list[str]
    val_ids: list[str]
    checkpoint_path: Path | None = None


def build_model_for_training(cfg: TrainConfig) -> DepthModel:
    """Construct the network described by the config's ablation switches."""
    pretrained = cfg.pretrained_encoder and not cfg.random_init_encoder
    if cfg.encoder_variant in ("densenet169", "densenet201"):
        spec = densenet_spec(cfg.encoder_variant, pretrained, cfg.encoder_weights_uri)
    elif cfg.encoder_variant == "tiny":
        spec = make_tiny_backbone(cfg.tiny_width, pretrained, cfg.encoder_weights_uri)
    else:
        raise ValueError(f"unknown encoder variant {cfg.encoder_variant!r}")
    width = spec.stage_channels[-1] // 2 if cfg.half_decoder else None
    model_cfg = ModelConfig(
        backbone=spec,
        decoder_width=width,
        use_skip_connections=not cfg.no_skip_connections,
    )
    torch.manual_seed(cfg.seed)
    return build_model(model_cfg)


def _ssim_params_for(profile: DatasetProfile, cfg: TrainConfig) -> SsimParams:
    if cfg.ssim_params is not None:
        return cfg.ssim_params
    # dynamic range of reciprocal targets: m/d_min - m/d_max
    return SsimParams(dynamic_range=profile.m / profile.d_min - profile.m / profile.d_max)


def split_train_val(ids: list[str], seed: int, val_fraction: float) -> tuple[list[str], list[str]]:
    """Stable held-out split by seeded hash; at least one id per side when possible."""
    if val_fraction <= 0.0 or len(ids) < 2:
        return list(ids), []
    scored = sorted(
        ids,
        key=lambda s: hashlib.sha256(f"{seed}:{s}".encode()).hexdigest(),
    )
    n_val = max(1, round(val_fraction * len(ids)))
    n_val = min(n_val, len(ids) - 1)
    val = set(scored[:n_val])
    return [i for i in ids if i not in val], [i for i in ids if i in val]


def _pair_to_tensors(image: RgbImage, target) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    img = torch.from_numpy(image.values.transpose(2, 0, 1)).float()
    tgt = torch.from_numpy(target.values[None]).float()
    mask = torch.from_numpy(target.valid_mask[None])
    return img, tgt, mask


def _load_batch(dataset: DepthDataset, ids: list[str], policy, rng):
    images, targets, masks = [], [], []
    for sample_id in ids:
        sample = dataset.load(sample_id)
        image, target = prepare_training_pair(sample, dataset.profile, policy, rng)
        img, tgt, mask = _pair_to_tensors(image, target)
        images.append(img)
        targets.append(tgt)
        masks.append(mask)
    dense = all(bool(m.all()) for m in masks)
    return (
        torch.stack(images),
        torch.stack(targets),
        None if dense else torch.stack(masks),
    )


def train(
    model: DepthModel,
    dataset: DepthDataset,
    cfg: TrainConfig,
    out_dir=None,
    policy: AugmentPolicy | None = None,
    start_iteration: int = 0,
    optimizer: torch.optim.Adam | None = None,
) -> TrainResult:
    """Run ADAM steps on the composite loss over shuffled batches.

    Batch composition and augmentation draws are pure functions of
    (seed, iteration), so restoring a checkpoint and passing its iteration
    as start_iteration reproduces the original trajectory. Training logs
    one record per step and checkpoints (with validation loss) every
    validation_interval iterations.
    """
    profile = dataset.profile
    if policy is None:
        policy = AugmentPolicy(rng_seed=cfg.seed)
    if cfg.color_aug_off:
        policy = AugmentPolicy(policy.flip_probability, 0.0, policy.rng_seed)
    ssim_params = _ssim_params_for(profile, cfg)
    train_ids, val_ids = split_train_val(dataset.train_ids, cfg.seed, cfg.val_fraction)
    if not train_ids:
        raise ValueError("no training samples")
    if optimizer is None:
        optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)
        )

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.txt", "a")

    steps: list[StepRecord] = []
    val_curve: list[tuple[int, float]] = []
    checkpoint_path = None
    model.train()
    try:
        for iteration in range(start_iteration + 1, cfg.max_iterations + 1):
            t0 = time.perf_counter()
            idx = batch_indices(cfg.seed, len(train_ids), cfg.batch_size, iteration - 1)
            ids = [train_ids[i] for i in idx]
            aug_rng = np.random.default_rng((cfg.seed, 3, iteration))
            images, targets, masks = _load_batch(dataset, ids, policy, aug_rng)
            pred = model(images)
            total, terms = composite_loss_terms(
                targets, pred, cfg.loss_weights, ssim_params, masks
            )
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"non-finite training loss at iteration {iteration} "
                    f"(batch ids: {', '.join(ids)})"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            record = StepRecord(
                iteration=iteration,
                l_depth=float(terms["l_depth"].detach()),
                l_grad=float(terms["l_grad"].detach()),
                l_ssim=float(terms["l_ssim"].detach()),
                total=float(total.detach()),
                wall_time=time.perf_counter() - t0,
            )
            steps.append(record)
            if log_file is not None:
                log_file.write(
                    f"iteration={record.iteration} l_depth={record.l_depth:.6f} "
                    f"l_grad={record.l_grad:.6f} l_ssim={record.l_ssim:.6f} "
                    f"total={record.total:.6f} wall_time={record.wall_time:.4f}\n"
                )
            if iteration % cfg.validation_interval == 0 or iteration == cfg.max_iterations:
                if val_ids:
                    val_loss = validation_loss(model, dataset, val_ids, cfg, ssim_params)
                    val_curve.append((iteration, val_loss))
                if out_dir is not None:
                    checkpoint_path = out_dir / "checkpoint.pt"
                    save_checkpoint(
                        checkpoint_path, model, cfg, optimizer, iteration, profile
                    )
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None and val_curve:
        with open(out_dir / "val_curve.csv", "w") as fh:
            fh.write("iteration,val_loss\n")
            for it, loss_value in val_curve:
                fh.write(f"{it},{loss_value}\n")
    return TrainResult(model, steps, val_curve, train_ids, val_ids, checkpoint_path)


@torch.no_grad()
def validation_loss(
    model: DepthModel,
    dataset: DepthDataset,
    ids: list[str],
    cfg: TrainConfig,
    ssim_params: SsimParams,
) -> float:
    """Mean composite loss over held-out ids, without augmentation."""
    model.eval()
    losses = []
    for sample_id in ids:
        sample = dataset.load(sample_id)
        image, target = prepare_training_pair(sample, dataset.profile, policy=None)
        img, tgt, mask = _pair_to_tensors(image, target)
        pred = model(img[None])
        total, _ = composite_loss_terms(
            tgt[None], pred, cfg.loss_weights, ssim_params,
            None if bool(mask.all()) else mask[None],
        )
        losses.append(float(total))
    model.train()
    return float(np.mean(losses))


@torch.no_grad()
def predict_with_mirror(model: DepthModel, image: RgbImage, profile: DatasetProfile) -> DepthMap:
    """Mirror-averaged prediction, returned in meters at input resolution.

    Averages the prediction on the image with the un-flipped prediction on
    its mirror (in target space), clamps into the valid target range,
    inverts the reciprocal transform, and upsamples 2x back to the input
    size.
    """
    model.eval()
    x = torch.from_numpy(image.values.transpose(2, 0, 1)).float()[None]
    flipped = torch.flip(x, dims=[3])
    pred = model(x)[0, 0]
    pred_flip = torch.flip(model(flipped), dims=[3])[0, 0]
    avg = (pred + pred_flip).double().numpy() / 2.0
    lo, hi = profile.m / profile.d_max, profile.m / profile.d_min
    target = core.TargetMap(np.clip(avg, lo, hi), profile.m)
    depth = core.inverse_reciprocal_transform(target)
    return core.resize_bilinear(depth, image.height, image.width)


def evaluate_model(
    model: DepthModel,
    dataset: DepthDataset,
    profile: DatasetProfile | None = None,
    scaled: bool = False,
    qualitative: bool = True,
    ids: list[str] | None = None,
) -> MetricReport:
    """Mirror-averaged predictions scored against the test ground truth."""
    profile = profile or dataset.profile
    ids = ids if ids is not None else dataset.test_ids
    per_image = []
    for sample_id in ids:
        sample = dataset.load(sample_id)
        pred = predict_with_mirror(model, sample.image, profile)
        gt = core.clip_depth(sample.depth, profile.d_min, profile.d_max)
        per_image.append(
            metrics.compute_image_metrics(
                gt, pred, crop=profile.eval_crop, scaled=scaled, qualitative=qualitative
            )
        )
    return metrics.aggregate_image_metrics(per_image)


def save_checkpoint(
    path,
    model: DepthModel,
    cfg: TrainConfig,
    optimizer: torch.optim.Adam,
    iteration: int,
    profile: DatasetProfile | None = None,
) -> None:
    """Framework-native checkpoint plus a plain-text sidecar manifest."""
    path = Path(path)
    spec = model.cfg.backbone
    payload = {
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "iteration": iteration,
        "backbone_name": spec.name,
        "stage_channels": tuple(spec.stage_channels),
        "decoder_width": model.cfg.decoder_width,
        "use_skip_connections": model.cfg.use_skip_connections,
        "leaky_relu_alpha": model.cfg.leaky_relu_alpha,
        "train_seed": cfg.seed,
        "learning_rate": cfg.learning_rate,
        "betas": (cfg.beta1, cfg.beta2),
        "batch_size": cfg.batch_size,
    }
    if profile is not None:
        payload["depth_range"] = (profile.d_min, profile.d_max, profile.m)
    torch.save(payload, path)
    manifest = [
        f"backbone={spec.name}",
        f"stage_channels={','.join(str(c) for c in spec.stage_channels)}",
        f"decoder_width={model.cfg.effective_decoder_width}",
        f"use_skip_connections={model.cfg.use_skip_connections}",
        f"leaky_relu_alpha={model.cfg.leaky_relu_alpha}",
        f"iteration={iteration}",
    ]
    if profile is not None:
        manifest.append(f"depth_range={profile.d_min},{profile.d_max},{profile.m}")
    path.with_suffix(path.suffix + ".manifest.txt").write_text("\n".join(manifest) + "\n")


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=True)


def load_model_from_checkpoint(path) -> tuple[DepthModel, dict]:
    """Rebuild the model recorded in a checkpoint and load its weights."""
    payload = load_checkpoint(path)
    from .model import BackboneSpec

    spec = BackboneSpec(
        name=payload["backbone_name"],
        stage_channels=tuple(payload["stage_channels"]),
    )
    cfg = ModelConfig(
        backbone=spec,
        decoder_width=payload.get("decoder_width"),
        use_skip_connections=payload.get("use_skip_connections", True),
        leaky_relu_alpha=payload.get("leaky_relu_alpha", 0.2),
    )
    model = build_model(cfg)
    model.load_state_dict(payload["model_state"])
    return model, payload
