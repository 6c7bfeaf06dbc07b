"""Experiment configuration: INI-style key=value file with section headers."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .augment import AugmentPolicy
from .loss import LossWeights, SsimParams
from .trainer import TrainConfig

__all__ = ["ExperimentConfig", "load_experiment_config", "apply_ablation", "ABLATIONS"]

ABLATIONS = (
    "color_aug_off",
    "no_skip_connections",
    "half_decoder",
    "random_init_encoder",
    "deeper_encoder",
)

_KNOWN_KEYS = {
    "dataset": {"root"},
    "model": {
        "encoder", "tiny_width", "pretrained", "encoder_weights",
        "half_decoder", "no_skip_connections",
    },
    "train": {
        "learning_rate", "beta1", "beta2", "batch_size", "max_iterations",
        "validation_interval", "seed", "val_fraction", "lambda_depth",
        "color_aug_off", "random_init_encoder",
    },
    "augment": {"flip_probability", "channel_permutation_probability"},
    "ssim": {"window", "dynamic_range"},
    "output": {"dir"},
}


@dataclass
class ExperimentConfig:
    dataset_root: Path
    train: TrainConfig
    policy: AugmentPolicy
    out_dir: Path


def _get(parser, section, key, cast, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key).strip()
        if raw:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
    return default


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file; unknown keys are rejected."""
    path = Path(path)
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh, source=str(path))  # raises with line numbers on bad syntax
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ValueError(f"{path}: unknown key {key!r} in section [{section}]")
    if not parser.has_option("dataset", "root"):
        raise ValueError(f"{path}: [dataset] root is required")

    dataset_root = Path(parser.get("dataset", "root"))
    if not dataset_root.is_absolute():
        dataset_root = (path.parent / dataset_root).resolve()
    if not (dataset_root / "profile.cfg").exists():
        raise FileNotFoundError(f"{path}: dataset root {dataset_root} has no profile.cfg")

    encoder_weights = _get(parser, "model", "encoder_weights", str, None)
    if encoder_weights:
        weights_path = Path(encoder_weights)
        if not weights_path.is_absolute():
            weights_path = (path.parent / weights_path).resolve()
        if not weights_path.exists():
            raise FileNotFoundError(f"{path}: encoder_weights {weights_path} not found")
        encoder_weights = str(weights_path)

    window = _get(parser, "ssim", "window", int, 7)
    dynamic_range = _get(parser, "ssim", "dynamic_range", float, None)
    ssim_params = SsimParams(window=window, dynamic_range=dynamic_range) if dynamic_range else None

    train = TrainConfig(
        learning_rate=_get(parser, "train", "learning_rate", float, 1e-4),
        beta1=_get(parser, "train", "beta1", float, 0.9),
        beta2=_get(parser, "train", "beta2", float, 0.999),
        batch_size=_get(parser, "train", "batch_size", int, 8),
        max_iterations=_get(parser, "train", "max_iterations", int, 200),
        validation_interval=_get(parser, "train", "validation_interval", int, 50),
        seed=_get(parser, "train", "seed", int, 0),
        val_fraction=_get(parser, "train", "val_fraction", float, 0.05),
        loss_weights=LossWeights(_get(parser, "train", "lambda_depth", float, 0.1)),
        ssim_params=ssim_params,
        encoder_variant=_get(parser, "model", "encoder", str, "tiny"),
        tiny_width=_get(parser, "model", "tiny_width", float, 1.0 / 16.0),
        pretrained_encoder=_get(parser, "model", "pretrained", bool, False),
        encoder_weights_uri=encoder_weights,
        half_decoder=_get(parser, "model", "half_decoder", bool, False),
        color_aug_off=_get(parser, "train", "color_aug_off", bool, False),
        random_init_encoder=_get(parser, "train", "random_init_encoder", bool, False),
        no_skip_connections=_get(parser, "model", "no_skip_connections", bool, False),
    )
    policy = AugmentPolicy(
        flip_probability=_get(parser, "augment", "flip_probability", float, 0.5),
        channel_permutation_probability=_get(
            parser, "augment", "channel_permutation_probability", float, 0.25
        ),
        rng_seed=train.seed,
    )
    out_dir = Path(_get(parser, "output", "dir", str, "runs/default"))
    if not out_dir.is_absolute():
        out_dir = (path.parent / out_dir).resolve()
    return ExperimentConfig(dataset_root, train, policy, out_dir)


def apply_ablation(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    """Switch one study variant on top of a parsed config."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    train = cfg.train
    policy = cfg.policy
    if name == "color_aug_off":
        train = replace(train, color_aug_off=True)
        policy = AugmentPolicy(policy.flip_probability, 0.0, policy.rng_seed)
    elif name == "no_skip_connections":
        train = replace(train, no_skip_connections=True)
    elif name == "half_decoder":
        train = replace(train, half_decoder=True)
    elif name == "random_init_encoder":
        train = replace(train, random_init_encoder=True)
    elif name == "deeper_encoder":
        variant = "densenet201" if train.encoder_variant.startswith("densenet") else train.encoder_variant
        train = replace(train, encoder_variant=variant)
    return ExperimentConfig(cfg.dataset_root, train, policy, cfg.out_dir)
