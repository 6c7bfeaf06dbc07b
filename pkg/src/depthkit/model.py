"""Encoder-decoder depth network with pluggable backbones.

The encoder is a truncated image-classification backbone exposing a
five-stage feature pyramid at strides 2/4/8/16/32 (stages CONV1, POOL1,
POOL2, POOL3, BLOCK4). The decoder is a 1x1 bridge convolution followed by
four upsample blocks (bilinear x2, skip concatenation, two 3x3
convolutions halving the filters, leaky ReLU after each) and a final 3x3
convolution to one channel with linear activation. Output is at half the
input resolution, in reciprocal target space.
"""

from __future__ import annotations

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

logger = logging.getLogger(__name__)

__all__ = [
    "BackboneSpec",
    "ModelConfig",
    "DepthModel",
    "STAGE_NAMES",
    "DENSENET169_CHANNELS",
    "DENSENET201_CHANNELS",
    "densenet_spec",
    "make_tiny_backbone",
    "build_model",
    "count_parameters",
    "WEIGHTS_ENV_VAR",
]

STAGE_NAMES = ("CONV1", "POOL1", "POOL2", "POOL3", "BLOCK4")
STAGE_STRIDES = (2, 4, 8, 16, 32)
DENSENET169_CHANNELS = (64, 64, 128, 256, 1664)
DENSENET201_CHANNELS = (64, 64, 128, 256, 1920)
WEIGHTS_ENV_VAR = "DEPTHKIT_WEIGHTS"


@dataclass(frozen=True)
class BackboneSpec:
    """Identity and per-stage channel counts of an encoder."""

    name: str
    stage_channels: tuple[int, int, int, int, int]
    pretrained: bool = False
    weights_uri: str | None = None

    def __post_init__(self):
        if len(self.stage_channels) != len(STAGE_NAMES):
            raise ValueError("backbone must declare exactly five stages")
        if any(c < 1 for c in self.stage_channels):
            raise ValueError("stage channels must be positive")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneSpec
    decoder_width: int | None = None  # None -> BLOCK4 channels; halve for the thin-decoder variant
    use_skip_connections: bool = True
    leaky_relu_alpha: float = 0.2
    output_channels: int = 1

    @property
    def effective_decoder_width(self) -> int:
        return self.decoder_width or self.backbone.stage_channels[-1]


def densenet_spec(variant: str = "densenet169", pretrained: bool = False,
                  weights_uri: str | None = None) -> BackboneSpec:
    channels = {
        "densenet169": DENSENET169_CHANNELS,
        "densenet201": DENSENET201_CHANNELS,
    }
    if variant not in channels:
        raise ValueError(f"unknown densenet variant {variant!r}")
    return BackboneSpec(variant, channels[variant], pretrained, weights_uri)


def make_tiny_backbone(width_multiplier: float, pretrained: bool = False,
                       weights_uri: str | None = None) -> BackboneSpec:
    """Desk-scale stand-in with channels proportional to the full profile."""
    if width_multiplier <= 0.0:
        raise ValueError("width_multiplier must be positive")
    channels = tuple(max(1, round(c * width_multiplier)) for c in DENSENET169_CHANNELS)
    return BackboneSpec(f"tiny-{width_multiplier:g}", channels, pretrained, weights_uri)


class DenseNetEncoder(nn.Module):
    """Truncated torchvision DenseNet exposing the five pyramid stages."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        import torchvision.models as tvm

        factory = {"densenet169": tvm.densenet169, "densenet201": tvm.densenet201}
        self.features = factory[spec.name](weights=None).features
        self.spec = spec

    def forward(self, x: torch.Tensor) -> "OrderedDict[str, torch.Tensor]":
        taps = {
            "relu0": "CONV1",
            "pool0": "POOL1",
            "transition1": "POOL2",
            "transition2": "POOL3",
        }
        pyramid: OrderedDict[str, torch.Tensor] = OrderedDict()
        h = x
        for name, module in self.features.named_children():
            h = module(h)
            if name in taps:
                pyramid[taps[name]] = h
        pyramid["BLOCK4"] = F.relu(h)
        return pyramid


class TinyEncoder(nn.Module):
    """Randomly initialized five-stage conv net with the same stride layout."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        c1, c2, c3, c4, c5 = spec.stage_channels
        self.spec = spec
        self.stem = nn.Conv2d(3, c1, kernel_size=7, stride=2, padding=3)
        self.pool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        self.pool_proj = nn.Conv2d(c1, c2, kernel_size=1) if c2 != c1 else nn.Identity()
        self.stage3 = self._stage(c2, c3)
        self.stage4 = self._stage(c3, c4)
        self.stage5 = self._stage(c4, c5)
        self.reset_parameters()

    @staticmethod
    def _stage(c_in: int, c_out: int) -> nn.Sequential:
        return nn.Sequential(
            nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
        )

    def reset_parameters(self):
        # unlike the batch-normalized full backbones, this net has nothing to
        # rescale activations, so init must preserve their variance itself
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
                nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> "OrderedDict[str, torch.Tensor]":
        pyramid: OrderedDict[str, torch.Tensor] = OrderedDict()
        h = F.relu(self.stem(x))
        pyramid["CONV1"] = h
        h = self.pool_proj(self.pool(h))
        pyramid["POOL1"] = h
        h = self.stage3(h)
        pyramid["POOL2"] = h
        h = self.stage4(h)
        pyramid["POOL3"] = h
        h = self.stage5(h)
        pyramid["BLOCK4"] = h
        return pyramid


class UpsampleBlock(nn.Module):
    """Bilinear x2, optional skip concat, two 3x3 convs with leaky ReLU."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int, alpha: float):
        super().__init__()
        self.conv_a = nn.Conv2d(in_channels + skip_channels, out_channels, 3, padding=1)
        self.conv_b = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.alpha = alpha

    def forward(self, x: torch.Tensor, skip: torch.Tensor | None) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        x = F.leaky_relu(self.conv_a(x), self.alpha)
        x = F.leaky_relu(self.conv_b(x), self.alpha)
        return x


class DepthModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        spec = cfg.backbone
        if spec.name.startswith("densenet"):
            self.encoder: nn.Module = DenseNetEncoder(spec)
        else:
            self.encoder = TinyEncoder(spec)
        if spec.pretrained:
            self._load_pretrained(spec)

        width = cfg.effective_decoder_width
        skip_channels = list(spec.stage_channels[:4][::-1])  # POOL3, POOL2, POOL1, CONV1
        if not cfg.use_skip_connections:
            skip_channels = [0, 0, 0, 0]
        self.bridge = nn.Conv2d(spec.stage_channels[-1], width, kernel_size=1)
        blocks = []
        in_ch = width
        for sk in skip_channels:
            out_ch = max(1, in_ch // 2)
            blocks.append(UpsampleBlock(in_ch, sk, out_ch, cfg.leaky_relu_alpha))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(in_ch, cfg.output_channels, 3, padding=1)
        self._init_decoder()

    def _init_decoder(self):
        # fan-based uniform init; the activation gain keeps feature variance
        # flat through the leaky-ReLU stack (there is no normalization layer
        # to do it), and the head starts at the far-plane target m/d_max = 1
        # so untrained outputs already sit inside the valid range
        gain = nn.init.calculate_gain("leaky_relu", self.cfg.leaky_relu_alpha)
        for b in self.blocks:
            nn.init.xavier_uniform_(b.conv_a.weight, gain=gain)
            nn.init.xavier_uniform_(b.conv_b.weight, gain=gain)
            nn.init.zeros_(b.conv_a.bias)
            nn.init.zeros_(b.conv_b.bias)
        nn.init.xavier_uniform_(self.bridge.weight)
        nn.init.zeros_(self.bridge.bias)
        nn.init.xavier_uniform_(self.head.weight)
        nn.init.ones_(self.head.bias)

    def _load_pretrained(self, spec: BackboneSpec):
        path = spec.weights_uri or os.environ.get(WEIGHTS_ENV_VAR)
        if path and Path(path).exists():
            state = torch.load(path, map_location="cpu", weights_only=True)
            self.encoder.load_state_dict(state)
            logger.info("loaded encoder weights from %s", path)
        else:
            logger.warning(
                "pretrained encoder requested but no weights found "
                "(weights_uri=%r, $%s=%r); keeping random initialization",
                spec.weights_uri, WEIGHTS_ENV_VAR, os.environ.get(WEIGHTS_ENV_VAR),
            )

    def _check_input(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ValueError(
                f"input spatial dims must be divisible by 32, got {tuple(x.shape[2:])}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """RGB batch (B, 3, H, W) in [0, 1] -> target-space map (B, 1, H/2, W/2)."""
        self._check_input(x)
        pyramid = self.encoder(x)
        h = self.bridge(pyramid["BLOCK4"])
        skips = [pyramid["POOL3"], pyramid["POOL2"], pyramid["POOL1"], pyramid["CONV1"]]
        for block, skip in zip(self.blocks, skips):
            h = block(h, skip if self.cfg.use_skip_connections else None)
        return self.head(h)

    @torch.no_grad()
    def trace_shapes(self, x: torch.Tensor) -> "OrderedDict[str, tuple[int, int, int]]":
        """Named (H, W, C) shapes of every architectural stage for one input."""
        self._check_input(x)
        rows: OrderedDict[str, tuple[int, int, int]] = OrderedDict()

        def record(name: str, t: torch.Tensor):
            rows[name] = (t.shape[2], t.shape[3], t.shape[1])

        record("INPUT", x)
        pyramid = self.encoder(x)
        for name in STAGE_NAMES[:4]:
            record(name, pyramid[name])
        h = self.bridge(pyramid["BLOCK4"])
        record("CONV2", h)
        skips = [pyramid["POOL3"], pyramid["POOL2"], pyramid["POOL1"], pyramid["CONV1"]]
        for k, (block, skip) in enumerate(zip(self.blocks, skips), start=1):
            h = F.interpolate(h, scale_factor=2.0, mode="bilinear", align_corners=False)
            record(f"UP{k}", h)
            if self.cfg.use_skip_connections:
                h = torch.cat([h, skip], dim=1)
            record(f"CONCAT{k}", h)
            h = F.leaky_relu(block.conv_a(h), block.alpha)
            record(f"UP{k}-CONVA", h)
            h = F.leaky_relu(block.conv_b(h), block.alpha)
            record(f"UP{k}-CONVB", h)
        record("CONV3", self.head(h))
        return rows


def build_model(cfg: ModelConfig) -> DepthModel:
    return DepthModel(cfg)


def count_parameters(model: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
