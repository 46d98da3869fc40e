"""Stride-8 counting network with twin heads, plus the EMA teacher."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .density import LEVELS, OUTPUT_STRIDE, DensityMap, pad_image_to_multiple


class BadConfig(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture knobs for the desk-scale counting network.

    The backbone is a 4-stage convolutional stack reaching stride 8; any
    stride-8 feature extractor (e.g. a truncated VGG-style trunk) is
    admissible behind the same contract. Head widths are declared
    defaults, not requirements.
    """

    levels: int = LEVELS
    stage_channels: tuple[int, ...] = (16, 32, 48, 64)
    reg_channels: tuple[int, int] = (128, 64)
    cls_channels: int = 64
    fuse_stages: bool = True


def _group_norm(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    return nn.GroupNorm(1, channels)


class FullWaveRectifier(nn.Module):
    """Nonnegativity via |x|: unlike a half-wave ReLU it cannot die, so the
    density head keeps receiving gradient even if pre-activations go negative."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.abs()


def _stage(in_ch: int, out_ch: int, pool: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    if pool:
        layers.append(nn.MaxPool2d(2, ceil_mode=True))
    layers += [
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        _group_norm(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        _group_norm(out_ch),
        nn.ReLU(inplace=True),
    ]
    return nn.Sequential(*layers)


class CountingModel(nn.Module):
    """Backbone -> multi-stage fusion -> regression head + classification head.

    forward(x) with x of shape (B, 3, H, W) returns a nonnegative density
    map (B, 1, ceil(H/8), ceil(W/8)) and class logits (B, K, ...same...).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.levels < 2:
            raise BadConfig(f"need at least 2 density levels, got {config.levels}")
        if len(config.stage_channels) != 4:
            raise BadConfig("backbone expects exactly 4 stage widths")
        if min(config.stage_channels) < 1 or min(config.reg_channels) < 1:
            raise BadConfig("channel widths must be positive")
        self.config = config
        c1, c2, c3, c4 = config.stage_channels
        self.stage1 = _stage(3, c1, pool=False)
        self.stage2 = _stage(c1, c2, pool=True)
        self.stage3 = _stage(c2, c3, pool=True)
        self.stage4 = _stage(c3, c4, pool=True)
        if config.fuse_stages:
            # Lateral 1x1 projections of the last three stages, bilinearly
            # resized onto the stride-8 grid and summed.
            self.lateral2 = nn.Conv2d(c2, c4, 1)
            self.lateral3 = nn.Conv2d(c3, c4, 1)
            self.fuse = nn.Sequential(
                nn.Conv2d(c4, c4, 3, padding=1), _group_norm(c4), nn.ReLU(inplace=True)
            )
        r1, r2 = config.reg_channels
        final = nn.Conv2d(r2, 1, 1)
        nn.init.constant_(final.bias, 0.1)  # start the density head alive
        self.reg_head = nn.Sequential(
            nn.Conv2d(c4, r1, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(r1, r2, 3, padding=1),
            nn.ReLU(inplace=True),
            final,
            FullWaveRectifier(),  # densities are nonnegative by definition
        )
        self.cls_head = nn.Sequential(
            nn.Conv2d(c4, config.cls_channels, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(config.cls_channels, config.levels, 1),
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        f2 = self.stage2(self.stage1(x))
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        if self.config.fuse_stages:
            size = f4.shape[-2:]
            fused = (
                f4
                + F.interpolate(self.lateral3(f3), size=size, mode="bilinear", align_corners=False)
                + F.interpolate(self.lateral2(f2), size=size, mode="bilinear", align_corners=False)
            )
            f4 = self.fuse(fused)
        return self.reg_head(f4), self.cls_head(f4)


def build_model(config: ModelConfig | None = None) -> CountingModel:
    return CountingModel(config or ModelConfig())


def init_teacher(student: CountingModel) -> CountingModel:
    """Exact parameter copy of the student; never receives gradients."""
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    return teacher


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> None:
    """theta_t <- m * theta_t + (1 - m) * theta_s, applied once per optimizer step."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ShapeMismatch("teacher and student expose different parameter names")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise ShapeMismatch(f"parameter {name}: {tuple(tp.shape)} vs {tuple(sp.shape)}")
        tp.mul_(momentum).add_(sp, alpha=1.0 - momentum)


def to_input_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) float32 tensor."""
    arr = np.ascontiguousarray(np.transpose(image, (2, 0, 1)), dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0)


@torch.no_grad()
def predict(model: CountingModel, image: np.ndarray) -> tuple[DensityMap, np.ndarray]:
    """Deterministic inference on one image.

    Reflect-pads to a multiple of 8 and returns the stride-8 density map
    together with the per-cell class probability map of shape (K, h, w).
    """
    was_training = model.training
    model.eval()
    try:
        padded = pad_image_to_multiple(image, OUTPUT_STRIDE)
        density, logits = model(to_input_tensor(padded))
    finally:
        model.train(was_training)
    probs = torch.softmax(logits, dim=1)
    return (
        DensityMap(density[0, 0].numpy().astype(np.float64), stride=OUTPUT_STRIDE),
        probs[0].numpy(),
    )
