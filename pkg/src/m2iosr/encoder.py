"""Multi-tap convolutional encoder with a Gaussian latent head.

The backbone has four stages of ``(conv3x3 -> BatchNorm -> ReLU) x 2``
separated by stride-2 max pooling. For an ``H x W`` input the stage
resolutions are ``H, H/2, H/4, H/8``; the stage-1 output is tapped as the
large map (16x16 for 32x32 inputs) and the stage-3 output as the small map
(4x4). The small map is average pooled and projected to ``(mu, log_var)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
DOWNSAMPLE = 8


@dataclass
class EncoderConfig:
    input_shape: tuple[int, int, int] = (3, 32, 32)
    stage_widths: tuple[int, ...] = (64, 128, 128, 256)
    latent_dim: int = 32
    num_known: int = 6
    classifier_hidden: Optional[int] = None

    def __post_init__(self) -> None:
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.stage_widths = tuple(int(v) for v in self.stage_widths)
        if len(self.input_shape) != 3:
            raise ConfigError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        c, h, w = self.input_shape
        if c < 1 or h < DOWNSAMPLE or w < DOWNSAMPLE:
            raise ConfigError(f"input_shape too small: {self.input_shape}")
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ConfigError(
                f"height and width must be multiples of {DOWNSAMPLE}, got {h}x{w}"
            )
        if len(self.stage_widths) != 4 or min(self.stage_widths) < 1:
            raise ConfigError(f"stage_widths must be four positive ints, got {self.stage_widths}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.num_known < 2:
            raise ConfigError("num_known must be >= 2")
        if self.classifier_hidden is not None and self.classifier_hidden < 1:
            raise ConfigError("classifier_hidden must be positive or None")

    @property
    def tap_sizes(self) -> tuple[tuple[int, int], tuple[int, int]]:
        _, h, w = self.input_shape
        return (h // 2, w // 2), (h // 8, w // 8)

    @property
    def c16(self) -> int:
        return self.stage_widths[1]

    @property
    def c4(self) -> int:
        return self.stage_widths[3]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["stage_widths"] = list(self.stage_widths)
        return d


@dataclass
class LatentStats:
    mu: torch.Tensor
    log_var: torch.Tensor

    @property
    def var(self) -> torch.Tensor:
        return self.log_var.exp()


@dataclass
class FeatureTaps:
    f16: torch.Tensor
    f4: torch.Tensor
    stats: LatentStats


def _stage(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def _check_finite(x: torch.Tensor, where: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(f"non-finite activations in encoder layer '{where}'")


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        widths = config.stage_widths
        in_ch = config.input_shape[0]
        self.stages = nn.ModuleList()
        for w in widths:
            self.stages.append(_stage(in_ch, w))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.head = nn.Linear(widths[-1], 2 * config.latent_dim)

    def forward(self, images: torch.Tensor) -> FeatureTaps:
        expected = self.config.input_shape
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ConfigError(
                f"expected images of shape (batch, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {tuple(images.shape)}"
            )
        x = images
        taps = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.pool(x)
            x = stage(x)
            _check_finite(x, f"stage{i}")
            taps.append(x)
        pooled = F.adaptive_avg_pool2d(taps[3], 1).flatten(1)
        out = self.head(pooled)
        _check_finite(out, "latent_head")
        mu, log_var = out.chunk(2, dim=1)
        log_var = log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
        return FeatureTaps(f16=taps[1], f4=taps[3], stats=LatentStats(mu, log_var))


def sample_latent(
    stats: LatentStats, mode: str, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Draw ``z``: the mean in eval mode, a reparameterised sample in train mode."""
    if mode == "eval":
        return stats.mu
    if mode != "train":
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    # infinite log-variances are clamped to the floor/ceiling below
    if not torch.isfinite(stats.mu).all() or torch.isnan(stats.log_var).any():
        raise NumericError("non-finite latent statistics")
    log_var = stats.log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    eps = torch.randn(
        stats.mu.shape, generator=generator, dtype=stats.mu.dtype, device=stats.mu.device
    )
    return stats.mu + torch.exp(0.5 * log_var) * eps


class Classifier(nn.Module):
    """Closed-set head on the latent vector."""

    def __init__(self, latent_dim: int, num_known: int, hidden: Optional[int] = None):
        super().__init__()
        if hidden is None:
            self.net = nn.Linear(latent_dim, num_known)
        else:
            self.net = nn.Sequential(
                nn.Linear(latent_dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, num_known)
            )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)
