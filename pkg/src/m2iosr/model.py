"""The trainable bundle: encoder, classifier, discriminators and class centres."""

from __future__ import annotations

from collections import OrderedDict
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import Classifier, Encoder, EncoderConfig, FeatureTaps, sample_latent
from .gaussian import ClassCenterMap
from .mi import ADAPTER_CHANNELS, HIDDEN, GlobalDiscriminator, LocalDiscriminator


class Decoder(nn.Module):
    """Transposed-conv decoder used only by the auto-encoder baseline."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        c, h, w = config.input_shape
        _, w1, w2, w3 = config.stage_widths
        self.seed_shape = (w3, h // 8, w // 8)
        self.fc = nn.Linear(config.latent_dim, w3 * (h // 8) * (w // 8))
        self.up = nn.Sequential(
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(w3, w2, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(w2, w1, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(w1, c, 4, stride=2, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.up(self.fc(z).view(-1, *self.seed_shape))


class OpenSetModel(nn.Module):
    """All parameter groups of one run.

    The encoder and classifier are built first so that two models created
    under the same seed share their initial backbone weights.
    """

    def __init__(
        self,
        config: EncoderConfig,
        *,
        disc_hidden: int = HIDDEN,
        adapter_channels: int = ADAPTER_CHANNELS,
        with_decoder: bool = False,
    ):
        super().__init__()
        self.config = config
        self.disc_hidden = disc_hidden
        self.adapter_channels = adapter_channels
        J, K = config.latent_dim, config.num_known
        self.encoder = Encoder(config)
        self.classifier = Classifier(J, K, config.classifier_hidden)
        self.global_disc = GlobalDiscriminator(
            config.c16, config.tap_sizes[0], J, hidden=disc_hidden, adapter_channels=adapter_channels
        )
        self.local_discs = nn.ModuleDict(
            {
                "1t16": LocalDiscriminator(config.c16, J, hidden=disc_hidden),
                "1t4": LocalDiscriminator(config.c4, J, hidden=disc_hidden),
                "4t4": LocalDiscriminator(config.c4, J, hidden=disc_hidden),
            }
        )
        self.proj_4t4 = nn.Linear(config.c4, J)
        self.centers = ClassCenterMap(K, J)
        self.decoder: Optional[Decoder] = Decoder(config) if with_decoder else None

    def parameter_groups(self) -> "OrderedDict[str, nn.Module]":
        groups = OrderedDict(
            encoder=self.encoder,
            classifier=self.classifier,
            global_discriminator=self.global_disc,
            local_1t16=self.local_discs["1t16"],
            local_1t4=self.local_discs["1t4"],
            local_4t4=self.local_discs["4t4"],
            projection_4t4=self.proj_4t4,
            class_centers=self.centers,
        )
        if self.decoder is not None:
            groups["decoder"] = self.decoder
        return groups

    def forward(self, images: torch.Tensor) -> FeatureTaps:
        return self.encoder(images)

    def summary_4t4(self, f4: torch.Tensor) -> torch.Tensor:
        return self.proj_4t4(F.adaptive_avg_pool2d(f4, 1).flatten(1))

    @torch.no_grad()
    def logits(self, images: torch.Tensor) -> torch.Tensor:
        """Closed-set scores with ``z = mu``; caller controls train/eval mode."""
        taps = self.encoder(images)
        return self.classifier(sample_latent(taps.stats, "eval"))
