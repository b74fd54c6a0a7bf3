"""Jensen-Shannon mutual information objectives and their discriminators.

Discriminators return raw scores. The softplus that usually closes a
discriminator lives inside :func:`jsd_objective` instead, where ``-softplus(-s)`` and
``-softplus(s)`` are the stable forms of ``log sigmoid(s)`` and
``log(1 - sigmoid(s))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError

PAIR_KINDS = ("1t16", "1t4", "4t4")
HIDDEN = 512
ADAPTER_CHANNELS = 64


@dataclass
class MITerms:
    l_global: float
    l_1t16: float
    l_1t4: float
    l_4t4: float


class GlobalDiscriminator(nn.Module):
    """Scores a (feature map, latent vector) pair with one real per sample."""

    def __init__(
        self,
        map_channels: int,
        map_size: tuple[int, int],
        latent_dim: int,
        hidden: int = HIDDEN,
        adapter_channels: int = ADAPTER_CHANNELS,
    ):
        super().__init__()
        self.adapter = nn.Sequential(
            nn.Conv2d(map_channels, adapter_channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(adapter_channels, adapter_channels, 3, padding=1),
        )
        flat = adapter_channels * map_size[0] * map_size[1]
        self.scorer = nn.Sequential(
            nn.Linear(flat + latent_dim, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, 1),
        )

    @property
    def final(self) -> nn.Linear:
        return self.scorer[-1]

    def forward(self, fmap: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        h = self.adapter(fmap).flatten(1)
        return self.scorer(torch.cat([h, z], dim=1)).squeeze(1)


class LocalDiscriminator(nn.Module):
    """1x1-conv scorer of a summary vector against every location of a map."""

    def __init__(self, map_channels: int, summary_dim: int, hidden: int = HIDDEN):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(map_channels + summary_dim, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 1),
        )

    @property
    def final(self) -> nn.Conv2d:
        return self.net[-1]

    def forward(self, fmap: torch.Tensor, summary: torch.Tensor) -> torch.Tensor:
        b, _, h, w = fmap.shape
        tiled = summary[:, :, None, None].expand(b, summary.shape[1], h, w)
        return self.net(torch.cat([fmap, tiled], dim=1)).squeeze(1)


def make_negative_pairing(features: torch.Tensor) -> torch.Tensor:
    """Reindex a batch by the cyclic shift ``i -> (i + 1) mod batch``."""
    if features.shape[0] < 2:
        raise ConfigError("negative pairing requires batch >= 2")
    return torch.roll(features, shifts=-1, dims=0)


def jsd_objective(
    pos_scores: Optional[torch.Tensor],
    neg_scores: Optional[torch.Tensor],
    *,
    check_finite: bool = True,
) -> torch.Tensor:
    """JSD lower bound ``E_pos[-softplus(-s)] - E_neg[softplus(s)]``.

    Passing ``None`` for either set drops that expectation; the
    positive-only and negative-only ablations rely on this.
    """
    if pos_scores is None and neg_scores is None:
        raise ConfigError("jsd_objective needs at least one score set")
    total = None
    for scores, sign in ((pos_scores, -1.0), (neg_scores, 1.0)):
        if scores is None:
            continue
        if scores.numel() == 0:
            raise ConfigError("jsd_objective score sets must be non-empty")
        if check_finite and not torch.isfinite(scores).all():
            raise NumericError("non-finite discriminator scores")
        term = -F.softplus(sign * scores).mean()
        total = term if total is None else total + term
    return total


def global_mi(
    f16: torch.Tensor,
    z: torch.Tensor,
    disc: GlobalDiscriminator,
    negatives: Optional[torch.Tensor] = None,
    *,
    use_positive: bool = True,
    use_negative: bool = True,
) -> torch.Tensor:
    if f16.shape[0] != z.shape[0]:
        raise ConfigError(f"batch mismatch: f16 {tuple(f16.shape)} vs z {tuple(z.shape)}")
    pos = disc(f16, z) if use_positive else None
    neg = None
    if use_negative:
        shifted = make_negative_pairing(f16) if negatives is None else negatives
        neg = disc(shifted, z)
    return jsd_objective(pos, neg)


def local_mi(
    fmap: torch.Tensor,
    summary: torch.Tensor,
    disc: LocalDiscriminator,
    pair_kind: str,
    negatives: Optional[torch.Tensor] = None,
    *,
    use_positive: bool = True,
    use_negative: bool = True,
) -> torch.Tensor:
    """Average per-location JSD bound between ``fmap`` and ``summary``.

    Negatives pair the shifted image's map with the original summary.
    """
    if pair_kind not in PAIR_KINDS:
        raise ConfigError(f"unknown pair kind {pair_kind!r}; expected one of {PAIR_KINDS}")
    if fmap.shape[0] != summary.shape[0]:
        raise ConfigError(
            f"batch mismatch: map {tuple(fmap.shape)} vs summary {tuple(summary.shape)}"
        )
    shifted = None
    if use_negative:
        shifted = make_negative_pairing(fmap) if negatives is None else negatives
    pos = disc(fmap, summary) if use_positive else None
    neg = disc(shifted, summary) if use_negative else None
    return jsd_objective(pos, neg)


def check_local_weights(a1: float, a2: float, a3: float) -> None:
    if min(a1, a2, a3) < 0:
        raise ConfigError(f"local MI weights must be >= 0, got {(a1, a2, a3)}")
    if abs(a1 + a2 + a3 - 1.0) > 1e-9:
        raise ConfigError(f"local MI weights must sum to 1, got {a1 + a2 + a3!r}")


def local_mi_loss(l_1t16, l_1t4, l_4t4, a1: float = 0.7, a2: float = 0.1, a3: float = 0.2):
    check_local_weights(a1, a2, a3)
    return a1 * l_1t16 + a2 * l_1t4 + a3 * l_4t4
