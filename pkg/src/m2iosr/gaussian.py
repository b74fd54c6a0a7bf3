"""Learned class centres and the class-conditional Gaussian KL penalty."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import LatentStats
from .errors import ConfigError, NumericError


class ClassCenterMap(nn.Module):
    """Bias-free linear map from one-hot labels to per-class latent means.

    ``centers[k]`` is exactly the image of ``one_hot(k)``.
    """

    def __init__(self, num_known: int, latent_dim: int, init_std: float = 1.0):
        super().__init__()
        self.num_known = num_known
        self.latent_dim = latent_dim
        self.linear = nn.Linear(num_known, latent_dim, bias=False)
        nn.init.normal_(self.linear.weight, std=init_std)

    @property
    def centers(self) -> torch.Tensor:
        return self.linear.weight.t()

    def forward(self, labels: torch.Tensor) -> torch.Tensor:
        self._check(labels)
        one_hot = F.one_hot(labels, self.num_known).to(self.linear.weight.dtype)
        return self.linear(one_hot)

    def center_of(self, k: int) -> torch.Tensor:
        if not 0 <= k < self.num_known:
            raise ConfigError(f"class index {k} out of range [0, {self.num_known})")
        return self.centers[k]

    def _check(self, labels: torch.Tensor) -> None:
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.num_known):
            raise ConfigError(f"labels must lie in [0, {self.num_known})")


def kl_loss(stats: LatentStats, labels: torch.Tensor, centers: ClassCenterMap) -> torch.Tensor:
    """Batch mean of KL(N(mu, diag(exp(log_var))) || N(center_k, I))."""
    mu, log_var = stats.mu, stats.log_var
    if not (torch.isfinite(mu).all() and torch.isfinite(log_var).all()):
        raise NumericError("non-finite latent statistics in kl_loss")
    target = centers(labels)
    per_dim = 1.0 + log_var - (mu - target).pow(2) - log_var.exp()
    return (-0.5 * per_dim.sum(dim=1)).mean()


def export_centers_csv(centers: ClassCenterMap, path) -> None:
    np.savetxt(path, centers.centers.detach().cpu().double().numpy(), delimiter=",", fmt="%.9g")
