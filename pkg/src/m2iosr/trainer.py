"""Two-phase training: a max-min MI/KL update, then a cross-entropy update."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .encoder import EncoderConfig, sample_latent
from .errors import ConfigError, NumericError
from .gaussian import kl_loss
from .mi import check_local_weights, global_mi, local_mi
from .model import OpenSetModel


@dataclass
class TrainConfig:
    beta1: float = 0.5
    beta2: float = 1.0
    gamma: float = 0.1
    a1: float = 0.7
    a2: float = 0.1
    a3: float = 0.2
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay_every: int = 50
    lr_decay_factor: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    # ablation switches; the defaults are the full method
    recon_weight: float = 0.0
    use_positive: bool = True
    use_negative: bool = True

    def __post_init__(self) -> None:
        check_local_weights(self.a1, self.a2, self.a3)
        for name in ("beta1", "beta2", "gamma", "recon_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0 or self.lr_decay_every < 1:
            raise ConfigError("epochs must be >= 0 and lr_decay_every >= 1")
        if not (self.use_positive or self.use_negative):
            raise ConfigError("at least one of use_positive/use_negative must be set")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    l_global: float = 0.0
    l_1t16: float = 0.0
    l_1t4: float = 0.0
    l_4t4: float = 0.0
    L_local: float = 0.0
    L_KL: float = 0.0
    L_recon: float = 0.0
    L_maxmin_total: float = 0.0
    L_ce: float = 0.0
    epoch: int = 0
    iteration: int = 0

    @property
    def total(self) -> float:
        """Sum of both phase objectives."""
        return self.L_maxmin_total + self.L_ce

    def recompose(self, config: TrainConfig) -> float:
        return (
            -(config.beta1 * self.l_global + config.beta2 * self.L_local)
            + config.gamma * self.L_KL
            + config.recon_weight * self.L_recon
        )


LOSS_FIELDS = [f.name for f in fields(LossBreakdown)]


def lr_at(epoch: int, config: TrainConfig) -> float:
    return config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def _finite(value: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite loss term '{name}'")
    return value


def _guarded(name: str, fn, *args, **kwargs) -> torch.Tensor:
    try:
        return _finite(fn(*args, **kwargs), name)
    except NumericError as exc:
        if name in str(exc):
            raise
        raise NumericError(f"non-finite loss term '{name}': {exc}") from exc


def has_maxmin_terms(config: TrainConfig) -> bool:
    return (
        config.beta1 > 0
        or (config.beta2 > 0 and max(config.a1, config.a2, config.a3) > 0)
        or config.gamma > 0
        or config.recon_weight > 0
    )


def maxmin_loss(
    model: OpenSetModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    config: TrainConfig,
    generator: Optional[torch.Generator] = None,
    *,
    with_ce: bool = False,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Composite ``-(beta1 L_global + beta2 L_local) + gamma L_KL`` on one batch.

    Terms whose weight is zero are skipped and reported as 0. With
    ``with_ce`` the cross-entropy of the same latent sample is also
    measured (not added to the returned tensor).
    """
    taps = model.encoder(images)
    z = sample_latent(taps.stats, "train", generator)
    zero = images.new_zeros(())
    pn = dict(use_positive=config.use_positive, use_negative=config.use_negative)

    l_global = zero
    if config.beta1 > 0:
        l_global = _guarded("l_global", global_mi, taps.f16, z, model.global_disc, **pn)

    local = {"1t16": zero, "1t4": zero, "4t4": zero}
    if config.beta2 > 0:
        weights = {"1t16": config.a1, "1t4": config.a2, "4t4": config.a3}
        for kind, weight in weights.items():
            if weight <= 0:
                continue
            if kind == "1t16":
                fmap, summary = taps.f16, z
            elif kind == "1t4":
                fmap, summary = taps.f4, z
            else:
                fmap, summary = taps.f4, model.summary_4t4(taps.f4)
            local[kind] = _guarded(
                f"l_{kind}", local_mi, fmap, summary, model.local_discs[kind], kind, **pn
            )
    L_local = config.a1 * local["1t16"] + config.a2 * local["1t4"] + config.a3 * local["4t4"]

    L_kl = zero
    if config.gamma > 0:
        L_kl = _guarded("L_KL", kl_loss, taps.stats, labels, model.centers)

    L_recon = zero
    if config.recon_weight > 0:
        if model.decoder is None:
            raise ConfigError("recon_weight > 0 requires a model built with a decoder")
        L_recon = _finite(F.mse_loss(model.decoder(z), images), "L_recon")

    total = -(config.beta1 * l_global + config.beta2 * L_local) + config.gamma * L_kl
    total = total + config.recon_weight * L_recon

    ce = 0.0
    if with_ce:
        ce = F.cross_entropy(model.classifier(z), labels).item()

    breakdown = LossBreakdown(
        l_global=l_global.item(),
        l_1t16=local["1t16"].item(),
        l_1t4=local["1t4"].item(),
        l_4t4=local["4t4"].item(),
        L_local=L_local.item(),
        L_KL=L_kl.item(),
        L_recon=L_recon.item(),
        L_maxmin_total=total.item(),
        L_ce=ce,
    )
    return total, breakdown


def classification_loss(
    model: OpenSetModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    taps = model.encoder(images)
    z = sample_latent(taps.stats, "train", generator)
    return _finite(F.cross_entropy(model.classifier(z), labels), "L_ce")


class TrainingError(RuntimeError):
    """Training aborted; ``history`` holds the breakdowns recorded so far."""

    def __init__(self, message: str, history: list[LossBreakdown]):
        super().__init__(message)
        self.history = history


class Trainer:
    """Owns the model's parameters for the duration of training."""

    def __init__(self, model: OpenSetModel, config: TrainConfig):
        self.model = model
        self.config = config
        # momentum SGD over every group; parameters outside a phase's graph
        # keep grad=None and are skipped by the optimizer
        self.optimizer = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
        self.data_rng = torch.Generator().manual_seed(config.seed)
        self.noise_rng = torch.Generator().manual_seed(config.seed + 1)
        self.epoch = 0
        self.iteration = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        for group in self.optimizer.param_groups:
            group["lr"] = lr_at(epoch, self.config)

    def _check_batch(self, images: torch.Tensor) -> None:
        if images.shape[0] < 2:
            raise ConfigError("training batches need at least 2 samples")

    def maxmin_step(self, images: torch.Tensor, labels: torch.Tensor) -> LossBreakdown:
        self._check_batch(images)
        self.model.train()
        if not has_maxmin_terms(self.config):
            return LossBreakdown(epoch=self.epoch, iteration=self.iteration)
        self.optimizer.zero_grad(set_to_none=True)
        loss, breakdown = maxmin_loss(self.model, images, labels, self.config, self.noise_rng)
        loss.backward()
        self.optimizer.step()
        breakdown.epoch, breakdown.iteration = self.epoch, self.iteration
        return breakdown

    def classification_step(self, images: torch.Tensor, labels: torch.Tensor) -> float:
        self._check_batch(images)
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = classification_loss(self.model, images, labels, self.noise_rng)
        loss.backward()
        self.optimizer.step()
        return loss.item()

    def batches(self, n: int):
        order = torch.randperm(n, generator=self.data_rng)
        bs = self.config.batch_size
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            # a singleton tail cannot form negative pairs
            if idx.numel() >= 2:
                yield idx

    def train(
        self,
        images: torch.Tensor,
        labels: torch.Tensor,
        *,
        log: Optional[Callable[[str], None]] = print,
        on_epoch_end: Optional[Callable[[int, "Trainer"], None]] = None,
    ) -> list[LossBreakdown]:
        history: list[LossBreakdown] = []
        try:
            for epoch in range(self.config.epochs):
                self.set_epoch(epoch)
                start = len(history)
                for idx in self.batches(images.shape[0]):
                    x, y = images[idx], labels[idx]
                    breakdown = self.maxmin_step(x, y)
                    breakdown.L_ce = self.classification_step(x, y)
                    history.append(breakdown)
                    self.iteration += 1
                if log is not None:
                    log(format_epoch(epoch, history[start:], lr_at(epoch, self.config)))
                if on_epoch_end is not None:
                    on_epoch_end(epoch, self)
        except Exception as exc:
            raise TrainingError(f"training aborted at epoch {self.epoch}: {exc}", history) from exc
        return history

    @torch.no_grad()
    def measure(self, images: torch.Tensor, labels: torch.Tensor, generator=None) -> LossBreakdown:
        """Breakdown of all terms on one batch without updating anything."""
        buffers = {k: v.clone() for k, v in self.model.named_buffers()}
        self.model.train()
        try:
            _, breakdown = maxmin_loss(
                self.model, images, labels, self.config, generator, with_ce=True
            )
        finally:
            for k, v in self.model.named_buffers():
                v.copy_(buffers[k])
        breakdown.epoch, breakdown.iteration = self.epoch, self.iteration
        return breakdown


def format_epoch(epoch: int, rows: list[LossBreakdown], lr: float) -> str:
    if not rows:
        return f"epoch {epoch}: no batches"
    keys = ("L_maxmin_total", "l_global", "L_local", "L_KL", "L_ce")
    means = {k: sum(getattr(r, k) for r in rows) / len(rows) for k in keys}
    parts = " ".join(f"{k}={v:.4f}" for k, v in means.items())
    return f"epoch {epoch} lr={lr:g} {parts}"


def build_model(
    encoder_config: EncoderConfig,
    seed: int,
    *,
    disc_hidden: int = 512,
    adapter_channels: int = 64,
    with_decoder: bool = False,
    dtype: torch.dtype = torch.float32,
) -> OpenSetModel:
    """Construct a model whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = OpenSetModel(
            encoder_config,
            disc_hidden=disc_hidden,
            adapter_channels=adapter_channels,
            with_decoder=with_decoder,
        )
    return model.to(dtype)


def train(
    images: torch.Tensor,
    labels: torch.Tensor,
    encoder_config: EncoderConfig,
    config: TrainConfig,
    *,
    model: Optional[OpenSetModel] = None,
    log: Optional[Callable[[str], None]] = print,
    on_epoch_end=None,
) -> tuple[OpenSetModel, list[LossBreakdown]]:
    if labels.numel() and (labels.min() < 0 or labels.max() >= encoder_config.num_known):
        raise ConfigError("training labels must be known-class indices")
    if model is None:
        model = build_model(encoder_config, config.seed)
    trainer = Trainer(model, config)
    history = trainer.train(images, labels, log=log, on_epoch_end=on_epoch_end)
    return model, history


def write_history_csv(history: list[LossBreakdown], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_FIELDS)
        for row in history:
            writer.writerow([repr(getattr(row, k)) for k in LOSS_FIELDS])

