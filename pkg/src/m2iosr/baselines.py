"""Ablation ladder built from the shared components."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .datasets import OpenSetData, unknown_pools
from .encoder import EncoderConfig
from .errors import ConfigError
from .evaluation import sweep_openness
from .inference import predict_proba
from .model import OpenSetModel
from .trainer import TrainConfig, build_model, train


@dataclass(frozen=True)
class BaselineSpec:
    id: str
    overrides: dict = field(default_factory=dict)
    with_decoder: bool = False
    description: str = ""

    def train_config(self, base: Optional[TrainConfig] = None) -> TrainConfig:
        return replace(base or TrainConfig(), **self.overrides)


_NO_MI = dict(beta1=0.0, beta2=0.0, gamma=0.0)
_F16_ONLY = dict(a1=1.0, a2=0.0, a3=0.0)

BASELINES: dict[str, BaselineSpec] = {
    s.id: s
    for s in (
        BaselineSpec("I-CNN", dict(_NO_MI), description="classifier trained with cross-entropy only"),
        BaselineSpec(
            "II-AE",
            dict(_NO_MI, recon_weight=1.0),
            with_decoder=True,
            description="auto-encoder with per-pixel MSE reconstruction plus cross-entropy",
        ),
        BaselineSpec(
            "III-DIM",
            dict(_F16_ONLY, gamma=0.0),
            description="global and local MI on the 16x16 map and latent only; "
            "the adversarial prior matching of the original DIM is not reproduced",
        ),
        BaselineSpec("IV-DIM+KL", dict(_F16_ONLY), description="III plus the class-conditional KL"),
        BaselineSpec("V-+L1t4", dict(a1=0.7, a2=0.3, a3=0.0), description="IV plus the 1t4 pair"),
        BaselineSpec("VI-+L4t4", dict(a1=0.7, a2=0.0, a3=0.3), description="IV plus the 4t4 pair"),
        BaselineSpec("VII-full", {}, description="full method"),
        BaselineSpec("VII-pos-only", dict(use_negative=False), description="full method, positive pairs only"),
        BaselineSpec("VII-neg-only", dict(use_positive=False), description="full method, negative pairs only"),
    )
}


def get_baseline(baseline_id: str) -> BaselineSpec:
    try:
        return BASELINES[baseline_id]
    except KeyError:
        raise ConfigError(
            f"unknown baseline {baseline_id!r}; expected one of {list(BASELINES)}"
        ) from None


def build_baseline(
    baseline_id: str,
    encoder_config: EncoderConfig,
    base_config: Optional[TrainConfig] = None,
    *,
    disc_hidden: int = 512,
    adapter_channels: int = 64,
) -> tuple[OpenSetModel, TrainConfig]:
    spec = get_baseline(baseline_id)
    config = spec.train_config(base_config)
    model = build_model(
        encoder_config,
        config.seed,
        disc_hidden=disc_hidden,
        adapter_channels=adapter_channels,
        with_decoder=spec.with_decoder,
    )
    return model, config


@dataclass
class AblationRow:
    baseline_id: str
    seed: int
    n_unknown_classes: int
    openness: float
    macro_f1: float
    closed_set_accuracy: float
    split_hash: str


def closed_set_accuracy(model: OpenSetModel, images: torch.Tensor, labels: torch.Tensor) -> float:
    probs = predict_proba(model, images)
    return float((probs.argmax(axis=1) == labels.numpy()).mean())


def run_ablation(
    runs: Sequence[tuple[int, OpenSetData]],
    baseline_ids: Sequence[str],
    encoder_config: EncoderConfig,
    base_config: Optional[TrainConfig] = None,
    *,
    pool_sizes: Sequence[int],
    tau: float = 0.95,
    disc_hidden: int = 512,
    adapter_channels: int = 64,
    log: Optional[Callable[[str], None]] = print,
    on_model: Optional[Callable[[str, int, OpenSetModel], None]] = None,
) -> list[AblationRow]:
    """Train each baseline on each ``(seed, data)`` run and sweep openness.

    Every baseline of one run sees the same split, seed and data order.
    """
    specs = [get_baseline(b) for b in baseline_ids]
    base = base_config or TrainConfig()
    rows: list[AblationRow] = []
    for seed, data in runs:
        split_hash = data.split.digest()
        pools = unknown_pools(data, pool_sizes, seed=seed)
        for spec in specs:
            if log is not None:
                log(f"[ablate] baseline={spec.id} seed={seed} split={split_hash}")
            model, config = build_baseline(
                spec.id,
                encoder_config,
                replace(base, seed=seed),
                disc_hidden=disc_hidden,
                adapter_channels=adapter_channels,
            )
            model, _ = train(data.train_x, data.train_y, encoder_config, config, model=model, log=log)
            if on_model is not None:
                on_model(spec.id, seed, model)
            acc = closed_set_accuracy(model, data.known_test_x, data.known_test_y)
            curve = sweep_openness(
                model,
                data.known_test_x,
                data.known_test_y,
                pools,
                tau,
            )
            for p in curve:
                rows.append(
                    AblationRow(spec.id, seed, p.n_unknown_classes, p.openness, p.macro_f1, acc, split_hash)
                )
    return rows


ABLATION_COLUMNS = [
    "baseline_id",
    "seed",
    "openness",
    "macro_f1",
    "closed_set_accuracy",
    "n_unknown_classes",
    "split_hash",
]


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.baseline_id, r.seed, f"{r.openness:.6f}", f"{r.macro_f1:.6f}",
                 f"{r.closed_set_accuracy:.6f}", r.n_unknown_classes, r.split_hash]
            )


def mean_f1_at(rows: Sequence[AblationRow], baseline_id: str, n_unknown_classes: int) -> float:
    vals = [r.macro_f1 for r in rows if r.baseline_id == baseline_id and r.n_unknown_classes == n_unknown_classes]
    if not vals:
        raise ConfigError(f"no rows for {baseline_id} at {n_unknown_classes} unknown classes")
    return float(np.mean(vals))
