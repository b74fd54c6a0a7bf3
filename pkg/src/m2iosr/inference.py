"""Thresholded open-set prediction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError
from .model import OpenSetModel

UNKNOWN = -1
DEFAULT_TAU = 0.95


@dataclass(frozen=True)
class OpenSetPrediction:
    label: int
    confidence: float

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")


def decide(probs: np.ndarray, tau: float = DEFAULT_TAU) -> tuple[np.ndarray, np.ndarray]:
    """Labels and confidences from softmax rows.

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    """
    _check_tau(tau)
    probs = np.asarray(probs, dtype=np.float64)
    confidence = probs.max(axis=1)
    labels = probs.argmax(axis=1).astype(np.int64)
    labels[confidence < tau] = UNKNOWN
    return labels, confidence


@torch.no_grad()
def predict_proba(model: OpenSetModel, images: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        chunks = [
            torch.softmax(model.logits(images[i : i + batch_size]), dim=1)
            for i in range(0, images.shape[0], batch_size)
        ]
    finally:
        model.train(was_training)
    if not chunks:
        return np.zeros((0, model.config.num_known))
    return torch.cat(chunks).double().numpy()


def predict_arrays(
    model: OpenSetModel, images: torch.Tensor, tau: float = DEFAULT_TAU, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    _check_tau(tau)
    return decide(predict_proba(model, images, batch_size), tau)


def predict(
    model: OpenSetModel, images: torch.Tensor, tau: float = DEFAULT_TAU, batch_size: int = 256
) -> list[OpenSetPrediction]:
    labels, conf = predict_arrays(model, images, tau, batch_size)
    return [OpenSetPrediction(int(l), float(c)) for l, c in zip(labels, conf)]


def write_predictions_csv(predictions: Sequence[OpenSetPrediction], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "predicted_label", "confidence"])
        for i, p in enumerate(predictions):
            label = "unknown" if p.is_unknown else str(p.label)
            writer.writerow([i, label, f"{p.confidence:.9g}"])
