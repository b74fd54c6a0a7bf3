"""Open-set metrics: openness, macro-F1 over known classes plus unknown, sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ConfigError
from .inference import UNKNOWN, OpenSetPrediction, predict_arrays
from .model import OpenSetModel


def openness(c_train: int, c_test_total: int) -> float:
    """``1 - sqrt(2 C_train / (C_train + C_test))``."""
    if c_train < 1 or c_test_total < c_train:
        raise ConfigError(
            f"openness needs c_test_total >= c_train >= 1, got ({c_train}, {c_test_total})"
        )
    return 1.0 - math.sqrt(2.0 * c_train / (c_train + c_test_total))


def class_name(index: int, num_known: int) -> str:
    return "unknown" if index == num_known else str(index)


@dataclass
class EvalReport:
    per_class_f1: dict[str, float]
    macro_f1: float
    confusion: list[list[int]]
    openness: Optional[float]
    n_samples: int
    n_known: int = 0
    n_unknown: int = 0
    closed_set_accuracy: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _as_labels(values) -> np.ndarray:
    if len(values) and isinstance(values[0], OpenSetPrediction):
        values = [p.label for p in values]
    return np.asarray(values, dtype=np.int64).reshape(-1)


def confusion_matrix(truth: np.ndarray, preds: np.ndarray, num_known: int) -> np.ndarray:
    """Rows are truth, columns prediction; UNKNOWN maps to index ``num_known``."""
    size = num_known + 1
    t = np.where(truth == UNKNOWN, num_known, truth)
    p = np.where(preds == UNKNOWN, num_known, preds)
    return np.bincount(t * size + p, minlength=size * size).reshape(size, size)


def f1_from_confusion(cm: np.ndarray) -> dict[int, float]:
    """Per-class F1 for classes present in truth or prediction."""
    tp = np.diag(cm).astype(np.float64)
    truth_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    scores = {}
    for k in range(cm.shape[0]):
        if truth_count[k] == 0 and pred_count[k] == 0:
            continue
        # 2PR/(P+R) == 2TP/(|truth| + |pred|), and is 0 when TP is 0
        scores[k] = 2.0 * tp[k] / (truth_count[k] + pred_count[k])
    return scores


def macro_f1(
    predictions,
    ground_truth,
    num_known: int,
    *,
    openness_value: Optional[float] = None,
) -> EvalReport:
    preds = _as_labels(predictions)
    truth = _as_labels(ground_truth)
    if preds.shape != truth.shape:
        raise ConfigError(f"{preds.size} predictions for {truth.size} ground-truth labels")
    for name, arr in (("ground truth", truth), ("prediction", preds)):
        bad = (arr != UNKNOWN) & ((arr < 0) | (arr >= num_known))
        if bad.any():
            raise ConfigError(f"{name} label {int(arr[bad][0])} outside 0..{num_known - 1} or UNKNOWN")
    cm = confusion_matrix(truth, preds, num_known)
    scores = f1_from_confusion(cm)
    per_class = {class_name(k, num_known): v for k, v in scores.items()}
    known = truth != UNKNOWN
    closed = float((preds[known] == truth[known]).mean()) if known.any() else None
    return EvalReport(
        per_class_f1=per_class,
        macro_f1=float(np.mean(list(scores.values()))) if scores else 0.0,
        confusion=cm.tolist(),
        openness=openness_value,
        n_samples=int(truth.size),
        n_known=int(known.sum()),
        n_unknown=int((~known).sum()),
        closed_set_accuracy=closed,
    )


@dataclass
class UnknownPool:
    class_ids: tuple
    images: torch.Tensor


@dataclass
class SweepPoint:
    n_unknown_classes: int
    openness: float
    macro_f1: float
    n_known: int
    n_unknown: int


def sweep_from_predictions(
    known_preds: np.ndarray,
    known_truth: np.ndarray,
    unknown_preds: Sequence[np.ndarray],
    unknown_class_counts: Sequence[int],
    num_known: int,
) -> list[SweepPoint]:
    curve = []
    for preds_u, n_classes in zip(unknown_preds, unknown_class_counts):
        preds = np.concatenate([known_preds, preds_u])
        truth = np.concatenate([known_truth, np.full(len(preds_u), UNKNOWN)])
        o = openness(num_known, num_known + n_classes)
        report = macro_f1(preds, truth, num_known, openness_value=o)
        curve.append(SweepPoint(n_classes, o, report.macro_f1, report.n_known, report.n_unknown))
    return curve


def sweep_openness(
    model: OpenSetModel,
    known_images: torch.Tensor,
    known_labels: torch.Tensor,
    unknown_pools: Sequence[UnknownPool],
    tau: float,
    *,
    known_class_ids: Sequence = (),
) -> list[SweepPoint]:
    """macro-F1 on the known test set joined with each unknown pool in turn."""
    known_ids = set(known_class_ids)
    for pool in unknown_pools:
        overlap = known_ids.intersection(pool.class_ids)
        if overlap:
            raise ConfigError(f"unknown pool shares class ids with known set: {sorted(overlap)}")
    if not unknown_pools:
        return []
    known_preds, _ = predict_arrays(model, known_images, tau)
    truth = known_labels.numpy().astype(np.int64)
    unknown_preds = [predict_arrays(model, pool.images, tau)[0] for pool in unknown_pools]
    counts = [len(pool.class_ids) for pool in unknown_pools]
    return sweep_from_predictions(known_preds, truth, unknown_preds, counts, model.config.num_known)


def write_curve_csv(curve: Sequence[SweepPoint], path, **constant_columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(constant_columns) + ["n_unknown_classes", "openness", "macro_f1", "n_known", "n_unknown"]
        writer.writerow(names)
        for p in curve:
            writer.writerow(
                list(constant_columns.values())
                + [p.n_unknown_classes, f"{p.openness:.6f}", f"{p.macro_f1:.6f}", p.n_known, p.n_unknown]
            )
