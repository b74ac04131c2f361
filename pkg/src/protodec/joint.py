"""Fusing transport scores with calibrated class scores, plus evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class JointConfig:
    """Blend weight for the calibrated-score component.

    ``inverse_shots`` sets the weight to 1/K at fuse time; ``fixed`` uses
    ``beta`` as given.
    """

    beta: float = 1.0
    beta_rule: Literal["fixed", "inverse_shots"] = "inverse_shots"

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ConfigError("beta must be finite and nonnegative")
        if self.beta_rule not in ("fixed", "inverse_shots"):
            raise ConfigError(f"unknown beta rule {self.beta_rule!r}")

    def resolve_beta(self, shots: int) -> float:
        if self.beta_rule == "inverse_shots":
            if shots < 1:
                raise ConfigError("inverse_shots rule requires shots >= 1")
            return 1.0 / shots
        return self.beta


@dataclass(frozen=True)
class Prediction:
    """Fused score vector with its components kept for audit."""

    fused: np.ndarray
    predicted_class: int  # 1-based
    ot_scores: np.ndarray
    calibrated_scores: np.ndarray
    beta: float


def fuse(ot_scores: np.ndarray, cal_scores: np.ndarray, cfg: JointConfig,
         shots: int = 1) -> Prediction:
    """Blend the two score vectors and pick the argmax class.

    Ties break toward the lowest class index.  A zero blend weight returns
    the transport scores bit-for-bit.
    """
    ot_scores = np.asarray(ot_scores, dtype=np.float64)
    cal_scores = np.asarray(cal_scores, dtype=np.float64)
    if ot_scores.shape != cal_scores.shape or ot_scores.ndim != 1:
        raise ValueError(
            f"score vectors must be equal-length 1-D: {ot_scores.shape} vs {cal_scores.shape}")
    beta = cfg.resolve_beta(shots)
    if beta == 0.0:
        fused = ot_scores.copy()
    else:
        fused = ot_scores + beta * cal_scores
    predicted = int(np.argmax(fused)) + 1
    return Prediction(fused, predicted, ot_scores, cal_scores, beta)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    total: int
    correct: int
    confusion: np.ndarray        # N x N, rows gold, columns predicted
    per_class_total: np.ndarray
    per_class_correct: np.ndarray


def evaluate(predicted: Sequence[int], gold: Sequence[int],
             num_classes: int) -> EvalResult:
    """Accuracy and confusion counts over 1-based class labels."""
    predicted = np.asarray(predicted, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if predicted.shape != gold.shape or predicted.ndim != 1 or len(gold) == 0:
        raise ValueError("need equal-length nonempty label sequences")
    for name, arr in (("predicted", predicted), ("gold", gold)):
        if arr.min() < 1 or arr.max() > num_classes:
            raise ValueError(f"{name} labels must lie in 1..{num_classes}")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (gold - 1, predicted - 1), 1)
    correct = int(np.trace(confusion))
    per_class_total = confusion.sum(axis=1)
    per_class_correct = np.diag(confusion).copy()
    return EvalResult(
        accuracy=correct / len(gold),
        total=len(gold),
        correct=correct,
        confusion=confusion,
        per_class_total=per_class_total,
        per_class_correct=per_class_correct,
    )


def seed_summary(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation across seeded runs."""
    if len(values) == 0:
        raise ValueError("need at least one value")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
