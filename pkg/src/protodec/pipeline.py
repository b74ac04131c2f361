"""End-to-end runs over feature packs: train heads, score and evaluate."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from .decoder import (DecoderParams, TrainConfig, TrainingSet, class_scores_ot,
                      train)
from .errors import ConfigError, DataError
from .joint import EvalResult, JointConfig, evaluate, fuse
from .store import FeaturePack
from .verbalizer import VerbalizerSpec, calibrated_class_scores

Ablation = Literal["none", "no-cal", "no-ot"]


def training_set_from_pack(pack: FeaturePack) -> TrainingSet:
    if pack.split != "train":
        raise DataError(f"pack split is {pack.split!r}, expected a train pack")
    return TrainingSet(
        features=np.asarray(pack.features, dtype=np.float64),
        labels=pack.labels,
        num_classes=pack.num_classes,
        shots=pack.shots,
    )


def train_from_pack(pack: FeaturePack, cfg: TrainConfig,
                    seed: int | None = None) -> tuple[DecoderParams, list[float]]:
    """Train a head on a pack, optionally overriding the config seed."""
    if cfg.num_prompts != pack.num_prompts:
        cfg = replace(cfg, num_prompts=pack.num_prompts)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return train(training_set_from_pack(pack), cfg)


def ot_score_matrix(pack: FeaturePack, params: DecoderParams,
                    cfg: TrainConfig) -> np.ndarray:
    """Per-sample transport scores against every class: (n, N)."""
    if params.d_in != pack.feature_dim:
        raise DataError(
            f"checkpoint expects d_in={params.d_in}, pack has {pack.feature_dim}")
    out = np.zeros((pack.num_samples, params.num_classes))
    for i in range(pack.num_samples):
        hidden = np.asarray(pack.features[i], dtype=np.float64)
        out[i] = class_scores_ot(params, hidden, cfg)
    return out


def calibrated_score_matrix(pack: FeaturePack, spec: VerbalizerSpec) -> np.ndarray:
    """Per-sample calibrated class scores averaged over prompts: (n, N)."""
    if spec.axis_length() != pack.scores.shape[2]:
        raise DataError(
            f"verbalizer axis has {spec.axis_length()} words, pack recorded "
            f"{pack.scores.shape[2]} score columns")
    if spec.num_classes != pack.num_classes:
        raise DataError("verbalizer and pack disagree on class count")
    out = np.zeros((pack.num_samples, pack.num_classes))
    calibration = np.asarray(pack.calibration, dtype=np.float64)
    for i in range(pack.num_samples):
        raw = np.asarray(pack.scores[i], dtype=np.float64)
        out[i] = calibrated_class_scores(raw, calibration, spec)
    return out


@dataclass
class EvalRun:
    """One evaluation pass: fused scores plus both components, per sample."""

    fused: np.ndarray             # (n, N)
    predictions: np.ndarray       # (n,) 1-based
    ot_scores: np.ndarray         # (n, N), after any ablation zeroing
    calibrated: np.ndarray        # (n, N)
    beta: float
    result: EvalResult
    ot_only: EvalResult
    cal_only: EvalResult


def evaluate_pack(pack: FeaturePack, params: DecoderParams, cfg: TrainConfig,
                  spec: VerbalizerSpec | None, joint_cfg: JointConfig,
                  shots: int, ablation: Ablation = "none") -> EvalRun:
    """Score a pack with a trained head and fuse with calibrated scores.

    ``no-cal`` drops the calibrated component (blend weight forced to zero);
    ``no-ot`` zeroes the transport scores so only the calibrated component
    votes.  Both components are still reported separately for audit.
    """
    if ablation not in ("none", "no-cal", "no-ot"):
        raise ConfigError(f"unknown ablation {ablation!r}")
    ot = ot_score_matrix(pack, params, cfg)
    if spec is None:
        if ablation != "no-cal":
            raise ConfigError("evaluation without a verbalizer spec supports "
                              "only the no-cal ablation")
        cal = np.zeros_like(ot)
    else:
        cal = calibrated_score_matrix(pack, spec)

    ot_used = np.zeros_like(ot) if ablation == "no-ot" else ot
    fuse_cfg = JointConfig(beta=0.0, beta_rule="fixed") if ablation == "no-cal" else joint_cfg

    n = pack.num_samples
    fused = np.zeros_like(ot)
    predictions = np.zeros(n, dtype=np.int64)
    beta = fuse_cfg.resolve_beta(shots)
    for i in range(n):
        pred = fuse(ot_used[i], cal[i], fuse_cfg, shots)
        fused[i] = pred.fused
        predictions[i] = pred.predicted_class

    gold = pack.labels
    result = evaluate(predictions, gold, pack.num_classes)
    ot_only = evaluate(np.argmax(ot, axis=1) + 1, gold, pack.num_classes)
    cal_only = evaluate(np.argmax(cal, axis=1) + 1, gold, pack.num_classes)
    return EvalRun(fused=fused, predictions=predictions, ot_scores=ot_used,
                   calibrated=cal, beta=beta, result=result,
                   ot_only=ot_only, cal_only=cal_only)


def subset_pack_prompts(pack: FeaturePack, prompt_indices: Sequence[int]) -> FeaturePack:
    """Restrict a pack to a subset of its prompts (for prompt-set studies)."""
    idx = list(prompt_indices)
    if not idx:
        raise ConfigError("prompt subset must be nonempty")
    if any(j < 0 or j >= pack.num_prompts for j in idx):
        raise ConfigError(
            f"prompt indices must lie in 0..{pack.num_prompts - 1}")
    return FeaturePack(
        dataset=pack.dataset,
        split=pack.split,
        num_classes=pack.num_classes,
        shots=pack.shots,
        num_prompts=len(idx),
        feature_dim=pack.feature_dim,
        prompt_templates=[pack.prompt_templates[j] for j in idx],
        encoder_id=pack.encoder_id,
        seed=pack.seed,
        sample_ids=list(pack.sample_ids),
        labels=pack.labels.copy(),
        features=np.asarray(pack.features)[:, idx, :].copy(),
        scores=np.asarray(pack.scores)[:, idx, :].copy(),
        calibration=np.asarray(pack.calibration)[idx, :].copy(),
        score_axis=list(pack.score_axis),
        record_texts=[[texts[j] for j in idx] for texts in pack.record_texts],
    )
