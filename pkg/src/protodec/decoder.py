"""Trainable decoding head: linear projection plus per-class prototype banks.

A sample arrives as a ``P x d_in`` matrix of hidden states, one row per
prompt.  The head projects rows to ``d_out``, matches them against each
class's ``Q`` prototypes through a transport plan, and scores the class by
the plan-weighted cosine similarity.  Training minimizes cross-entropy over
the softmax of those scores; gradients treat each solved plan as a constant
(the plan is re-solved from the updated parameters on the next pass, never
differentiated through).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np

from . import tensorio
from .errors import DataError, NumericError
from .numerics import AdamState, adam_step, make_rng, softmax, unit_rows
from .ot import PlanKind, SinkhornConfig, TransportPlan, plan_variant

CHECKPOINT_VERSION = 1

Batch = Sequence[tuple[np.ndarray, int]]  # (P x d_in hidden states, label in 1..N)


@dataclass(frozen=True)
class TrainConfig:
    """Head dimensions, transport settings, and optimizer settings."""

    epochs: int = 30
    d_out: int = 128
    num_prototypes: int = 3  # Q, prototypes per class
    num_prompts: int = 3     # P, prompts per sample
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    plan: PlanKind = "sinkhorn"
    lr: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    batch_mode: Literal["full", "per_sample"] = "full"
    cache_plans: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        for name in ("d_out", "num_prototypes", "num_prompts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sinkhorn"] = asdict(self.sinkhorn)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "sinkhorn" in d and isinstance(d["sinkhorn"], dict):
            d["sinkhorn"] = SinkhornConfig(**d["sinkhorn"])
        return cls(**d)


@dataclass
class DecoderParams:
    """The only trainable state: projector W and prototype bank R."""

    projector: np.ndarray   # d_out x d_in
    prototypes: np.ndarray  # N x Q x d_out

    def __post_init__(self):
        self.projector = np.asarray(self.projector, dtype=np.float64)
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.projector.ndim != 2 or self.prototypes.ndim != 3:
            raise ValueError("projector must be 2-D and prototypes 3-D")
        if self.prototypes.shape[2] != self.projector.shape[0]:
            raise ValueError("prototype width must equal projector output dim")

    @property
    def d_in(self) -> int:
        return self.projector.shape[1]

    @property
    def d_out(self) -> int:
        return self.projector.shape[0]

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.shape[1]

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.projector.copy(), self.prototypes.copy())


@dataclass(frozen=True)
class DecoderGrads:
    projector: np.ndarray
    prototypes: np.ndarray


@dataclass
class TrainingSet:
    """Per-sample multi-prompt features with 1-based labels.

    Training packs are balanced by construction: every class contributes
    exactly ``shots`` samples.
    """

    features: np.ndarray  # n x P x d_in
    labels: np.ndarray    # n, values in 1..num_classes
    num_classes: int
    shots: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3:
            raise ValueError("features must be n x P x d_in")
        if len(self.labels) != self.features.shape[0]:
            raise ValueError("labels and features disagree on sample count")
        if self.labels.min(initial=1) < 1 or self.labels.max(initial=1) > self.num_classes:
            raise DataError("labels must lie in 1..num_classes")
        counts = np.bincount(self.labels, minlength=self.num_classes + 1)[1:]
        if not np.all(counts == self.shots):
            raise DataError(
                f"expected exactly {self.shots} samples per class, got {counts.tolist()}")

    def batch(self) -> list[tuple[np.ndarray, int]]:
        return [(self.features[i], int(self.labels[i])) for i in range(len(self.labels))]


def init_params(rng: np.random.Generator, d_in: int, num_classes: int,
                cfg: TrainConfig) -> DecoderParams:
    """Seeded initialization: scaled-uniform projector, Gaussian prototypes."""
    bound = 1.0 / np.sqrt(d_in)
    projector = rng.uniform(-bound, bound, size=(cfg.d_out, d_in))
    prototypes = rng.normal(0.0, 0.02, size=(num_classes, cfg.num_prototypes, cfg.d_out))
    # zero-norm prototype rows would make cosine scoring undefined
    norms = np.linalg.norm(prototypes, axis=2)
    while np.any(norms == 0.0):  # pragma: no cover - probability zero draw
        mask = norms == 0.0
        prototypes[mask] = rng.normal(0.0, 0.02, size=(int(mask.sum()), cfg.d_out))
        norms = np.linalg.norm(prototypes, axis=2)
    return DecoderParams(projector, prototypes)


def param_count(cfg: TrainConfig, d_in: int, num_classes: int) -> int:
    """Total trainable scalars: projector plus all prototype banks."""
    if d_in < 1 or num_classes < 1:
        raise ValueError("d_in and num_classes must be at least 1")
    return cfg.d_out * d_in + num_classes * cfg.num_prototypes * cfg.d_out


def project(params: DecoderParams, hidden: np.ndarray) -> np.ndarray:
    """Project per-prompt hidden states: each row is mapped through W."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[1] != params.d_in:
        raise ValueError(
            f"hidden states must be P x {params.d_in}, got {hidden.shape}")
    return hidden @ params.projector.T


def solve_plans(params: DecoderParams, hidden: np.ndarray,
                cfg: TrainConfig) -> list[TransportPlan]:
    """Solve one transport plan per class for a single sample."""
    v = project(params, hidden)
    v_hat = unit_rows(v)
    plans = []
    for k in range(params.num_classes):
        r_hat = unit_rows(params.prototypes[k])
        sim = np.clip(v_hat @ r_hat.T, -1.0, 1.0)
        plans.append(plan_variant(cfg.plan, 1.0 - sim, sim, cfg.sinkhorn))
    return plans


def class_scores_ot(params: DecoderParams, hidden: np.ndarray, cfg: TrainConfig,
                    plans: Sequence[TransportPlan] | None = None) -> np.ndarray:
    """Transport score of the sample against every class, in class order.

    When ``plans`` is given those plans are used as-is (the frozen-plan view
    used by training); otherwise fresh plans are solved from the current
    parameters.
    """
    v = project(params, hidden)
    v_hat = unit_rows(v)
    if plans is None:
        plans = solve_plans(params, hidden, cfg)
    scores = np.zeros(params.num_classes)
    for k in range(params.num_classes):
        r_hat = unit_rows(params.prototypes[k])
        sim = np.clip(v_hat @ r_hat.T, -1.0, 1.0)
        scores[k] = float((plans[k].matrix * sim).sum())
    return scores


def cross_entropy_from_scores(scores: np.ndarray, label: int) -> float:
    """Negative log softmax probability of the 1-based label."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= label <= scores.shape[0]:
        raise ValueError(f"label {label} outside 1..{scores.shape[0]}")
    z_max = scores.max()
    return float(np.log(np.exp(scores - z_max).sum()) + z_max - scores[label - 1])


def loss(params: DecoderParams, batch: Batch, cfg: TrainConfig,
         plans: Sequence[Sequence[TransportPlan]] | None = None) -> float:
    """Mean cross-entropy of softmaxed class scores over the batch."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    total = 0.0
    for i, (hidden, label) in enumerate(batch):
        sample_plans = plans[i] if plans is not None else None
        z = class_scores_ot(params, hidden, cfg, sample_plans)
        total += cross_entropy_from_scores(z, label)
    value = total / len(batch)
    if not np.isfinite(value):
        raise NumericError("loss is non-finite")
    return float(value)


def gradients(params: DecoderParams, batch: Batch, cfg: TrainConfig,
              plans: Sequence[Sequence[TransportPlan]] | None = None
              ) -> tuple[DecoderGrads, list[list[TransportPlan]]]:
    """Analytic gradients of the batch loss w.r.t. projector and prototypes.

    Plans are held fixed at their solved values; the chain rule runs through
    the cosine similarities and the linear projection only.  Returns the
    gradients together with the plans they were evaluated at.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    g_w = np.zeros_like(params.projector)
    g_r = np.zeros_like(params.prototypes)
    n = len(batch)
    solved: list[list[TransportPlan]] = []
    for i, (hidden, label) in enumerate(batch):
        hidden = np.asarray(hidden, dtype=np.float64)
        sample_plans = list(plans[i]) if plans is not None else solve_plans(params, hidden, cfg)
        solved.append(sample_plans)

        v = project(params, hidden)
        v_norm = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(v_norm == 0.0):
            raise NumericError("projected feature collapsed to zero norm")
        v_hat = v / v_norm

        z = np.zeros(params.num_classes)
        sims = []
        r_hats = []
        r_norms = []
        for k in range(params.num_classes):
            r_k = params.prototypes[k]
            r_norm = np.linalg.norm(r_k, axis=1, keepdims=True)
            if np.any(r_norm == 0.0):
                raise NumericError(f"class {k + 1} has a zero-norm prototype")
            r_hat = r_k / r_norm
            sim = v_hat @ r_hat.T
            sims.append(sim)
            r_hats.append(r_hat)
            r_norms.append(r_norm)
            z[k] = float((sample_plans[k].matrix * sim).sum())

        g_z = softmax(z)
        g_z[label - 1] -= 1.0
        g_z /= n

        d_v = np.zeros_like(v)
        for k in range(params.num_classes):
            t = sample_plans[k].matrix
            sim = sims[k]
            # d sim(a,b)/da = (b_hat - sim * a_hat)/|a|, summed under the plan
            row_weight = (t * sim).sum(axis=1, keepdims=True)
            d_v += g_z[k] * ((t @ r_hats[k]) - row_weight * v_hat) / v_norm
            col_weight = (t * sim).sum(axis=0)[:, None]
            g_r[k] += g_z[k] * ((t.T @ v_hat) - col_weight * r_hats[k]) / r_norms[k]
        g_w += d_v.T @ hidden

    if not (np.isfinite(g_w).all() and np.isfinite(g_r).all()):
        raise NumericError("non-finite gradient")
    return DecoderGrads(g_w, g_r), solved


def _epoch_steps(batch: list, cfg: TrainConfig,
                 rng: np.random.Generator) -> Iterator[list]:
    if cfg.batch_mode == "full":
        yield batch
    else:
        order = rng.permutation(len(batch))
        for i in order:
            yield [batch[int(i)]]


def train(training_set: TrainingSet, cfg: TrainConfig
          ) -> tuple[DecoderParams, list[float]]:
    """Run the training loop; returns final parameters and per-epoch loss.

    Deterministic for a fixed seed.  Raises NumericError with a diagnostic if
    the loss diverges.  Zero epochs returns the freshly initialized
    parameters untouched.
    """
    if training_set.features.shape[1] != cfg.num_prompts:
        raise DataError(
            f"training set has {training_set.features.shape[1]} prompt rows "
            f"per sample, config expects {cfg.num_prompts}")
    rng = make_rng(cfg.seed)
    params = init_params(rng, training_set.features.shape[2],
                         training_set.num_classes, cfg)
    adam_w = AdamState.init(params.projector, lr=cfg.lr, beta1=cfg.adam_beta1,
                            beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    adam_r = AdamState.init(params.prototypes, lr=cfg.lr, beta1=cfg.adam_beta1,
                            beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    batch = training_set.batch()
    trace: list[float] = []
    cached_plans: list[list[TransportPlan]] | None = None

    for epoch in range(cfg.epochs):
        epoch_losses = []
        for step_batch in _epoch_steps(batch, cfg, rng):
            if cfg.cache_plans and cached_plans is not None and cfg.batch_mode == "full":
                plans = cached_plans
            else:
                plans = None
            grads, solved = gradients(params, step_batch, cfg, plans)
            try:
                step_loss = loss(params, step_batch, cfg, solved)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            epoch_losses.append(step_loss)
            if cfg.cache_plans and cfg.batch_mode == "full" and cached_plans is None:
                cached_plans = solved
            new_w, adam_w = adam_step(params.projector, grads.projector, adam_w)
            new_r, adam_r = adam_step(params.prototypes, grads.prototypes, adam_r)
            params = DecoderParams(new_w, new_r)
        trace.append(float(np.mean(epoch_losses)))
    return params, trace


def predict(params: DecoderParams, hidden: np.ndarray, cfg: TrainConfig) -> int:
    """1-based class index with the highest transport score."""
    return int(np.argmax(class_scores_ot(params, hidden, cfg))) + 1


def save_checkpoint(path: str | Path, params: DecoderParams, cfg: TrainConfig,
                    shots: int, overwrite: bool = False) -> None:
    """Persist a head: manifest plus raw float32 tensors for W and R."""
    path = Path(path)
    if path.exists():
        if not overwrite:
            raise DataError(f"checkpoint path {path} already exists")
        for old in path.glob("*"):
            old.unlink()
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "d_in": params.d_in,
        "d_out": params.d_out,
        "num_classes": params.num_classes,
        "num_prototypes": params.num_prototypes,
        "shots": shots,
        "train_config": cfg.to_dict(),
        "tensors": {
            "projector": tensorio.write_tensor(path / "projector.bin", params.projector),
            "prototypes": tensorio.write_tensor(path / "prototypes.bin", params.prototypes),
        },
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[DecoderParams, TrainConfig, dict]:
    """Load a head checkpoint, rejecting any dimension disagreement."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('format_version')}")
    tensors = manifest["tensors"]
    projector = tensorio.read_tensor(path, tensors["projector"]).astype(np.float64)
    prototypes = tensorio.read_tensor(path, tensors["prototypes"]).astype(np.float64)
    expected_w = (manifest["d_out"], manifest["d_in"])
    expected_r = (manifest["num_classes"], manifest["num_prototypes"], manifest["d_out"])
    if projector.shape != expected_w:
        raise DataError(f"projector shape {projector.shape} != manifest {expected_w}")
    if prototypes.shape != expected_r:
        raise DataError(f"prototype shape {prototypes.shape} != manifest {expected_r}")
    cfg = TrainConfig.from_dict(manifest["train_config"])
    return DecoderParams(projector, prototypes), cfg, manifest
