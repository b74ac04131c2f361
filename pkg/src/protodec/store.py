"""On-disk containers for everything crossing the black-box boundary.

A feature pack is a directory: one JSON manifest plus one raw float32 blob
per tensor kind (per-prompt hidden states, per-prompt token scores, and the
per-prompt empty-input calibration profile).  Packs are immutable once
written; writers stage into a temporary sibling and rename.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import tensorio
from .errors import ConfigError, DataError

PACK_VERSION = 1

_MANIFEST = "manifest.json"


@dataclass
class DatasetManifest:
    """Task description: classes, prompt templates, verbalizer seeds, shots."""

    dataset: str
    class_names: list[str]
    templates: list[str]
    seed_words: list[list[str]]
    shots: int
    eval_split: str = "validation"

    def __post_init__(self):
        if len(self.seed_words) != len(self.class_names):
            raise ConfigError("need one verbalizer seed entry per class")
        if not self.templates:
            raise ConfigError("need at least one prompt template")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_prompts(self) -> int:
        return len(self.templates)

    def save(self, path: str | Path) -> None:
        doc = {
            "dataset": self.dataset,
            "class_names": self.class_names,
            "templates": self.templates,
            "seed_words": self.seed_words,
            "shots": self.shots,
            "eval_split": self.eval_split,
        }
        Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"unreadable dataset manifest: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("dataset manifest must be a mapping")
        try:
            return cls(
                dataset=doc["dataset"],
                class_names=list(doc["class_names"]),
                templates=list(doc["templates"]),
                seed_words=[list(s) if isinstance(s, list) else [s]
                            for s in doc["seed_words"]],
                shots=int(doc["shots"]),
                eval_split=doc.get("eval_split", "validation"),
            )
        except KeyError as exc:
            raise ConfigError(f"dataset manifest missing field {exc}") from exc


@dataclass
class FeaturePack:
    """Exported encoder outputs for one dataset split."""

    dataset: str
    split: str                 # "train" packs must be class-balanced
    num_classes: int
    shots: int
    num_prompts: int
    feature_dim: int
    prompt_templates: list[str]
    encoder_id: str
    seed: int
    sample_ids: list[str]
    labels: np.ndarray         # (n,) 1-based
    features: np.ndarray       # (n, P, d_in)
    scores: np.ndarray         # (n, P, L)
    calibration: np.ndarray    # (P, L)
    score_axis: list[str] = field(default_factory=list)
    record_texts: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features)
        self.scores = np.asarray(self.scores)
        self.calibration = np.asarray(self.calibration)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    def check_shapes(self) -> None:
        n, p, d = self.num_samples, self.num_prompts, self.feature_dim
        if len(self.prompt_templates) != p:
            raise DataError(f"manifest lists {len(self.prompt_templates)} templates, "
                            f"num_prompts is {p}")
        if self.features.shape != (n, p, d):
            raise DataError(f"features shaped {self.features.shape}, "
                            f"expected {(n, p, d)}")
        if self.scores.ndim != 3 or self.scores.shape[:2] != (n, p):
            raise DataError(f"scores shaped {self.scores.shape}, expected ({n}, {p}, L)")
        if self.calibration.shape != (p, self.scores.shape[2]):
            raise DataError(f"calibration shaped {self.calibration.shape}, "
                            f"expected ({p}, {self.scores.shape[2]})")
        if self.labels.shape != (n,):
            raise DataError("labels must align with sample ids")
        if self.score_axis and len(self.score_axis) != self.scores.shape[2]:
            raise DataError("score axis labels disagree with score width")
        if self.record_texts and (
                len(self.record_texts) != n
                or any(len(t) != p for t in self.record_texts)):
            raise DataError("record texts must be one list of P strings per sample")


def write_pack(pack: FeaturePack, path: str | Path, overwrite: bool = False) -> None:
    """Write a pack directory atomically (stage + rename)."""
    pack.check_shapes()
    path = Path(path)
    if path.exists() and not overwrite:
        raise DataError(f"pack path {path} already exists")
    path.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=path.name + ".tmp-", dir=path.parent))
    try:
        tensors = {
            "features": tensorio.write_tensor(stage / "features.bin", pack.features),
            "scores": tensorio.write_tensor(stage / "scores.bin", pack.scores),
            "calibration": tensorio.write_tensor(stage / "calibration.bin",
                                                 pack.calibration),
        }
        manifest = {
            "format_version": PACK_VERSION,
            "dataset": pack.dataset,
            "split": pack.split,
            "num_classes": pack.num_classes,
            "shots": pack.shots,
            "num_prompts": pack.num_prompts,
            "feature_dim": pack.feature_dim,
            "prompt_templates": pack.prompt_templates,
            "encoder_id": pack.encoder_id,
            "seed": pack.seed,
            "sample_ids": pack.sample_ids,
            "labels": pack.labels.tolist(),
            "score_axis": pack.score_axis,
            "record_texts": pack.record_texts,
            "tensors": tensors,
        }
        (stage / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if path.exists():
            shutil.rmtree(path)
        os.replace(stage, path)
    except Exception:
        shutil.rmtree(stage, ignore_errors=True)
        raise


def read_pack(path: str | Path) -> FeaturePack:
    """Read and verify a pack; any integrity violation raises DataError."""
    path = Path(path)
    manifest_file = path / _MANIFEST
    if not manifest_file.exists():
        raise DataError(f"no pack manifest at {manifest_file}")
    try:
        manifest = json.loads(manifest_file.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt pack manifest: {exc}") from exc
    if manifest.get("format_version") != PACK_VERSION:
        raise DataError(f"unsupported pack version {manifest.get('format_version')!r}")
    try:
        tensors = manifest["tensors"]
        pack = FeaturePack(
            dataset=manifest["dataset"],
            split=manifest["split"],
            num_classes=int(manifest["num_classes"]),
            shots=int(manifest["shots"]),
            num_prompts=int(manifest["num_prompts"]),
            feature_dim=int(manifest["feature_dim"]),
            prompt_templates=list(manifest["prompt_templates"]),
            encoder_id=manifest["encoder_id"],
            seed=int(manifest["seed"]),
            sample_ids=list(manifest["sample_ids"]),
            labels=np.asarray(manifest["labels"], dtype=np.int64),
            features=tensorio.read_tensor(path, tensors["features"]),
            scores=tensorio.read_tensor(path, tensors["scores"]),
            calibration=tensorio.read_tensor(path, tensors["calibration"]),
            score_axis=list(manifest.get("score_axis", [])),
            record_texts=[list(t) for t in manifest.get("record_texts", [])],
        )
    except KeyError as exc:
        raise DataError(f"pack manifest missing field {exc}") from exc
    pack.check_shapes()
    return pack


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)
    per_class_counts: dict[int, int] = field(default_factory=dict)
    nan_locations: list[str] = field(default_factory=list)
    zero_norm_rows: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def lines(self) -> list[str]:
        out = [f"per-class counts: {self.per_class_counts}"]
        if self.ok:
            out.append("no issues found")
        else:
            out.extend(f"ISSUE: {msg}" for msg in self.issues)
        return out


def validate_pack(pack: FeaturePack) -> ValidationReport:
    """Report-only integrity check of a readable pack."""
    report = ValidationReport()
    try:
        pack.check_shapes()
    except DataError as exc:
        report.issues.append(str(exc))
        return report

    n = pack.num_samples
    labels = pack.labels
    if n and (labels.min() < 1 or labels.max() > pack.num_classes):
        report.issues.append("labels outside 1..num_classes")
    counts = np.bincount(labels, minlength=pack.num_classes + 1)[1:]
    report.per_class_counts = {k + 1: int(c) for k, c in enumerate(counts)}
    if pack.split == "train":
        if n != pack.num_classes * pack.shots:
            report.issues.append(
                f"train pack has {n} records, expected "
                f"num_classes*shots = {pack.num_classes * pack.shots}")
        bad = [str(k + 1) for k, c in enumerate(counts) if c != pack.shots]
        if bad:
            report.issues.append(
                f"class count violation: classes {', '.join(bad)} do not have "
                f"exactly {pack.shots} samples")

    for name, arr in (("features", pack.features), ("scores", pack.scores),
                      ("calibration", pack.calibration)):
        bad_mask = ~np.isfinite(np.asarray(arr, dtype=np.float64))
        if bad_mask.any():
            locs = [str(tuple(int(i) for i in idx))
                    for idx in zip(*np.nonzero(bad_mask))][:10]
            report.nan_locations.extend(f"{name}{loc}" for loc in locs)
            report.issues.append(f"non-finite entries in {name}: {locs}")

    norms = np.linalg.norm(np.asarray(pack.features, dtype=np.float64), axis=2)
    zero = np.nonzero(norms == 0.0)
    for i, j in zip(*zero):
        report.zero_norm_rows.append(f"sample {pack.sample_ids[int(i)]} prompt {int(j)}")
    if report.zero_norm_rows:
        report.issues.append(f"zero-norm feature rows: {report.zero_norm_rows[:10]}")

    if np.any(np.asarray(pack.scores) < 0):
        report.issues.append("negative raw scores")
    if np.any(np.asarray(pack.calibration) <= 0):
        report.issues.append("calibration entries must be strictly positive")
    return report
