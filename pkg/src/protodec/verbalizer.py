"""Class scores out of raw token predictions.

Workflow: each class starts from one or more seed label words; the seed is
expanded to its nearest vocabulary neighbors (by cosine over the word
prediction head), with softmax weights over the similarities.  At decode
time the raw token scores of a sample are debiased against the scores the
encoder assigns to an empty input under the same prompt, aggregated per
class with the expansion weights, and finally averaged across prompts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import tensorio
from .errors import ConfigError, DataError
from .numerics import softmax

SPEC_VERSION = 1
TABLE_VERSION = 1


@dataclass
class EmbeddingTable:
    """Rows of a word-prediction head plus the token <-> row mapping."""

    vectors: np.ndarray   # |V| x d
    tokens: list[str]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise DataError("embedding table rows must match token list")
        if self.vectors.shape[0] < 1:
            raise DataError("embedding table must be nonempty")
        # duplicate display strings can occur in real vocabularies; the
        # lowest id wins so lookups stay deterministic
        self._index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            self._index.setdefault(tok, i)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def token_id(self, token: str) -> int:
        if token not in self._index:
            raise ConfigError(f"token {token!r} not in the embedding table")
        return self._index[token]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        entry = tensorio.write_tensor(path / "embeddings.bin", self.vectors)
        manifest = {
            "format_version": TABLE_VERSION,
            "vocab_size": len(self.tokens),
            "dim": int(self.vectors.shape[1]),
            "tokens": self.tokens,
            "tensors": {"embeddings": entry},
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        path = Path(path)
        manifest_file = path / "manifest.json"
        if not manifest_file.exists():
            raise DataError(f"no embedding-table manifest at {manifest_file}")
        manifest = json.loads(manifest_file.read_text())
        if manifest.get("format_version") != TABLE_VERSION:
            raise DataError("unsupported embedding-table version")
        vectors = tensorio.read_tensor(path, manifest["tensors"]["embeddings"])
        tokens = list(manifest["tokens"])
        if len(tokens) != manifest["vocab_size"] or vectors.shape[0] != len(tokens):
            raise DataError("embedding-table manifest is inconsistent")
        return cls(vectors.astype(np.float64), tokens)


@dataclass
class ClassWords:
    """One class's seed words and its expanded, weighted word set."""

    name: str
    seeds: list[str]
    expanded: list[tuple[str, float]]

    def weight_sum(self) -> float:
        return float(sum(w for _, w in self.expanded))


@dataclass
class VerbalizerSpec:
    """Per-class weighted label-word sets driving score aggregation."""

    classes: list[ClassWords]
    expansion_size: int = 10
    expansion_enabled: bool = True

    def __post_init__(self):
        if self.expansion_size < 1:
            raise ConfigError("expansion size must be at least 1")
        for cw in self.classes:
            if not cw.expanded:
                raise ConfigError(f"class {cw.name!r} has an empty word set")
            if abs(cw.weight_sum() - 1.0) > 1e-9:
                raise ConfigError(
                    f"class {cw.name!r} weights sum to {cw.weight_sum()}, expected 1")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_names(self) -> list[str]:
        return [cw.name for cw in self.classes]

    def axis_tokens(self) -> list[str]:
        """Flattened score axis: class 1's words, then class 2's, ..."""
        return [tok for cw in self.classes for tok, _ in cw.expanded]

    def axis_length(self) -> int:
        return sum(len(cw.expanded) for cw in self.classes)

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": SPEC_VERSION,
            "expansion_size": self.expansion_size,
            "expansion_enabled": self.expansion_enabled,
            "classes": [
                {
                    "name": cw.name,
                    "seed_words": cw.seeds,
                    "words": [{"token": t, "weight": float(w)} for t, w in cw.expanded],
                }
                for cw in self.classes
            ],
        }
        Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True))

    @classmethod
    def load(cls, path: str | Path) -> "VerbalizerSpec":
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"unreadable verbalizer spec: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format_version") != SPEC_VERSION:
            raise ConfigError("unsupported verbalizer spec document")
        classes = [
            ClassWords(
                name=c["name"],
                seeds=list(c.get("seed_words", [])),
                expanded=[(w["token"], float(w["weight"])) for w in c["words"]],
            )
            for c in doc["classes"]
        ]
        return cls(classes, int(doc.get("expansion_size", 10)),
                   bool(doc.get("expansion_enabled", True)))


def expand_label_words(table: EmbeddingTable, seed_word: str, k: int,
                       temperature: float = 1.0) -> list[tuple[str, float]]:
    """Nearest-neighbor expansion of a seed word over the embedding rows.

    Returns the top-k tokens by cosine similarity to the seed row (the seed
    itself is always its own nearest neighbor) with softmax weights over the
    k similarities.
    """
    if k < 1:
        raise ConfigError("expansion size must be at least 1")
    if k > len(table):
        raise ConfigError(f"cannot expand to {k} words from a {len(table)}-token table")
    seed_id = table.token_id(seed_word)
    norms = np.linalg.norm(table.vectors, axis=1)
    if norms[seed_id] == 0.0:
        raise ConfigError(f"seed word {seed_word!r} has a zero embedding row")
    usable = norms > 0.0
    if int(usable.sum()) < k:
        raise ConfigError(
            f"only {int(usable.sum())} tokens have nonzero embeddings, "
            f"cannot expand to {k}")
    # zero rows (padding and friends) can never be neighbors
    sims = np.full(len(table), -np.inf)
    seed_vec = table.vectors[seed_id] / norms[seed_id]
    sims[usable] = (table.vectors[usable] / norms[usable, None]) @ seed_vec
    # stable sort on negated sims: ties broken by vocabulary order
    top = np.argsort(-sims, kind="stable")[:k]
    weights = softmax(sims[top], temperature=temperature)
    return [(table.tokens[int(i)], float(w)) for i, w in zip(top, weights)]


def build_spec(table: EmbeddingTable | None, class_names: Sequence[str],
               seed_words: Sequence[Sequence[str] | str], expansion_size: int = 10,
               temperature: float = 1.0, expansion_enabled: bool = True) -> VerbalizerSpec:
    """Assemble a verbalizer spec, expanding seeds when enabled.

    With expansion disabled (or no table given) each class keeps its seed
    words, uniformly weighted.
    """
    if len(class_names) != len(seed_words):
        raise ConfigError("need exactly one seed-word entry per class")
    classes = []
    for name, seeds in zip(class_names, seed_words):
        seeds = [seeds] if isinstance(seeds, str) else list(seeds)
        if not seeds:
            raise ConfigError(f"class {name!r} has no seed words")
        if expansion_enabled:
            if table is None:
                raise ConfigError("expansion requires an embedding table")
            expanded: list[tuple[str, float]] = []
            for seed in seeds:
                expanded.extend(expand_label_words(table, seed, expansion_size, temperature))
            scale = 1.0 / len(seeds)
            expanded = [(t, w * scale) for t, w in expanded]
        else:
            expanded = [(s, 1.0 / len(seeds)) for s in seeds]
        classes.append(ClassWords(name=name, seeds=seeds, expanded=expanded))
    return VerbalizerSpec(classes, expansion_size, expansion_enabled)


def calibrate(raw: np.ndarray, empty: np.ndarray) -> np.ndarray:
    """Debias raw token scores by the encoder's empty-input score profile.

    Each entry is rescaled by mean(empty)/empty, so a context-free input
    calibrates to a constant vector.
    """
    raw = np.asarray(raw, dtype=np.float64)
    empty = np.asarray(empty, dtype=np.float64)
    if raw.shape != empty.shape:
        raise ValueError(f"score shapes differ: {raw.shape} vs {empty.shape}")
    if np.any(empty <= 0.0) or not np.isfinite(empty).all():
        raise DataError("empty-input scores must be positive and finite")
    return raw * (empty.mean() / empty)


def aggregate_to_classes(calibrated: np.ndarray, spec: VerbalizerSpec,
                         normalize: bool = True) -> np.ndarray:
    """Weighted per-class sums over the expanded word axis.

    The axis layout must match ``spec.axis_tokens()``.  By default the result
    is renormalized onto the probability simplex so that downstream fusion
    sees a fixed scale.
    """
    calibrated = np.asarray(calibrated, dtype=np.float64)
    if calibrated.shape != (spec.axis_length(),):
        raise ValueError(
            f"expected a vector of length {spec.axis_length()}, got {calibrated.shape}")
    out = np.zeros(spec.num_classes)
    offset = 0
    for k, cw in enumerate(spec.classes):
        width = len(cw.expanded)
        weights = np.array([w for _, w in cw.expanded])
        out[k] = float(weights @ calibrated[offset:offset + width])
        offset += width
    if normalize:
        total = out.sum()
        if total <= 0.0:
            raise DataError("aggregated class scores sum to zero; cannot normalize")
        out = out / total
    return out


def average_prompts(per_prompt: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of per-prompt class-score vectors."""
    if len(per_prompt) < 1:
        raise ValueError("need at least one prompt")
    arrs = [np.asarray(v, dtype=np.float64) for v in per_prompt]
    length = arrs[0].shape
    if any(a.shape != length for a in arrs):
        raise ValueError("per-prompt score vectors differ in length")
    return np.mean(arrs, axis=0)


def calibrated_class_scores(raw_scores: np.ndarray, empty_scores: np.ndarray,
                            spec: VerbalizerSpec) -> np.ndarray:
    """Full per-sample pipeline: calibrate, aggregate, average over prompts.

    ``raw_scores`` is P x L (one row per prompt over the expanded word axis)
    and ``empty_scores`` the matching P x L empty-input profile.
    """
    raw_scores = np.asarray(raw_scores, dtype=np.float64)
    empty_scores = np.asarray(empty_scores, dtype=np.float64)
    if raw_scores.shape != empty_scores.shape or raw_scores.ndim != 2:
        raise ValueError("raw and empty score blocks must both be P x L")
    per_prompt = []
    for j in range(raw_scores.shape[0]):
        cal = calibrate(raw_scores[j], empty_scores[j])
        per_prompt.append(aggregate_to_classes(cal, spec))
    return average_prompts(per_prompt)
