"""Export masked-LM outputs into protodec feature packs.

For every sample and every template the extractor records the final-layer
hidden state at the mask position and the mask-position probabilities of the
requested label-word tokens; per-template empty-input probabilities go into
the pack's calibration block.  Inputs are truncated from the text side only,
so the template (and its mask slot) always survives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForMaskedLM, AutoTokenizer

from protodec.errors import ConfigError, DataError
from protodec.store import DatasetManifest, FeaturePack, validate_pack, write_pack
from protodec.verbalizer import EmbeddingTable, VerbalizerSpec, build_spec

# floor for probabilities that must stay strictly positive after the
# float32 cast (calibration entries feed elementwise division)
_PROB_FLOOR = 1e-38


@dataclass
class ModelBundle:
    """A loaded tokenizer/model pair in inference mode."""

    tokenizer: object
    model: object
    model_id: str
    device: str = "cpu"

    @classmethod
    def load(cls, model_id: str, device: str = "cpu") -> "ModelBundle":
        try:
            tokenizer = AutoTokenizer.from_pretrained(model_id)
            model = AutoModelForMaskedLM.from_pretrained(model_id)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load model {model_id!r}: {exc}") from exc
        if tokenizer.mask_token_id is None:
            raise ConfigError(f"{model_id!r} has no mask token; need a masked LM")
        model.to(device)
        model.eval()
        return cls(tokenizer, model, model_id, device)

    @property
    def max_length(self) -> int:
        limit = getattr(self.tokenizer, "model_max_length", 512)
        # some tokenizers report a sentinel "very large" value
        return min(int(limit), 4096)

    def resolve_token(self, token: str) -> int:
        """Map a label-word string to a single vocabulary id."""
        raw_id = self.tokenizer.convert_tokens_to_ids(token)
        unk = self.tokenizer.unk_token_id
        if raw_id is not None and raw_id != unk:
            return int(raw_id)
        ids = self.tokenizer(token, add_special_tokens=False)["input_ids"]
        if len(ids) != 1:
            pieces = self.tokenizer.convert_ids_to_tokens(ids)
            raise DataError(
                f"label word {token!r} is not a single token under this "
                f"tokenizer (pieces: {pieces}); choose single-token words")
        return int(ids[0])

    def render(self, template: str, text: str) -> tuple[str, list[int]]:
        """Fill a template, truncating the text side until it fits."""
        if "{mask}" not in template:
            raise ConfigError(f"template {template!r} has no {{mask}} slot")
        shell = template.replace("{mask}", self.tokenizer.mask_token)
        text_ids = self.tokenizer(text, add_special_tokens=False)["input_ids"]
        shell_ids = self.tokenizer(shell.replace("{text}", "").strip())["input_ids"]
        budget = max(self.max_length - len(shell_ids), 0)
        text_ids = text_ids[:budget]
        while True:
            snippet = self.tokenizer.decode(text_ids).strip() if text_ids else ""
            prompt = shell.replace("{text}", snippet).strip()
            ids = self.tokenizer(prompt)["input_ids"]
            if len(ids) <= self.max_length:
                if self.tokenizer.mask_token_id not in ids:
                    raise DataError(
                        f"mask token missing from rendered prompt {prompt!r}")
                return prompt, ids
            if not text_ids:
                raise DataError(
                    f"template {template!r} alone exceeds the model's "
                    f"{self.max_length}-token limit")
            text_ids = text_ids[:-1]

    def encode_prompt(self, prompt: str,
                      token_ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Hidden state and token probabilities at the first mask position."""
        enc = self.tokenizer(prompt, return_tensors="pt",
                             truncation=True, max_length=self.max_length)
        enc = {k: v.to(self.device) for k, v in enc.items()}
        ids = enc["input_ids"][0].tolist()
        if self.tokenizer.mask_token_id not in ids:
            raise DataError(f"prompt has no mask token: {prompt!r}")
        position = ids.index(self.tokenizer.mask_token_id)
        with torch.no_grad():
            out = self.model(**enc, output_hidden_states=True)
        hidden = out.hidden_states[-1][0, position].double().cpu().numpy()
        probs = torch.softmax(out.logits[0, position].double(), dim=-1)
        scores = probs.cpu().numpy()[np.asarray(token_ids, dtype=np.int64)]
        return hidden, np.maximum(scores, _PROB_FLOOR)


@dataclass
class ExtractionJob:
    """One export run: model, task description, labeled texts, output path."""

    model_id: str
    manifest: DatasetManifest
    samples: list[tuple[int, str]]       # (1-based label, text)
    output: Path
    split: str = "train"
    verbalizer: VerbalizerSpec | None = None
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self):
        self.output = Path(self.output)
        if not self.samples:
            raise DataError("sample list is empty")
        for template in self.manifest.templates:
            if "{mask}" not in template:
                raise ConfigError(f"template {template!r} has no {{mask}} slot")
        n = self.manifest.num_classes
        for label, _ in self.samples:
            if not 1 <= label <= n:
                raise DataError(f"label {label} outside 1..{n}")

    def effective_spec(self) -> VerbalizerSpec:
        """The word sets whose token scores get recorded."""
        if self.verbalizer is not None:
            return self.verbalizer
        return build_spec(None, self.manifest.class_names,
                          self.manifest.seed_words, expansion_enabled=False)


def load_samples(path: str | Path, manifest: DatasetManifest) -> list[tuple[int, str]]:
    """Read a tab-separated ``label<TAB>text`` file.

    Labels may be 1-based integers or class names from the manifest.
    """
    samples = []
    names = {name: k + 1 for k, name in enumerate(manifest.class_names)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw_label, text = line.split("\t", 1)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: expected 'label<TAB>text'") from exc
        raw_label = raw_label.strip()
        if raw_label in names:
            label = names[raw_label]
        else:
            try:
                label = int(raw_label)
            except ValueError as exc:
                raise DataError(
                    f"{path}:{lineno}: unknown label {raw_label!r}") from exc
        samples.append((label, text.strip()))
    if not samples:
        raise DataError(f"no samples found in {path}")
    return samples


def extract(job: ExtractionJob, bundle: ModelBundle | None = None,
            overwrite: bool = False) -> FeaturePack:
    """Run the export and write a validated feature pack."""
    bundle = bundle or ModelBundle.load(job.model_id, job.device)
    spec = job.effective_spec()
    axis_tokens = spec.axis_tokens()
    token_ids = [bundle.resolve_token(t) for t in axis_tokens]
    templates = job.manifest.templates

    # empty-input profile, one row per template
    calibration = np.zeros((len(templates), len(token_ids)))
    for j, template in enumerate(templates):
        prompt, _ = bundle.render(template, "")
        _, calibration[j] = bundle.encode_prompt(prompt, token_ids)

    n = len(job.samples)
    feature_dim = int(bundle.model.config.hidden_size)
    features = np.zeros((n, len(templates), feature_dim))
    scores = np.zeros((n, len(templates), len(token_ids)))
    labels = np.zeros(n, dtype=np.int64)
    record_texts = []
    for i, (label, text) in enumerate(job.samples):
        labels[i] = label
        rendered = []
        for j, template in enumerate(templates):
            prompt, _ = bundle.render(template, text)
            hidden, token_scores = bundle.encode_prompt(prompt, token_ids)
            features[i, j] = hidden
            scores[i, j] = token_scores
            rendered.append(prompt)
        record_texts.append(rendered)

    pack = FeaturePack(
        dataset=job.manifest.dataset,
        split=job.split,
        num_classes=job.manifest.num_classes,
        shots=job.manifest.shots,
        num_prompts=len(templates),
        feature_dim=feature_dim,
        prompt_templates=list(templates),
        encoder_id=bundle.model_id,
        seed=job.seed,
        sample_ids=[f"{job.manifest.dataset}-{job.split}-{i:05d}"
                    for i in range(n)],
        labels=labels,
        features=features.astype(np.float32),
        scores=scores.astype(np.float32),
        calibration=np.maximum(calibration, _PROB_FLOOR).astype(np.float32),
        score_axis=list(axis_tokens),
        record_texts=record_texts,
    )
    report = validate_pack(pack)
    if not report.ok:
        raise DataError("extracted pack failed validation: "
                        + "; ".join(report.issues))
    write_pack(pack, job.output, overwrite=overwrite)
    return pack


def dump_embedding_table(model_id: str, out: str | Path,
                         bundle: ModelBundle | None = None) -> EmbeddingTable:
    """Write the word-prediction head as a protodec embedding table.

    Row ``i`` is the output-embedding vector of vocabulary id ``i``; token
    strings are the raw vocabulary forms so they resolve back to ids exactly.
    """
    bundle = bundle or ModelBundle.load(model_id)
    head = bundle.model.get_output_embeddings()
    if head is None:
        raise DataError(f"{model_id!r} has no word-prediction head")
    vectors = head.weight.detach().double().cpu().numpy()
    vocab_size = int(bundle.tokenizer.vocab_size)
    vectors = vectors[:vocab_size]
    tokens = bundle.tokenizer.convert_ids_to_tokens(list(range(vocab_size)))
    table = EmbeddingTable(vectors, [str(t) for t in tokens])
    table.save(out)
    return table
