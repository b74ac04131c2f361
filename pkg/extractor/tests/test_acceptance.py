"""Secondary acceptance: extractor output against the primary toolkit.

Run with ``pytest tests/test_acceptance.py -v -s``.  The real-model check
needs downloadable weights; offline environments skip it with a reason.
"""

import os

import numpy as np
import pytest

from protodec.decoder import TrainConfig, load_checkpoint
from protodec.cli import main as protodec_main
from protodec.store import DatasetManifest, read_pack, validate_pack
from protodec.verbalizer import expand_label_words
from protodec_extractor.extract import (ExtractionJob, ModelBundle,
                                        dump_embedding_table, extract)

# any RoBERTa-large-class masked LM works here; override to a local path if
# weights are mirrored somewhere reachable
REAL_MODEL = os.environ.get("PROTODEC_REAL_MODEL", "roberta-large")


def report(name: str, detail: str) -> None:
    print(f"[PASS] {name}: {detail}")


@pytest.fixture(scope="module")
def one_shot_workdir(tiny_model_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("oneshot")
    bundle = ModelBundle.load(str(tiny_model_dir))
    manifest = DatasetManifest(
        dataset="oneshot",
        class_names=["negative", "positive"],
        templates=["{text} in summary it was {mask} .",
                   "{text} all in all a {mask} one .",
                   "a really {mask} movie . {text}"],
        seed_words=[["bad"], ["great"]],
        shots=1,
    )
    train_samples = [(1, "it was the worst film"),
                     (2, "the film was great in summary")]
    eval_samples = [(1, "the movie was really wrong"),
                    (2, "it was a good movie really"),
                    (1, "a bad film it was"),
                    (2, "all in all really good")]
    extract(ExtractionJob(model_id=str(tiny_model_dir), manifest=manifest,
                          samples=train_samples, output=root / "train",
                          split="train"), bundle=bundle)
    extract(ExtractionJob(model_id=str(tiny_model_dir), manifest=manifest,
                          samples=eval_samples, output=root / "eval",
                          split="eval"), bundle=bundle)
    return root


class TestCrossComponentContract:
    def test_extracted_pack_passes_validator_with_zero_issues(
            self, one_shot_workdir):
        for split in ("train", "eval"):
            pack = read_pack(one_shot_workdir / split)
            result = validate_pack(pack)
            assert result.ok, result.issues
        report("pack conformance",
               "train and eval extractor packs validate with zero issues")

    def test_one_shot_train_eval_round_trip(self, one_shot_workdir):
        root = one_shot_workdir
        code = protodec_main([
            "train", "--train-pack", str(root / "train"),
            "--checkpoint-dir", str(root / "ckpts"),
            "--report-dir", str(root / "reports"),
            "--seeds", "0", "--epochs", "10", "--d-out", "16"])
        assert code == 0
        _, cfg, manifest = load_checkpoint(root / "ckpts" / "seed_0")
        assert manifest["shots"] == 1
        code = protodec_main([
            "eval", "--eval-pack", str(root / "eval"),
            "--checkpoint-dir", str(root / "ckpts"),
            "--report-dir", str(root / "reports_eval"),
            "--seeds", "0", "--ablate", "no-cal"])
        assert code == 0
        assert (root / "reports_eval" / "eval_report.json").exists()
        report("one-shot round trip",
               "extractor pack trained and evaluated through the CLI")


class TestRealModelExpansion:
    def test_expanded_bad_matches_published_neighbors(self, tmp_path):
        try:
            bundle = ModelBundle.load(REAL_MODEL)
        except Exception as exc:
            pytest.skip(f"real model {REAL_MODEL!r} unavailable in this "
                        f"environment: {exc}")
        dump_embedding_table(REAL_MODEL, tmp_path / "table", bundle=bundle)
        from protodec.verbalizer import EmbeddingTable
        table = EmbeddingTable.load(tmp_path / "table")
        # byte-BPE vocabularies mark word boundaries with 'Ġ'
        expanded = {token.replace("Ġ", " ").strip() for token, _ in
                    expand_label_words(table, "bad", k=10)}
        expected = {"poor", "wrong", "worst", "Bad", "good"}
        overlap = expanded & expected
        assert len(overlap) >= 3, (expanded, expected)
        report("real-model expansion",
               f"'bad' expansion overlaps published neighbors: {sorted(overlap)}")
