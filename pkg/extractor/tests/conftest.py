from pathlib import Path

import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

from protodec.store import DatasetManifest

WORDS = ["bad", "good", "great", "poor", "wrong", "worst", "movie", "film",
         "was", "it", "in", "summary", "the", "all", "one", "really"]


def build_tiny_mlm(target: Path, seed: int = 0) -> Path:
    """A fully offline masked LM: WordPiece vocab plus a random-init head."""
    letters = list("abcdefghijklmnopqrstuvwxyz")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    for token in WORDS + letters + ["##" + c for c in letters] + [".", ","]:
        if token not in vocab:
            vocab.append(token)
    target.mkdir(parents=True, exist_ok=True)
    (target / "vocab.txt").write_text("\n".join(vocab))
    tokenizer = BertTokenizer(str(target / "vocab.txt"), do_lower_case=True,
                              model_max_length=32)
    config = BertConfig(vocab_size=len(vocab), hidden_size=32,
                        num_hidden_layers=2, num_attention_heads=2,
                        intermediate_size=64, max_position_embeddings=64)
    torch.manual_seed(seed)
    model = BertForMaskedLM(config)
    model.eval()
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    return build_tiny_mlm(tmp_path_factory.mktemp("models") / "tiny-mlm")


@pytest.fixture(scope="session")
def task_manifest() -> DatasetManifest:
    return DatasetManifest(
        dataset="toy-reviews",
        class_names=["negative", "positive"],
        templates=["{text} in summary it was {mask} .",
                   "{text} all in all a {mask} one .",
                   "a really {mask} movie . {text}"],
        seed_words=[["bad"], ["great"]],
        shots=2,
    )


@pytest.fixture(scope="session")
def samples_file(tmp_path_factory, task_manifest) -> Path:
    lines = [
        "negative\tthe movie was really wrong in all",
        "1\tit was the worst film",
        "positive\tit was a good movie really",
        "2\tthe film was great in summary",
    ]
    path = tmp_path_factory.mktemp("data") / "train.tsv"
    path.write_text("\n".join(lines))
    return path
