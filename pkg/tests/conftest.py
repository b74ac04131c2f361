import numpy as np
import pytest

from protodec.store import FeaturePack
from protodec.verbalizer import ClassWords, VerbalizerSpec


def make_gaussian_features(rng, num_classes=2, per_class=4, num_prompts=3,
                           d_in=16, separation=4.0, noise=0.5,
                           structure_rng=None):
    """Linearly separable multi-prompt features: one Gaussian blob per class,
    with a fixed per-prompt offset so prompt rows differ systematically.

    ``structure_rng`` fixes the class means and prompt offsets independently
    of the per-sample noise, so train/eval splits share the same geometry.
    """
    srng = structure_rng if structure_rng is not None else rng
    means = srng.normal(size=(num_classes, d_in))
    means = separation * means / np.linalg.norm(means, axis=1, keepdims=True)
    offsets = srng.normal(scale=0.5, size=(num_prompts, d_in))
    feats, labels = [], []
    for k in range(num_classes):
        for _ in range(per_class):
            x = means[k] + noise * rng.normal(size=d_in)
            rows = x[None, :] + offsets + 0.1 * rng.normal(size=(num_prompts, d_in))
            feats.append(rows)
            labels.append(k + 1)
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


def make_verbalizer(num_classes=2, words_per_class=2):
    classes = []
    weights = np.array([0.6, 0.4])[:words_per_class]
    weights = weights / weights.sum()
    for k in range(num_classes):
        expanded = [(f"word{k}_{i}", float(w)) for i, w in enumerate(weights)]
        classes.append(ClassWords(name=f"class{k + 1}", seeds=[f"word{k}_0"],
                                  expanded=expanded))
    return VerbalizerSpec(classes, expansion_size=words_per_class)


def make_scores(rng, labels, num_classes, num_prompts, words_per_class=2,
                bias=None):
    """Raw token scores biased per prompt; affinity favors the true class.

    The empty-input profile equals the per-prompt bias, so calibration
    recovers the affinity signal exactly.
    """
    width = num_classes * words_per_class
    if bias is None:
        bias = rng.uniform(0.5, 2.0, size=(num_prompts, width))
    scores = np.zeros((len(labels), num_prompts, width))
    for i, label in enumerate(labels):
        affinity = 0.2 + 0.05 * rng.random(width)
        lo = (label - 1) * words_per_class
        affinity[lo:lo + words_per_class] = 1.0 + 0.2 * rng.random(words_per_class)
        scores[i] = bias * affinity
    return scores, bias


def build_pack(rng, split="train", num_classes=2, per_class=4, num_prompts=3,
               d_in=16, dataset="synthetic", words_per_class=2, bias=None,
               structure_rng=None):
    feats, labels = make_gaussian_features(rng, num_classes, per_class,
                                           num_prompts, d_in,
                                           structure_rng=structure_rng)
    scores, bias = make_scores(rng, labels, num_classes, num_prompts,
                               words_per_class, bias=bias)
    ids = [f"{dataset}-{split}-{i:04d}" for i in range(len(labels))]
    return FeaturePack(
        dataset=dataset,
        split=split,
        num_classes=num_classes,
        shots=per_class,
        num_prompts=num_prompts,
        feature_dim=d_in,
        prompt_templates=[f"template {j} with {{text}} and {{mask}}"
                          for j in range(num_prompts)],
        encoder_id="mock-encoder",
        seed=0,
        sample_ids=ids,
        labels=labels,
        features=feats.astype(np.float32),
        scores=scores.astype(np.float32),
        calibration=np.asarray(bias).astype(np.float32),
        score_axis=[f"word{k}_{i}" for k in range(num_classes)
                    for i in range(words_per_class)],
    )


class SynthTask:
    """A coherent train/eval pack pair plus the matching verbalizer."""

    def __init__(self, seed=0, per_class_train=4, per_class_eval=10):
        rng = np.random.default_rng(seed)
        structure = np.random.default_rng(seed + 10_000)
        state = structure.bit_generator.state
        self.train_pack = build_pack(rng, split="train",
                                     per_class=per_class_train,
                                     structure_rng=structure)
        structure.bit_generator.state = state  # same geometry for eval
        self.eval_pack = build_pack(rng, split="eval",
                                    per_class=per_class_eval,
                                    bias=self.train_pack.calibration,
                                    structure_rng=structure)
        self.spec = make_verbalizer()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_task():
    return SynthTask(seed=0)
