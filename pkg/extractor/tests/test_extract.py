import numpy as np
import pytest
import torch

from protodec.errors import ConfigError, DataError
from protodec.gateway import PackProvider
from protodec.store import DatasetManifest, read_pack, validate_pack
from protodec.verbalizer import EmbeddingTable, expand_label_words
from protodec_extractor.extract import (ExtractionJob, ModelBundle,
                                        dump_embedding_table, extract,
                                        load_samples)


@pytest.fixture(scope="module")
def bundle(tiny_model_dir):
    return ModelBundle.load(str(tiny_model_dir))


@pytest.fixture(scope="module")
def toy_pack(tiny_model_dir, task_manifest, samples_file, bundle,
             tmp_path_factory):
    out = tmp_path_factory.mktemp("packs") / "train"
    job = ExtractionJob(
        model_id=str(tiny_model_dir),
        manifest=task_manifest,
        samples=load_samples(samples_file, task_manifest),
        output=out,
        split="train",
    )
    pack = extract(job, bundle=bundle)
    return out, pack


class TestLoadSamples:
    def test_name_and_integer_labels(self, samples_file, task_manifest):
        samples = load_samples(samples_file, task_manifest)
        assert [label for label, _ in samples] == [1, 1, 2, 2]

    def test_unknown_label(self, tmp_path, task_manifest):
        bad = tmp_path / "bad.tsv"
        bad.write_text("neutral\tsome text")
        with pytest.raises(DataError, match="unknown label"):
            load_samples(bad, task_manifest)

    def test_missing_tab(self, tmp_path, task_manifest):
        bad = tmp_path / "bad.tsv"
        bad.write_text("just text without a label")
        with pytest.raises(DataError, match="label<TAB>text"):
            load_samples(bad, task_manifest)


class TestExtract:
    def test_pack_passes_primary_validator(self, toy_pack):
        out, _ = toy_pack
        report = validate_pack(read_pack(out))
        assert report.ok, report.issues

    def test_shapes_and_metadata(self, toy_pack, task_manifest):
        _, pack = toy_pack
        assert pack.num_samples == 4
        assert pack.features.shape == (4, 3, 32)
        assert pack.scores.shape == (4, 3, 2)  # singleton word set per class
        assert pack.score_axis == ["bad", "great"]
        assert pack.prompt_templates == task_manifest.templates

    def test_empty_input_profile_per_template(self, toy_pack, bundle):
        _, pack = toy_pack
        assert pack.calibration.shape == (3, 2)
        assert np.all(pack.calibration > 0)
        # calibration row equals a direct empty-input query
        prompt, _ = bundle.render(pack.prompt_templates[1], "")
        token_ids = [bundle.resolve_token(t) for t in pack.score_axis]
        _, expected = bundle.encode_prompt(prompt, token_ids)
        np.testing.assert_array_equal(pack.calibration[1],
                                      expected.astype(np.float32))

    def test_hidden_state_matches_direct_forward(self, toy_pack, bundle):
        _, pack = toy_pack
        prompt = pack.record_texts[0][0]
        enc = bundle.tokenizer(prompt, return_tensors="pt")
        ids = enc["input_ids"][0].tolist()
        position = ids.index(bundle.tokenizer.mask_token_id)
        with torch.no_grad():
            out = bundle.model(**enc, output_hidden_states=True)
        expected = out.hidden_states[-1][0, position].double().numpy()
        np.testing.assert_array_equal(pack.features[0, 0],
                                      expected.astype(np.float32))

    def test_deterministic_re_extraction(self, tiny_model_dir, task_manifest,
                                         samples_file, bundle, tmp_path):
        job = ExtractionJob(
            model_id=str(tiny_model_dir), manifest=task_manifest,
            samples=load_samples(samples_file, task_manifest),
            output=tmp_path / "again", split="train")
        pack = extract(job, bundle=bundle)
        again = extract(ExtractionJob(
            model_id=str(tiny_model_dir), manifest=task_manifest,
            samples=load_samples(samples_file, task_manifest),
            output=tmp_path / "again2", split="train"), bundle=bundle)
        np.testing.assert_array_equal(pack.features, again.features)
        np.testing.assert_array_equal(pack.scores, again.scores)

    def test_multi_token_label_word_rejected(self, bundle):
        with pytest.raises(DataError, match="single token"):
            bundle.resolve_token("fantastic")

    def test_template_without_mask_rejected(self, tiny_model_dir, samples_file):
        manifest = DatasetManifest(
            dataset="x", class_names=["a", "b"],
            templates=["{text} no slot here"],
            seed_words=[["bad"], ["great"]], shots=2)
        with pytest.raises(ConfigError, match="mask"):
            ExtractionJob(model_id=str(tiny_model_dir), manifest=manifest,
                          samples=[(1, "t")], output="unused")

    def test_pack_provider_replays_by_rendered_text(self, toy_pack):
        out, pack = toy_pack
        provider = PackProvider(str(out))
        prompt = pack.record_texts[2][1]
        hidden, scores = provider.encode(prompt, [0, 1])
        np.testing.assert_array_equal(
            hidden, np.asarray(pack.features[2, 1], dtype=np.float64))
        np.testing.assert_array_equal(
            scores, np.asarray(pack.scores[2, 1], dtype=np.float64))


class TestTruncation:
    def test_long_text_truncated_from_text_side(self, bundle, task_manifest):
        long_text = " ".join(["movie"] * 200)
        prompt, ids = bundle.render(task_manifest.templates[0], long_text)
        assert len(ids) <= bundle.max_length
        assert bundle.tokenizer.mask_token_id in ids
        # the template tail must survive verbatim
        assert prompt.endswith("in summary it was [MASK] .")

    def test_mask_leading_template_also_survives(self, bundle, task_manifest):
        long_text = " ".join(["film"] * 200)
        prompt, ids = bundle.render(task_manifest.templates[2], long_text)
        assert prompt.startswith("a really [MASK] movie .")
        assert len(ids) <= bundle.max_length

    def test_oversized_template_rejected(self, bundle):
        template = " ".join(["summary"] * 40) + " {text} {mask}"
        with pytest.raises(DataError, match="limit"):
            bundle.render(template, "hello")


class TestEmbeddingTable:
    def test_row_count_equals_vocab(self, tiny_model_dir, bundle, tmp_path):
        table = dump_embedding_table(str(tiny_model_dir), tmp_path / "table",
                                     bundle=bundle)
        assert len(table) == bundle.tokenizer.vocab_size
        assert table.vectors.shape[1] == bundle.model.config.hidden_size

    def test_round_trips_through_primary_reader(self, tiny_model_dir, bundle,
                                                tmp_path):
        dumped = dump_embedding_table(str(tiny_model_dir), tmp_path / "table",
                                      bundle=bundle)
        loaded = EmbeddingTable.load(tmp_path / "table")
        assert loaded.tokens == dumped.tokens
        np.testing.assert_array_equal(
            loaded.vectors, dumped.vectors.astype(np.float32))

    def test_rows_align_with_model_head(self, tiny_model_dir, bundle, tmp_path):
        table = dump_embedding_table(str(tiny_model_dir), tmp_path / "table2",
                                     bundle=bundle)
        bad_id = bundle.resolve_token("bad")
        head_row = bundle.model.get_output_embeddings().weight[bad_id]
        np.testing.assert_allclose(table.vectors[bad_id],
                                   head_row.detach().double().numpy())
        assert table.tokens[bad_id] == "bad"

    def test_expansion_runs_on_dumped_table(self, tiny_model_dir, bundle,
                                            tmp_path):
        table = dump_embedding_table(str(tiny_model_dir), tmp_path / "table3",
                                     bundle=bundle)
        expanded = expand_label_words(table, "bad", k=5)
        assert expanded[0][0] == "bad"
        assert sum(w for _, w in expanded) == pytest.approx(1.0, abs=1e-9)
