import json

import numpy as np
import pytest

from tableroute.corpus import (
    RoutingExample,
    Table,
    load_corpus,
    split_by_dataset,
    stratified_split,
    write_corpus,
)
from tableroute.engine import EngineBackends
from tableroute.errors import IngestError, InvalidArgumentError
from tableroute.experts import (
    SimulatedGenerationBackend,
)
from tableroute.fusion import ScriptedAgent
from tableroute.ingest import ingest
from tableroute.synthetic import (
    SeparableCorpusConfig,
    TAG_PROFILES,
    biased_embedders,
    make_raw_records,
    make_separable_corpus,
)


class TestTable:
    def test_markdown_shape(self):
        t = Table(columns=("a", "b"), rows=(("1", "2"), ("3", "4")))
        lines = t.to_markdown().splitlines()
        assert lines[0] == "| a | b |"
        assert lines[1] == "| --- | --- |"
        assert lines[2] == "| 1 | 2 |"

    def test_pipe_escaped(self):
        t = Table(columns=("a",), rows=(("x|y",),))
        assert "x\\|y" in t.to_markdown()

    def test_serialize_stable(self):
        t = Table(columns=("a",), rows=(("1",),))
        assert t.serialize() == '{"columns":["a"],"rows":[["1"]]}'

    def test_round_trip_json(self):
        t = Table(columns=("a", "b"), rows=(("1", "2"),))
        assert Table.from_json(t.to_json()) == t

    def test_ragged_rows_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Table(columns=("a", "b"), rows=(("1",),))


class TestRoutingExample:
    def test_unknown_dataset_rejected(self):
        t = Table(columns=("a",), rows=(("1",),))
        with pytest.raises(InvalidArgumentError):
            RoutingExample("x", "made-up", "q", t, t.to_markdown(), (1, 0, 0), "g")

    def test_bad_scores_rejected(self):
        t = Table(columns=("a",), rows=(("1",),))
        with pytest.raises(InvalidArgumentError):
            RoutingExample("x", "wtq", "q", t, t.to_markdown(), (1, 2, 0), "g")


class TestCorpusIO:
    def _examples(self, n=6):
        train, val = make_separable_corpus(SeparableCorpusConfig(n_train=n, n_val=0, seed=2))
        return train

    def test_round_trip(self, tmp_path):
        examples = self._examples()
        write_corpus(tmp_path, examples)
        loaded = load_corpus(tmp_path)
        assert len(loaded) == len(examples)
        by_id = {e.id: e for e in examples}
        for ex in loaded:
            src = by_id[ex.id]
            assert ex.question == src.question
            assert ex.path_scores == src.path_scores
            np.testing.assert_array_equal(
                ex.embeddings.question_embedding,
                np.asarray(src.embeddings.question_embedding, dtype="<f4"),
            )

    def test_bitwise_reproducible_files(self, tmp_path):
        examples = self._examples()
        a, b = tmp_path / "a", tmp_path / "b"
        write_corpus(a, examples)
        write_corpus(b, examples)
        for name in ("corpus.jsonl", "embeddings.bin", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_missing_manifest_entry(self, tmp_path):
        examples = self._examples()
        write_corpus(tmp_path, examples)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        del manifest["entries"][examples[0].id]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(IngestError, match="manifest"):
            load_corpus(tmp_path)

    def test_truncated_sidecar(self, tmp_path):
        examples = self._examples()
        write_corpus(tmp_path, examples)
        blob = (tmp_path / "embeddings.bin").read_bytes()
        (tmp_path / "embeddings.bin").write_bytes(blob[: len(blob) // 2])
        with pytest.raises(IngestError, match="sidecar"):
            load_corpus(tmp_path)

    def test_duplicate_ids_rejected(self, tmp_path):
        examples = self._examples(2)
        clone = RoutingExample(
            id=examples[0].id, dataset=examples[0].dataset, question="q",
            table=examples[0].table, table_markdown=examples[0].table_markdown,
            path_scores=(1, 0, 0), gold_answer="g", embeddings=examples[0].embeddings,
        )
        with pytest.raises(IngestError, match="duplicate"):
            write_corpus(tmp_path, [examples[0], clone])


class TestStratifiedSplit:
    def test_deterministic_and_stratified(self):
        train, val = make_separable_corpus(SeparableCorpusConfig(n_train=80, n_val=0, seed=4))
        t1, v1 = stratified_split(train, 0.25, seed=9)
        t2, v2 = stratified_split(train, 0.25, seed=9)
        assert [e.id for e in t1] == [e.id for e in t2]
        assert [e.id for e in v1] == [e.id for e in v2]
        per_ds = split_by_dataset(v1)
        sizes = {len(v) for v in per_ds.values()}
        assert len(sizes) == 1  # balanced input stays balanced per dataset


class TestSynthetic:
    def test_raw_records_shape(self):
        raws = make_raw_records(10, seed=0)
        assert len(raws) == 10
        for raw in raws:
            assert set(raw) == {"id", "dataset", "question", "table", "gold_answer", "path_labels"}
            assert raw["path_labels"] == list(TAG_PROFILES[raw["dataset"]])

    def test_corpus_sizes_and_tags(self):
        train, val = make_separable_corpus(SeparableCorpusConfig(n_train=100, n_val=25, seed=0))
        assert len(train) == 100
        assert len(val) == 25
        assert {e.dataset for e in train} <= set(TAG_PROFILES)

    def test_labels_follow_profiles(self):
        train, _ = make_separable_corpus(SeparableCorpusConfig(n_train=50, n_val=10, seed=1))
        for ex in train:
            assert ex.path_scores == TAG_PROFILES[ex.dataset]


def build_sim_stack(raws, seed=0):
    tags = sorted({r["dataset"] for r in raws})
    embedders = biased_embedders(tags, bias_scale=1.0, seed=seed)
    labels_t = {r["id"]: r["path_labels"][0] for r in raws}
    labels_i = {r["id"]: r["path_labels"][1] for r in raws}
    labels_f = {r["id"]: r["path_labels"][2] for r in raws}
    backends = EngineBackends(
        question_embedder=embedders["question"],
        text_embedder=embedders["text"],
        vision_embedder=embedders["vision"],
        text_generator=SimulatedGenerationBackend("text", labels_t),
        image_generator=SimulatedGenerationBackend("image", labels_i),
    )
    return backends, ScriptedAgent.from_labels(labels_f)


class TestIngest:
    def test_ten_record_smoke(self, tmp_path):
        raws = make_raw_records(10, seed=5)
        backends, agent = build_sim_stack(raws, seed=5)
        result = ingest(raws, backends, agent, tmp_path)
        assert len(result.examples) == 10
        assert not result.skipped
        loaded = load_corpus(tmp_path)
        assert all(e.embeddings is not None for e in loaded)
        # scores produced by running the paths equal the source labels
        by_id = {r["id"]: r for r in raws}
        for ex in loaded:
            assert list(ex.path_scores) == by_id[ex.id]["path_labels"]

    def test_missing_gold_skipped_with_reason(self, tmp_path):
        raws = make_raw_records(10, seed=6)
        raws[3] = dict(raws[3], gold_answer="")
        backends, agent = build_sim_stack(raws, seed=6)
        result = ingest(raws, backends, agent, tmp_path, skip_threshold=0.5)
        assert len(result.examples) == 9
        assert result.skipped[0][0] == raws[3]["id"]
        assert "gold_answer" in result.skipped[0][1]

    def test_skip_rate_threshold(self, tmp_path):
        raws = make_raw_records(4, seed=7)
        for i in range(3):
            raws[i] = dict(raws[i], question="")
        backends, agent = build_sim_stack(raws, seed=7)
        with pytest.raises(IngestError, match="skipped"):
            ingest(raws, backends, agent, tmp_path, skip_threshold=0.2)

    def test_rerun_bitwise_identical(self, tmp_path):
        raws = make_raw_records(8, seed=8)
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            backends, agent = build_sim_stack(raws, seed=8)
            ingest(raws, backends, agent, out)
        for name in ("corpus.jsonl", "embeddings.bin", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_cached_expert_outputs_persisted(self, tmp_path):
        raws = make_raw_records(4, seed=9)
        backends, agent = build_sim_stack(raws, seed=9)
        ingest(raws, backends, agent, tmp_path)
        loaded = load_corpus(tmp_path)
        for ex in loaded:
            assert set(ex.cached_expert_outputs) == {"text", "image"}
