import math
import random
from collections import Counter
from itertools import combinations

import pytest

from vizflow import forest as ft

from .conftest import seed_forest, seed_tools


class TestCombos:
    def test_single_element(self):
        assert ft.combos(["a"], 1, random.Random(0)) == [("a",)]

    def test_arity_exceeds_set(self):
        with pytest.raises(ft.ForestError):
            ft.combos(["a", "b", "c"], 5, random.Random(0))

    def test_deterministic_for_seed(self):
        ids = [f"e{i}" for i in range(10)]
        a = ft.combos(ids, 2, random.Random(99), count=20)
        b = ft.combos(ids, 2, random.Random(99), count=20)
        assert a == b

    def test_pairs_uniform_within_3_sigma(self):
        ids = [f"e{i}" for i in range(10)]
        rng = random.Random(7)
        draws = ft.combos(ids, 2, rng, count=10_000)
        counts = Counter(frozenset(t) for t in draws)
        n_pairs = math.comb(10, 2)
        p = 1 / n_pairs
        expected = 10_000 * p
        sigma = math.sqrt(10_000 * p * (1 - p))
        assert set(counts) <= {frozenset(c) for c in combinations(ids, 2)}
        for pair in combinations(ids, 2):
            assert abs(counts[frozenset(pair)] - expected) < 3 * sigma, pair


class TestExpandKnowledge:
    def test_identical_concept_deduped(self):
        forest = seed_forest()
        before = len(forest)
        dup = ft.KnowledgeConcept.make("Pythagorean relation",
                                       "right triangle side lengths", "Geometry")
        delta = ft.expand_knowledge([dup], forest)
        assert delta == [] and len(forest) == before

    def test_empty_prediction_list(self):
        forest = seed_forest()
        assert ft.expand_knowledge([], forest) == []

    def test_mixed_batch_matches_hand_computed_cosines(self):
        forest = seed_forest()
        embedder = forest.embedder
        threshold = 0.85
        preds = [
            ft.KnowledgeConcept.make("Pythagorean relation",
                                     "right triangle side lengths", "Geometry"),
            ft.KnowledgeConcept.make("Inscribed angle", "angle subtending an arc",
                                     "Geometry"),
            ft.KnowledgeConcept.make("Prime factorization",
                                     "decomposing integers into primes", "Algebra"),
        ]
        existing_vecs = [embedder.embed(c.embed_text()) for c in forest.concepts()]
        accepted_oracle = []
        oracle_vecs = list(existing_vecs)
        for p in preds:
            v = embedder.embed(p.embed_text())
            if max(ft.cosine(v, w) for w in oracle_vecs) < threshold:
                accepted_oracle.append(p.name)
                oracle_vecs.append(v)
        assert len(accepted_oracle) == 2  # fixture chosen so exactly one dups
        delta = ft.expand_knowledge(preds, forest, threshold)
        assert [c.name for c in delta] == accepted_oracle

    def test_idempotent_second_call(self):
        forest = seed_forest()
        preds = [ft.KnowledgeConcept.make("Inscribed angle", "arc-subtending angle",
                                          "Geometry")]
        first = ft.expand_knowledge(preds, forest)
        assert len(first) == 1
        second = ft.expand_knowledge(preds, forest)
        assert second == []

    def test_parent_is_nearest_and_depth_consistent(self):
        forest = seed_forest()
        pred = ft.KnowledgeConcept.make("Pythagorean triples",
                                        "integer right triangle side lengths",
                                        "Geometry")
        vec = forest.embedder.embed(pred.embed_text())
        nearest = max(forest.concepts(),
                      key=lambda c: ft.cosine(vec, forest.embedder.embed(c.embed_text())))
        (accepted,) = ft.expand_knowledge([pred], forest)
        assert accepted.parent == nearest.id
        assert accepted.depth == nearest.depth + 1
        forest.check_hierarchy()

    def test_monotone_growth_and_round_log(self):
        forest = seed_forest()
        base_ids = set(forest.ids())
        d1 = ft.expand_knowledge(
            [ft.KnowledgeConcept.make("Altitude", "height to a base", "Geometry"),
             ft.KnowledgeConcept.make("Chord length", "segment across a circle",
                                      "Geometry")], forest)
        d2 = ft.expand_knowledge(
            [ft.KnowledgeConcept.make("Perimeter sum", "total boundary length",
                                      "Geometry"),
             ft.KnowledgeConcept.make("Angle bisector", "splits an angle equally",
                                      "Geometry"),
             ft.KnowledgeConcept.make("Sample variance", "spread of observations",
                                      "Statistics")], forest)
        assert base_ids <= set(forest.ids())
        assert [len(r) for r in forest.round_log] == [len(d1), len(d2)]
        assert sum(len(r) for r in forest.round_log) == len(forest) - len(base_ids)


class TestExpandTools:
    def test_duplicate_name_after_normalization_dropped(self):
        tools = seed_tools()
        dup = ft.ToolSpec.make("  AUXILIARY   line ", "different description entirely")
        assert ft.expand_tools([dup], tools) == []

    def test_all_novel_batch_accepted(self):
        tools = seed_tools()
        before = len(tools)
        batch = [ft.ToolSpec.make("grid overlay", "draw a measuring grid"),
                 ft.ToolSpec.make("zoom crop", "crop to a region of interest")]
        delta = ft.expand_tools(batch, tools)
        assert len(delta) == 2 and len(tools) == before + 2

    def test_mixed_batch_matches_hand_count(self):
        tools = seed_tools()
        embedder = tools.embedder
        preds = [ft.ToolSpec.make("auxiliary line", "draw a helper segment"),
                 ft.ToolSpec.make("angle protractor", "measure an angle on the figure"),
                 ft.ToolSpec.make("histogram bars", "draw value bars for counts")]
        vecs = [embedder.embed(t.embed_text()) for t in tools.tools()]
        expected = []
        names = {ft.normalize_name(t.name) for t in tools.tools()}
        for p in preds:
            v = embedder.embed(p.embed_text())
            if ft.normalize_name(p.name) in names:
                continue
            if max(ft.cosine(v, w) for w in vecs) < 0.85:
                expected.append(p.name)
                vecs.append(v)
                names.add(ft.normalize_name(p.name))
        delta = ft.expand_tools(preds, tools)
        assert [t.name for t in delta] == expected
        assert len(expected) == 2


class TestStatsAndPersistence:
    def test_chain_stats(self):
        forest = ft.KnowledgeForest()
        a = forest.add_root(ft.KnowledgeConcept.make("root idea", "top", "Geometry"))
        b = ft.KnowledgeConcept.make("middle idea", "mid", "Geometry")
        b.parent = a.id
        forest.add_root(b)
        c = ft.KnowledgeConcept.make("leaf idea", "bottom", "Geometry")
        c.parent = b.id
        forest.add_root(c)
        st = ft.stats(forest)
        assert (st["node_count"], st["max_depth"], st["domain_count"]) == (3, 2, 1)

    def test_two_round_growth_log(self):
        forest = seed_forest()
        ft.expand_knowledge(
            [ft.KnowledgeConcept.make("Altitude", "height segment", "Geometry"),
             ft.KnowledgeConcept.make("Chord", "circle crossing segment", "Geometry")],
            forest)
        ft.expand_knowledge(
            [ft.KnowledgeConcept.make("Sector", "pie slice of a disk", "Geometry"),
             ft.KnowledgeConcept.make("Mode", "most frequent value", "Statistics"),
             ft.KnowledgeConcept.make("Tree diagram", "branching outcomes",
                                      "Logical Reasoning")],
            forest)
        assert ft.stats(forest)["per_round_growth"] == [2, 3]

    def test_snapshot_round_trip_digest(self, tmp_path):
        forest = seed_forest()
        ft.expand_knowledge([ft.KnowledgeConcept.make("Altitude", "height", "Geometry")],
                            forest)
        digest = ft.save_forest(forest, tmp_path / "f.snapshot", round_index=1)
        loaded = ft.load_forest(tmp_path / "f.snapshot")
        assert loaded.digest() == digest == forest.digest()
        assert loaded.round_log == forest.round_log

    def test_snapshot_tamper_detected(self, tmp_path):
        forest = seed_forest()
        ft.save_forest(forest, tmp_path / "f.snapshot")
        raw = (tmp_path / "f.snapshot").read_text().replace(
            "Pythagorean", "Pythagorean!")
        (tmp_path / "f.snapshot").write_text(raw)
        with pytest.raises(ft.ForestError, match="digest mismatch"):
            ft.load_forest(tmp_path / "f.snapshot")

    def test_seed_files_load(self, tmp_path):
        kpath = tmp_path / "k.yaml"
        kpath.write_text("- name: Area of squares\n  description: side squared\n"
                         "  domain: Geometry\n")
        tpath = tmp_path / "t.yaml"
        tpath.write_text("- name: ruler\n  description: measure a span\n"
                         "  signature: (image, a, b)\n")
        forest = ft.load_seed_concepts(kpath)
        tools = ft.load_seed_tools(tpath)
        assert len(forest) == 1 and len(tools) == 1
        assert forest.concepts()[0].depth == 0


def test_hashing_embedder_deterministic_unit_vector():
    emb = ft.HashingEmbedder()
    a = emb.embed("Pythagorean relation: right triangle side lengths")
    b = emb.embed("Pythagorean relation: right triangle side lengths")
    assert (a == b).all()
    assert abs(float((a * a).sum()) - 1.0) < 1e-9
