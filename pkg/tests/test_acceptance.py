"""Acceptance suite: one test per release criterion, each printing a
pass/fail line and enforcing its runtime budget and stated tolerance."""

import itertools
import json
import math
import random
import statistics
import time
from contextlib import contextmanager

import numpy as np
import pytest

from vizflow import bench as bn
from vizflow import calibration as cal
from vizflow import cli
from vizflow import datamodel as dm
from vizflow import expansion as xp
from vizflow import flywheel as fw
from vizflow import forest as ft
from vizflow import gateway as gw
from vizflow import perception as pc
from vizflow import rollout as rl

from .conftest import png_bytes, seed_forest, seed_tools
from .test_calibration import EchoRepairer, corpus_rule, crafted_corpus
from .test_rollout import surrogate_oracle


@contextmanager
def criterion(name: str, budget_s: float):
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL ({time.monotonic() - t0:.2f}s)")
        raise
    elapsed = time.monotonic() - t0
    assert elapsed < budget_s, f"{name}: {elapsed:.2f}s exceeds {budget_s}s budget"
    print(f"\n[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s)")


def test_reward_table_exactness():
    with criterion("reward-table-exactness", budget_s=1.0):
        params = rl.GrpoParams(lambda_format=0.5, lambda_tool=0.3)
        expected = {}
        for acc, fmt, tool in itertools.product((0, 1), repeat=3):
            # hand evaluation: acc + 0.5*fmt + 0.3*[acc>0]*tool
            expected[(acc, fmt, tool)] = acc + 0.5 * fmt + \
                (0.3 * tool if acc > 0 else 0.0)
        for combo, want in expected.items():
            got = rl.reward_total(*combo, params)
            assert got == want, (combo, got, want)  # tolerance 0
        assert sorted(set(expected.values())) == [0.0, 0.5, 1.0, 1.3, 1.5, 1.8]


def test_grpo_oracle_equivalence():
    with criterion("grpo-oracle-equivalence", budget_s=5.0):
        params = rl.GrpoParams()
        rng = np.random.default_rng(20240)
        for _ in range(50):
            G = int(rng.integers(1, 5))
            outs = []
            for _ in range(G):
                T = int(rng.integers(1, 17))
                outs.append(rl.GroupOutput(
                    rng.normal(0.0, 1.0, T), rng.normal(0.0, 1.0, T),
                    float(rng.choice([0.0, 0.5, 1.0, 1.3, 1.5, 1.8]))))
            group = rl.RolloutGroup("x", outs)
            fast = rl.grpo_surrogate(group, params)
            slow = surrogate_oracle(group, params)
            assert abs(fast - slow) <= 1e-9, (fast, slow)
        # degenerate cases are exact
        flat = rl.RolloutGroup("x", [rl.GroupOutput(np.zeros(4), np.zeros(4), 1.0)
                                     for _ in range(3)])
        assert rl.grpo_surrogate(flat, params) == 0.0
        single = rl.RolloutGroup("x", [rl.GroupOutput(
            rng.normal(size=6), rng.normal(size=6), 1.8)])
        assert rl.grpo_surrogate(single, params) == 0.0


def _monotone_check(seed_ids: set[str], round_log: list[list[str]],
                    final_ids: set[str]) -> None:
    """Ids are only ever added: disjoint per-round additions, union is final."""
    seen = set(seed_ids)
    for additions in round_log:
        added = set(additions)
        assert not (added & seen), "an id was re-added or removed"
        seen |= added
    assert seen == final_ids


def test_flywheel_determinism_and_monotonicity(tmp_path, session_store, stub_pool):
    with criterion("flywheel-determinism-monotonicity", budget_s=30.0):
        cfg = fw.FlywheelConfig(rounds=3, combos_per_side=1, seed=42)
        results = []
        for name in ("twin-a", "twin-b"):
            forest, tools = seed_forest(), seed_tools()
            k0, t0 = set(forest.ids()), set(tools.ids())
            res = fw.run_evolution(cfg, forest, tools, gw.MockGenerator(seed=42),
                                   stub_pool, session_store, tmp_path / name)
            results.append((res, k0, t0))
        (res_a, k0, t0), (res_b, _, _) = results
        assert res_a.manifest["digest"] == res_b.manifest["digest"]
        _monotone_check(k0, res_a.forest.round_log, set(res_a.forest.ids()))
        _monotone_check(t0, res_a.tools.round_log, set(res_a.tools.ids()))
        # novelty 1 per round: exactly N new concepts and N new tools
        assert [r.new_concepts for r in res_a.growth] == [1, 1, 1]
        assert [r.new_tools for r in res_a.growth] == [1, 1, 1]
        assert len(res_a.forest) - len(k0) == 3
        assert len(res_a.tools) - len(t0) == 3


def test_seed_diversity_simulation(tmp_path, session_store, stub_pool):
    with criterion("seed-diversity-simulation", budget_s=30.0):
        def generator():
            return gw.MockGenerator(seed=9, novelty="proportional",
                                    proportional_rate=0.5)

        def doubled_seeds():
            forest, tools = seed_forest(), seed_tools()
            for i in range(len(forest)):
                forest.add_root(ft.KnowledgeConcept.make(
                    f"further seed concept number {i}",
                    f"an unrelated additional topic {i}", "Algebra"))
            for i in range(len(tools)):
                tools.add(ft.ToolSpec.make(
                    f"further seed tool number {i}",
                    f"an unrelated additional operation {i}", "(image)"))
            return forest, tools

        cfg = fw.FlywheelConfig(rounds=5, combos_per_side=1, seed=9)
        small = fw.run_evolution(cfg, seed_forest(), seed_tools(), generator(),
                                 stub_pool, session_store, tmp_path / "seed-small")
        big_forest, big_tools = doubled_seeds()
        assert len(big_forest) == 2 * len(seed_forest())
        assert len(big_tools) == 2 * len(seed_tools())
        big = fw.run_evolution(cfg, big_forest, big_tools, generator(),
                               stub_pool, session_store, tmp_path / "seed-big")
        small_curve = [r.k_total + r.t_total for r in small.growth]
        big_curve = [r.k_total + r.t_total for r in big.growth]
        assert len(small_curve) == len(big_curve) == 5
        assert all(b >= s for s, b in zip(small_curve, big_curve)), \
            (small_curve, big_curve)


def test_calibration_routing(store, tmp_path):
    with criterion("calibration-routing", budget_s=10.0):
        batch = crafted_corpus(store)
        assert len(batch) == 20
        originals = {s.question: (s.original_image.digest,
                                  tuple(st.output_image.digest
                                        for st in s.trajectory.steps))
                     for s in batch}
        result = cal.calibrate(batch, cal.ScriptedChecker(corpus_rule),
                               repairer=EchoRepairer(), max_iters=3, store=store)
        assert (len(result.verified), len(result.rejected)) == (17, 3)
        for s in result.verified:
            key = s.question.removeprefix("[repaired] ")
            assert originals[key] == (
                s.original_image.digest,
                tuple(st.output_image.digest for st in s.trajectory.steps))
        per_item_iters = {}
        for entry in result.audit:
            per_item_iters[entry["sample"]] = max(
                per_item_iters.get(entry["sample"], 0), entry["iteration"])
        assert max(per_item_iters.values()) <= 3


def test_expansion_cap_and_lineage(session_store, stub_pool):
    with criterion("expansion-cap-lineage", budget_s=30.0):
        from .conftest import make_sample
        rng = random.Random(555)
        dataset = [make_sample(session_store, question=f"lineage root {i}",
                               status="verified") for i in range(6)]
        by_id = {s.id: s for s in dataset}
        for _ in range(5):  # repeated application beyond the cap
            dataset, _ = xp.expand_dataset(dataset, 1.0, rng,
                                           gw.MockGenerator(seed=5),
                                           cal.ScriptedChecker(), stub_pool,
                                           session_store)
            by_id.update({s.id: s for s in dataset})
        depths = [s.difficulty_depth for s in dataset]
        assert max(depths) == 3
        for s in dataset:
            node = s
            while node.provenance.parent is not None:
                node = by_id[node.provenance.parent]
            assert node.difficulty_depth == 0 and node.status == "verified"


def test_perception_sampler_statistics():
    with criterion("perception-sampler-statistics", budget_s=5.0):
        rng = random.Random(777)
        draws = [pc.sample_count(rng) for _ in range(10_000)]
        mean = statistics.mean(draws)
        std = statistics.pstdev(draws)
        assert 7.9 <= mean <= 8.1, mean
        assert 1.85 <= std <= 2.15, std
        assert all(2 <= d <= 20 for d in draws)


def test_perception_ground_truth(session_store, stub_pool):
    with criterion("perception-ground-truth", budget_s=120.0):
        rng = random.Random(31337)
        scenes = 0
        while scenes < 100:
            spec = pc.sample_scene(None, rng)
            ref, tags = pc.render_scene(spec, stub_pool)
            assert ref is not None
            for rel in spec.relations:
                assert pc.relation_holds(spec, rel, tol=0.5), rel
            items = pc.make_questions(spec, tags, rng)
            for item in items:
                if item["level"] != "surface":
                    continue
                label = item["question"].split("point ")[1].split(" ")[0]
                tag = next(t for t in tags if t.label == label)
                assert item["answer"] == f"({tag.x}, {tag.y})"  # bit-for-bit
            scenes += 1


def test_vote_gate_truth_table():
    with criterion("vote-gate-truth-table", budget_s=1.0):
        rows = 0
        for votes in itertools.product([False, True], repeat=5):
            expected = sum(votes) >= 3
            assert bn.expert_vote_gate(list(votes)) is expected  # tolerance 0
            rows += 1
        assert rows == 32


def test_harness_arithmetic(session_store, stub_pool):
    with criterion("harness-arithmetic", budget_s=10.0):
        from .test_bench import fixture_items
        items = fixture_items(session_store)
        scripted = {}
        hand = {"perception": (3, 4), "instruction": (1, 4), "reasoning": (2, 4)}
        for track, (n_correct, n_total) in hand.items():
            track_items = [i for i in items if i.track == track]
            assert len(track_items) == n_total
            for n, item in enumerate(track_items):
                scripted[item.question] = n < n_correct
        judge = bn.ScriptedJudge(scripted)
        candidates = {
            item.id: ({"id": item.id, "answer": "a"} if item.track == "reasoning"
                      else {"id": item.id, "code": "mark"})
            for item in items
        }
        report = bn.evaluate_benchmark(items, candidates, stub_pool, judge, judge)
        assert report.per_track["perception"]["accuracy"] == 75.0
        assert report.per_track["instruction"]["accuracy"] == 25.0
        assert report.per_track["reasoning"]["accuracy"] == 50.0
        text = bn.render_report(report, method="fixture")
        header, row = text.split("\n")[0], text.split("\n")[1]
        assert ("Perception" in header
                and "Instruction-Guided Interaction" in header
                and "Interactive Reasoning" in header)
        assert "75.0" in row and "25.0" in row and "50.0" in row


def test_offline_end_to_end(tmp_path):
    with criterion("offline-end-to-end", budget_s=300.0):
        run_dir = tmp_path / "e2e"
        code = cli.main([
            "evolve",
            "--set", f"output_dir={run_dir}",
            "--set", "executor.worker=stub",
            "--set", "flywheel.rounds=2",
            "--set", "generator=mock:21",
            "--set", "checker=mock:pass",
            "--seed", "21",
        ])
        assert code == 0
        verified = dm.shard_read(run_dir / "d_verified.jsonl")
        assert len(verified) >= 8
        for sample in verified:
            assert sample.status == "verified"
            assert sample.original_image is not None
            for step in sample.trajectory.steps:
                if step.code is not None:
                    assert step.execution is not None
                    assert step.execution.status == "ok"
                    assert step.output_image is not None
