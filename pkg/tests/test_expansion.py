import random

import pytest

from vizflow import calibration as cal
from vizflow import datamodel as dm
from vizflow import expansion as xp
from vizflow import gateway as gw

from .conftest import make_sample


@pytest.fixture
def verified_sample(session_store):
    return make_sample(session_store, status="verified")


def scripted_extender(references, code_entity="aux_box_1"):
    class Extender:
        def extend(self, request):
            return gw.ExtensionDraft(
                question="extended question?",
                answer="3",
                thought="add one construction",
                code=f"# entity: {code_entity}\nprint('extend')",
                references=list(references),
            )
    return Extender()


class TestExtend:
    def test_parallel_extension_depth_and_step(self, verified_sample, session_store,
                                               stub_pool):
        child = xp.extend_parallel(verified_sample, scripted_extender(["figure"]),
                                   stub_pool, session_store)
        assert child.difficulty_depth == verified_sample.difficulty_depth + 1
        assert child.status == "expanded"
        assert child.provenance.parent == verified_sample.id
        assert len(child.trajectory.steps) == len(verified_sample.trajectory.steps) + 1
        assert child.question == "extended question?"

    def test_parent_unchanged_by_extension(self, verified_sample, session_store,
                                           stub_pool):
        before = verified_sample.serialize()
        xp.extend_parallel(verified_sample, scripted_extender(["figure"]),
                           stub_pool, session_store)
        assert verified_sample.serialize() == before

    def test_depth_cap_precondition(self, session_store, stub_pool):
        capped = make_sample(session_store, status="expanded", depth=3)
        with pytest.raises(xp.ExpansionError, match="cap"):
            xp.extend_parallel(capped, scripted_extender(["figure"]),
                               stub_pool, session_store)

    def test_unverified_parent_refused(self, session_store, stub_pool):
        raw = make_sample(session_store, status="generated")
        with pytest.raises(xp.ExpansionError, match="verified or expanded"):
            xp.extend_parallel(raw, scripted_extender(["figure"]),
                               stub_pool, session_store)

    def test_failing_extension_code_leaves_parent(self, verified_sample,
                                                  session_store, stub_pool):
        class BrokenExtender:
            def extend(self, request):
                return gw.ExtensionDraft(question="q", answer="a", thought="t",
                                         code="#STUB:ERROR", references=["figure"])

        with pytest.raises(xp.ExpansionError, match="failed"):
            xp.extend_parallel(verified_sample, BrokenExtender(), stub_pool,
                               session_store)

    def test_parallel_rejects_step_entity_reference(self, verified_sample,
                                                    session_store, stub_pool):
        with pytest.raises(xp.ExpansionError, match="original-figure"):
            xp.extend_parallel(verified_sample, scripted_extender(["mark_0"]),
                               stub_pool, session_store)

    def test_sequential_accepts_step_entity(self, verified_sample, session_store,
                                            stub_pool):
        child = xp.extend_sequential(verified_sample, scripted_extender(["mark_0"]),
                                     stub_pool, session_store)
        assert child.difficulty_depth == 1

    def test_sequential_rejects_original_only_reference(self, verified_sample,
                                                        session_store, stub_pool):
        with pytest.raises(xp.ExpansionError, match="prior step"):
            xp.extend_sequential(verified_sample, scripted_extender(["figure"]),
                                 stub_pool, session_store)

    def test_unknown_entity_rejected(self, verified_sample, session_store,
                                     stub_pool):
        with pytest.raises(xp.ExpansionError, match="unknown entities"):
            xp.extend_parallel(verified_sample, scripted_extender(["phantom"]),
                               stub_pool, session_store)

    def test_two_sequential_extensions_reach_cap(self, session_store, stub_pool):
        parent = make_sample(session_store, status="verified", depth=1)
        ext = gw.MockGenerator(seed=4)
        child = xp.extend_sequential(parent, ext, stub_pool, session_store)
        grandchild = xp.extend_sequential(child, ext, stub_pool, session_store)
        assert grandchild.difficulty_depth == 3
        with pytest.raises(xp.ExpansionError, match="cap"):
            xp.extend_sequential(grandchild, ext, stub_pool, session_store)


class TestExpandDataset:
    def test_fraction_zero_identity(self, session_store, stub_pool, rng):
        batch = [make_sample(session_store, question=f"q{i}", status="verified")
                 for i in range(4)]
        merged, report = xp.expand_dataset(batch, 0.0, rng, gw.MockGenerator(seed=2),
                                           cal.ScriptedChecker(), stub_pool,
                                           session_store)
        assert merged == batch and report.attempted == 0

    def test_fraction_one_doubles_with_allpass_checker(self, session_store,
                                                       stub_pool, rng):
        batch = [make_sample(session_store, question=f"q{i}", status="verified")
                 for i in range(10)]
        merged, report = xp.expand_dataset(batch, 1.0, rng, gw.MockGenerator(seed=2),
                                           cal.ScriptedChecker(), stub_pool,
                                           session_store)
        assert len(merged) == 20
        assert report.attempted == 10 and report.survived == 10
        assert report.parallel + report.sequential == 10

    def test_failed_revalidation_excludes_child_keeps_parent(self, session_store,
                                                             stub_pool, rng):
        batch = [make_sample(session_store, question=f"q{i}", status="verified")
                 for i in range(6)]
        checker = cal.ScriptedChecker(
            lambda s: (s.status != "expanded", True, True))
        merged, report = xp.expand_dataset(batch, 1.0, rng, gw.MockGenerator(seed=2),
                                           checker, stub_pool, session_store)
        assert merged == batch
        assert report.survived == 0 and report.failed_validation == 6

    def test_repeated_application_respects_cap_and_lineage(self, session_store,
                                                           stub_pool):
        rng = random.Random(77)
        dataset = [make_sample(session_store, question=f"q{i}", status="verified")
                   for i in range(6)]
        by_id = {s.id: s for s in dataset}
        for _ in range(5):
            dataset, _ = xp.expand_dataset(dataset, 1.0, rng,
                                           gw.MockGenerator(seed=2),
                                           cal.ScriptedChecker(), stub_pool,
                                           session_store)
            by_id.update({s.id: s for s in dataset})
        assert max(s.difficulty_depth for s in dataset) == 3
        roots = 0
        for s in dataset:
            node = s
            hops = 0
            while node.provenance.parent is not None:
                node = by_id[node.provenance.parent]
                hops += 1
                assert hops <= 10
            assert node.difficulty_depth == 0
            assert node.status == "verified"
            roots += 1
        assert roots == len(dataset)

    def test_strategy_counts_recorded(self, session_store, stub_pool):
        rng = random.Random(5)
        batch = [make_sample(session_store, question=f"q{i}", status="verified")
                 for i in range(12)]
        _, report = xp.expand_dataset(batch, 1.0, rng, gw.MockGenerator(seed=2),
                                      cal.ScriptedChecker(), stub_pool,
                                      session_store)
        assert report.parallel > 0 and report.sequential > 0
