import json

import pytest

from vizflow import calibration as cal
from vizflow import datamodel as dm
from vizflow import gateway as gw

from .conftest import make_sample


class EchoRepairer:
    """Repairs by prefixing the question; deterministic and image-free."""

    def repair(self, request: gw.GenRequest):
        payload = request.payload or {}
        return f"[repaired] {payload.get('question', '')}", "7"


def crafted_corpus(store):
    """20 items: 12 clean, 5 repairable (answer says 'broken-answer'),
    3 with invalid images (question says 'broken-image')."""
    samples = []
    for i in range(12):
        samples.append(make_sample(store, question=f"clean item {i}", answer="7"))
    for i in range(5):
        samples.append(make_sample(store, question=f"answer defect {i}",
                                   answer="broken-answer"))
    for i in range(3):
        samples.append(make_sample(store, question=f"broken-image defect {i}",
                                   answer="7"))
    return samples


def corpus_rule(sample):
    if "broken-image" in sample.question:
        return (True, False, True)
    if sample.answer == "broken-answer":
        return (False, True, True)
    return (True, True, True)


class TestCheckSample:
    def test_all_pass_mock(self, store):
        verdict = cal.check_sample(make_sample(store), cal.ScriptedChecker())
        assert (verdict.answer_ok, verdict.image_ok, verdict.states_ok) == \
            (True, True, True)
        assert verdict.retained

    def test_planted_defect_detected(self, store):
        checker = cal.ScriptedChecker(corpus_rule)
        sample = make_sample(store, answer="broken-answer")
        verdict = cal.check_sample(sample, checker)
        assert (verdict.answer_ok, verdict.image_ok, verdict.states_ok) == \
            (False, True, True)
        assert verdict.repairable and not verdict.retained

    def test_missing_step_image_is_precondition_error(self, store):
        sample = make_sample(store)
        broken_step = dm.Step(thought="t", code="c",
                              execution=dm.ExecutionSummary(status="error"))
        bad = dm.canonicalize(dm.Sample.from_dict({
            **json.loads(sample.serialize()),
            "trajectory": {"steps": [broken_step.to_dict()], "final_answer": "7"},
        }))
        with pytest.raises(cal.CalibrationError, match="no rendered image"):
            cal.check_sample(bad, cal.ScriptedChecker())


class TestRepairSample:
    def test_repair_preserves_images_and_links_parent(self, store):
        sample = make_sample(store, question="what length?", answer="broken-answer")
        verdict = cal.check_sample(sample, cal.ScriptedChecker(corpus_rule))
        repaired = cal.repair_sample(sample, verdict, EchoRepairer(), store)
        assert repaired.status == "repaired"
        assert repaired.question.startswith("[repaired]")
        assert repaired.provenance.parent == sample.id
        assert repaired.original_image == sample.original_image
        step_digests = [s.output_image.digest for s in repaired.trajectory.steps]
        assert step_digests == [s.output_image.digest
                                for s in sample.trajectory.steps]

    def test_non_repairable_verdict_refused(self, store):
        sample = make_sample(store)
        verdict = cal.CheckVerdict(answer_ok=False, image_ok=False, states_ok=True)
        with pytest.raises(cal.CalibrationError, match="repair applies only"):
            cal.repair_sample(sample, verdict, EchoRepairer(), store)

    def test_repaired_sample_recheck_retained(self, store):
        sample = make_sample(store, answer="broken-answer")
        verdict = cal.check_sample(sample, cal.ScriptedChecker(corpus_rule))
        repaired = cal.repair_sample(sample, verdict, EchoRepairer(), store)
        assert cal.check_sample(repaired, cal.ScriptedChecker(corpus_rule)).retained


class TestCalibrate:
    def test_crafted_corpus_routing(self, store, tmp_path):
        batch = crafted_corpus(store)
        audit_log = cal.AuditLog(tmp_path / "audit.jsonl")
        result = cal.calibrate(batch, cal.ScriptedChecker(corpus_rule),
                               repairer=EchoRepairer(), store=store,
                               audit_log=audit_log)
        assert (len(result.verified), len(result.rejected)) == (17, 3)
        assert all(s.status == "verified" for s in result.verified)
        assert all(s.status == "rejected" for s in result.rejected)
        # verified carry the passing verdict in provenance
        for s in result.verified:
            check = s.provenance.check
            assert check and check["answer_ok"] and check["image_ok"] \
                and check["states_ok"]
        # audit file written, one record per transition
        lines = (tmp_path / "audit.jsonl").read_text().strip().split("\n")
        assert len(lines) == len(result.audit)
        for line in lines:
            entry = json.loads(line)
            assert {"sample", "iteration", "verdict", "action"} <= set(entry)

    def test_partition_exact(self, store):
        batch = crafted_corpus(store)
        result = cal.calibrate(batch, cal.ScriptedChecker(corpus_rule),
                               repairer=EchoRepairer(), store=store)
        assert len(result.verified) + len(result.rejected) == len(batch)

    def test_empty_batch(self, store):
        result = cal.calibrate([], cal.ScriptedChecker(), store=store)
        assert result.verified == [] and result.rejected == [] and result.audit == []

    def test_never_converging_repair_rejected_after_three_iterations(self, store):
        sample = make_sample(store, answer="broken-answer")

        class StubbornRepairer:
            def repair(self, request):
                return request.payload["question"], "broken-answer"

        checker = cal.ScriptedChecker(corpus_rule)
        result = cal.calibrate([sample], checker, repairer=StubbornRepairer(),
                               store=store, max_iters=3)
        assert len(result.rejected) == 1
        iters = [e["iteration"] for e in result.audit]
        assert max(iters) == 3
        checks = [e for e in result.audit if e["verdict"] is not None]
        assert len(checks) == 3

    def test_images_preserved_through_repair_loop(self, store):
        batch = crafted_corpus(store)
        originals = {}
        for s in batch:
            originals[s.question] = (
                s.original_image.digest,
                tuple(st.output_image.digest for st in s.trajectory.steps))
        result = cal.calibrate(batch, cal.ScriptedChecker(corpus_rule),
                               repairer=EchoRepairer(), store=store)
        for s in result.verified:
            question = s.question.removeprefix("[repaired] ")
            assert originals[question] == (
                s.original_image.digest,
                tuple(st.output_image.digest for st in s.trajectory.steps))

    def test_unparseable_verdict_counts_as_attempt(self, store):
        sample = make_sample(store)
        calls = {"n": 0}

        class FlakyChecker:
            checker_id = "flaky"

            def check(self, s):
                calls["n"] += 1
                if calls["n"] == 1:
                    raise gw.GatewayParseError("verdict soup", block="verdict")
                return cal.CheckVerdict(True, True, True, checker=self.checker_id)

        result = cal.calibrate([sample], FlakyChecker(), store=store, max_iters=3)
        assert len(result.verified) == 1
        assert result.audit[0]["action"].startswith("unparseable")
        assert result.audit[1]["action"] == "verified"

    def test_remote_checker_parses_gateway_verdict(self, store):
        sample = make_sample(store)

        class CannedClient:
            generator_id = "remote:test"

            def _complete(self, request, context):
                assert request.mode == "check"
                return ("<<<verdict>>>\nanswer_ok: true\nimage_ok: true\n"
                        "states_ok: true\nrationale: looks right\n<<</verdict>>>")

        verdict = cal.RemoteChecker(CannedClient()).check(sample)
        assert verdict.retained and verdict.rationale == "looks right"
