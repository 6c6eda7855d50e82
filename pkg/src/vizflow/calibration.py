"""Coordinated calibration: three-criterion checking and question repair.

The checker judges answer correctness, original-image validity, and
intermediate-state coherence. Repair applies only to the one recoverable
defect class: wrong textual answer over valid images. A reasoning chain
is guided by its question, so repair reconstructs the question and answer
from the visual states instead of regenerating the sample. Non-repairable
failures are rejected here; regeneration belongs to the flywheel.

Repaired samples re-enter the same routing and can still be rejected,
which the audit log records per iteration.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

from . import datamodel as dm
from .gateway import GatewayError, GatewayParseError, GenRequest

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 3


class CalibrationError(Exception):
    pass


@dataclass(frozen=True)
class CheckVerdict:
    answer_ok: bool
    image_ok: bool
    states_ok: bool
    rationale: str = ""
    checker: str = "unknown"
    attempt: int = 1

    @property
    def retained(self) -> bool:
        return self.answer_ok and self.image_ok and self.states_ok

    @property
    def repairable(self) -> bool:
        return (not self.answer_ok) and self.image_ok and self.states_ok

    def to_dict(self) -> dict:
        return {
            "answer_ok": self.answer_ok,
            "image_ok": self.image_ok,
            "states_ok": self.states_ok,
            "rationale": self.rationale,
            "checker": self.checker,
            "attempt": self.attempt,
        }


class Checker(Protocol):
    checker_id: str

    def check(self, sample: dm.Sample) -> CheckVerdict: ...


class Repairer(Protocol):
    def repair(self, request: GenRequest) -> tuple[str, str]: ...


class ScriptedChecker:
    """Deterministic checker driven by a rule function; the offline double."""

    def __init__(self, rule: Callable[[dm.Sample], tuple[bool, bool, bool]] | None = None,
                 checker_id: str = "scripted"):
        self._rule = rule or (lambda s: (True, True, True))
        self.checker_id = checker_id

    def check(self, sample: dm.Sample) -> CheckVerdict:
        answer_ok, image_ok, states_ok = self._rule(sample)
        return CheckVerdict(answer_ok, image_ok, states_ok,
                            rationale="scripted rule", checker=self.checker_id)


class RemoteChecker:
    """Checker backed by a judge endpoint through the gateway parser."""

    def __init__(self, client, checker_id: str | None = None):
        self._client = client
        self.checker_id = checker_id or getattr(client, "generator_id", "remote")

    def check(self, sample: dm.Sample) -> CheckVerdict:
        from .gateway import parse_verdict_output
        request = GenRequest(mode="check", payload=sample_payload(sample),
                             tag=f"check:{sample.id[:12]}")
        text = self._client._complete(request, ())
        verdict = parse_verdict_output(text)
        return CheckVerdict(verdict["answer_ok"], verdict["image_ok"],
                            verdict["states_ok"], rationale=verdict["rationale"],
                            checker=self.checker_id)


def sample_payload(sample: dm.Sample) -> dict:
    """The sample view handed to judge and repair prompts."""
    return {
        "question": sample.question,
        "answer": sample.answer,
        "original_code": sample.original_code,
        "original_image": sample.original_image.digest if sample.original_image else None,
        "steps": [
            {"thought": s.thought, "code": s.code,
             "image": s.output_image.digest if s.output_image else None}
            for s in sample.trajectory.steps
        ],
        "difficulty_depth": sample.difficulty_depth,
    }


def _require_rendered(sample: dm.Sample) -> None:
    if sample.original_image is None:
        raise CalibrationError(f"sample {sample.id[:12]} has no rendered original image")
    for i, step in enumerate(sample.trajectory.steps, start=1):
        if step.code is not None and step.output_image is None:
            raise CalibrationError(
                f"sample {sample.id[:12]} step {i} has code but no rendered image")


def check_sample(sample: dm.Sample, checker: Checker, attempt: int = 1) -> CheckVerdict:
    """Run the three-criterion check; the sample must be fully rendered."""
    _require_rendered(sample)
    verdict = checker.check(sample)
    return replace(verdict, attempt=attempt)


def repair_sample(sample: dm.Sample, verdict: CheckVerdict, repairer: Repairer,
                  store: dm.ImageStore | None = None) -> dm.Sample:
    """Reconstruct question and answer from the visual states.

    Only the (answer wrong, image valid, states coherent) verdict routes
    here; anything else is a precondition error. All image digests are
    preserved by construction.
    """
    if not verdict.repairable:
        raise CalibrationError(
            "repair applies only to verdicts with answer_ok=false, "
            f"image_ok=true, states_ok=true; got {verdict.to_dict()}")
    request = GenRequest(mode="repair", payload=sample_payload(sample),
                         tag=f"repair:{sample.id[:12]}")
    question, answer = repairer.repair(request)
    if not question or not answer:
        raise CalibrationError("repair generation returned an empty question or answer")
    repaired = replace(
        sample,
        question=question,
        answer=answer,
        trajectory=replace(sample.trajectory, final_answer=answer),
        status="repaired",
        provenance=replace(sample.provenance, parent=sample.id, check=None),
    )
    return dm.canonicalize(repaired, store)


@dataclass
class CalibrationResult:
    verified: list[dm.Sample]
    rejected: list[dm.Sample]
    audit: list[dict]


class AuditLog:
    """Append-only line-delimited audit sink, safe for concurrent writers."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, entries: list[dict]) -> None:
        if not self.path:
            return
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                for e in entries:
                    fh.write(json.dumps(e, ensure_ascii=False) + "\n")


def _calibrate_one(sample: dm.Sample, checker: Checker, repairer: Repairer | None,
                   max_iters: int, store: dm.ImageStore | None,
                   ) -> tuple[str, dm.Sample, list[dict]]:
    audit: list[dict] = []
    current = sample
    for attempt in range(1, max_iters + 1):
        try:
            verdict = check_sample(current, checker, attempt=attempt)
        except GatewayParseError as exc:
            audit.append({"sample": current.id, "iteration": attempt,
                          "verdict": None, "action": f"unparseable-verdict: {exc}"})
            continue  # counts as a failed attempt
        except (CalibrationError, GatewayError) as exc:
            audit.append({"sample": current.id, "iteration": attempt,
                          "verdict": None, "action": f"error: {exc}"})
            return "rejected", _finalize(current, None, "rejected", store), audit
        if verdict.retained:
            audit.append({"sample": current.id, "iteration": attempt,
                          "verdict": verdict.to_dict(), "action": "verified"})
            return "verified", _finalize(current, verdict, "verified", store), audit
        if verdict.repairable and repairer is not None and attempt < max_iters:
            try:
                repaired = repair_sample(current, verdict, repairer, store)
            except (CalibrationError, GatewayError) as exc:
                audit.append({"sample": current.id, "iteration": attempt,
                              "verdict": verdict.to_dict(),
                              "action": f"repair-failed: {exc}"})
                return "rejected", _finalize(current, verdict, "rejected", store), audit
            audit.append({"sample": current.id, "iteration": attempt,
                          "verdict": verdict.to_dict(), "action": "repaired"})
            current = repaired
            continue
        audit.append({"sample": current.id, "iteration": attempt,
                      "verdict": verdict.to_dict(), "action": "rejected"})
        return "rejected", _finalize(current, verdict, "rejected", store), audit
    audit.append({"sample": current.id, "iteration": max_iters,
                  "verdict": None, "action": "rejected: iteration budget exhausted"})
    return "rejected", _finalize(current, None, "rejected", store), audit


def _finalize(sample: dm.Sample, verdict: CheckVerdict | None, status: str,
              store: dm.ImageStore | None) -> dm.Sample:
    out = replace(
        sample, status=status,
        provenance=replace(sample.provenance,
                           check=verdict.to_dict() if verdict else None))
    return dm.canonicalize(out, store)


def calibrate(batch: list[dm.Sample], checker: Checker,
              repairer: Repairer | None = None,
              max_iters: int = DEFAULT_MAX_ITERS,
              store: dm.ImageStore | None = None,
              audit_log: AuditLog | None = None,
              worker_budget: int = 8) -> CalibrationResult:
    """Route every sample to verified or rejected within the iteration budget.

    Items are independent and fan out under the worker budget; the result
    preserves input order within each of the two output lists, and the two
    lists partition the batch exactly.
    """
    verified: list[dm.Sample] = []
    rejected: list[dm.Sample] = []
    audit: list[dict] = []
    if batch:
        with ThreadPoolExecutor(max_workers=min(worker_budget, len(batch))) as tpe:
            futures = [tpe.submit(_calibrate_one, s, checker, repairer, max_iters, store)
                       for s in batch]
            for fut in futures:
                outcome, out_sample, entries = fut.result()
                audit.extend(entries)
                (verified if outcome == "verified" else rejected).append(out_sample)
    if audit_log is not None:
        audit_log.write(audit)
    return CalibrationResult(verified=verified, rejected=rejected, audit=audit)
