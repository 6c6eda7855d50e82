"""Benchmark harness: item loading, track protocols, vote gate, aggregation.

Three tracks mirror the problem-solving ladder: perception (mark what you
see), instruction-guided interaction (perform a requested visual edit),
and interactive reasoning (answer outright). Code-producing tracks run
through the same sandbox as the rest of the pipeline and are judged
against the annotation image; reasoning answers are judged against gold.
Judges are pluggable clients — swapping one changes verdicts only, never
item routing. Candidate and annotation images are presented side by side,
and that choice is part of the report's config digest.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from . import datamodel as dm
from .executor import ExecutionRequest, WorkerPool

log = logging.getLogger(__name__)

TRACKS = ("perception", "instruction", "reasoning")
DOMAINS = ("Logical Reasoning", "Geometry", "Algebra", "Statistics")
FULL_SET_PER_TRACK = 500
REPORT_SCHEMA = "vizflow.bench.v1"
JUDGE_PRESENTATION = "side-by-side"


class BenchError(Exception):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"item {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class BenchItem:
    id: str
    track: str
    question: str
    image: dm.ImageRef
    annotation_image: dm.ImageRef | None = None
    gold_answer: str | None = None
    source: str = ""
    domain: str = "Geometry"

    def validate(self) -> None:
        if self.track not in TRACKS:
            raise BenchError(f"unknown track {self.track!r}")
        if self.domain not in DOMAINS:
            raise BenchError(f"unknown domain {self.domain!r}")
        if self.track in ("perception", "instruction") and self.annotation_image is None:
            raise BenchError(f"{self.track} item {self.id} lacks an annotation image")
        if self.track == "reasoning" and not self.gold_answer:
            raise BenchError(f"reasoning item {self.id} lacks a gold answer")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "track": self.track,
            "question": self.question,
            "image": self.image.to_dict(),
            "annotation_image": (self.annotation_image.to_dict()
                                 if self.annotation_image else None),
            "gold_answer": self.gold_answer,
            "source": self.source,
            "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchItem":
        return cls(
            id=d["id"],
            track=d["track"],
            question=d["question"],
            image=dm.ImageRef.from_dict(d["image"]),
            annotation_image=(dm.ImageRef.from_dict(d["annotation_image"])
                              if d.get("annotation_image") else None),
            gold_answer=d.get("gold_answer"),
            source=d.get("source", ""),
            domain=d.get("domain", "Geometry"),
        )


def write_benchmark(items: list[BenchItem], path: str | Path,
                    full_set: bool = False) -> dict:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [dm.canonical_json(it.to_dict()) for it in items]
    body = ("\n".join(lines) + "\n") if lines else ""
    path.write_text(body, encoding="utf-8")
    manifest = {
        "path": path.name,
        "count": len(items),
        "digest": dm.sha256_hex(body.encode("utf-8")),
        "schema_version": REPORT_SCHEMA,
        "full_set": full_set,
    }
    path.with_name(path.name + ".manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_benchmark(path: str | Path) -> tuple[list[BenchItem], list[str]]:
    """Load and schema-validate items; returns (items, warnings).

    A manifest flagged ``full_set`` is expected to carry exactly 500 items
    per track; fixtures never set the flag and load silently.
    """
    path = Path(path)
    if not path.exists():
        raise BenchError(f"benchmark file {path} does not exist")
    items: list[BenchItem] = []
    for i, raw in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not raw.strip():
            continue
        try:
            item = BenchItem.from_dict(json.loads(raw))
            item.validate()
        except (json.JSONDecodeError, KeyError, BenchError) as exc:
            raise BenchError(f"schema violation: {exc}", index=i) from None
        items.append(item)
    warnings: list[str] = []
    mpath = path.with_name(path.name + ".manifest.json")
    if mpath.exists():
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("full_set"):
            counts = {t: sum(1 for it in items if it.track == t) for t in TRACKS}
            if any(c != FULL_SET_PER_TRACK for c in counts.values()):
                warnings.append(
                    f"full-set benchmark expected {FULL_SET_PER_TRACK} per track, "
                    f"got {counts}")
    for w in warnings:
        log.warning("%s", w)
    return items, warnings


def expert_vote_gate(votes: list[bool]) -> bool:
    """Inclusion rule used at construction time: at least 3 of exactly 5."""
    if len(votes) != 5:
        raise BenchError(f"expert vote gate needs exactly 5 votes, got {len(votes)}")
    return sum(bool(v) for v in votes) >= 3


# --- judges -------------------------------------------------------------------

class ImageJudge(Protocol):
    judge_id: str

    def judge_images(self, question: str, candidate: dm.ImageRef,
                     annotation: dm.ImageRef, track: str) -> bool: ...


class AnswerJudge(Protocol):
    judge_id: str

    def judge_answer(self, question: str, candidate: str, gold: str) -> bool: ...


class ScriptedJudge:
    """Offline judge double: verdicts scripted per question, with sensible
    fallbacks (digest equality for images, normalized match for answers)."""

    def __init__(self, verdicts: dict[str, bool] | None = None,
                 judge_id: str = "scripted"):
        self.verdicts = verdicts or {}
        self.judge_id = judge_id

    def judge_images(self, question: str, candidate: dm.ImageRef,
                     annotation: dm.ImageRef, track: str) -> bool:
        if question in self.verdicts:
            return self.verdicts[question]
        return candidate.digest == annotation.digest

    def judge_answer(self, question: str, candidate: str, gold: str) -> bool:
        if question in self.verdicts:
            return self.verdicts[question]
        from .rollout import answers_match
        return answers_match(candidate, gold)


class RemoteJudge:
    """Judge backed by a chat endpoint; sends both images side by side."""

    def __init__(self, config, store: dm.ImageStore, judge_id: str | None = None):
        self.config = config
        self.store = store
        self.judge_id = judge_id or f"remote:{config.model}"

    def _ask(self, template_id: str, payload: str,
             images: list[dm.ImageRef]) -> bool:
        import base64
        from .gateway import TEMPLATES, complete, parse_match_output
        tpl = TEMPLATES[template_id]
        content: list[dict] = [{"type": "text",
                                "text": tpl["user"].format(payload=payload)}]
        for ref in images:
            b64 = base64.b64encode(self.store.get(ref)).decode("ascii")
            content.append({"type": "image_url",
                            "image_url": {"url": f"data:image/png;base64,{b64}"}})
        messages = [{"role": "system", "content": tpl["system"]},
                    {"role": "user", "content": content}]
        return parse_match_output(complete(messages, self.config))

    def judge_images(self, question: str, candidate: dm.ImageRef,
                     annotation: dm.ImageRef, track: str) -> bool:
        template = ("judge_perception-v1" if track == "perception"
                    else "judge_instruction-v1")
        return self._ask(template, question, [candidate, annotation])

    def judge_answer(self, question: str, candidate: str, gold: str) -> bool:
        payload = (f"Question:\n{question}\n\nCandidate answer:\n{candidate}\n\n"
                   f"Gold answer:\n{gold}")
        return self._ask("judge_reasoning-v1", payload, [])


# --- track protocols ------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    item_id: str
    track: str
    outcome: str  # correct | incorrect | unscored
    reason: str = ""

    def to_dict(self) -> dict:
        return {"item": self.item_id, "track": self.track,
                "outcome": self.outcome, "reason": self.reason}


def _eval_code_track(item: BenchItem, candidate_code: str, pool: WorkerPool,
                     judge: ImageJudge) -> Verdict:
    assert item.annotation_image is not None
    result = pool.execute(ExecutionRequest(
        code=candidate_code, input_images=[("img0", item.image)]))
    if result.status != "ok" or not result.output_images:
        return Verdict(item.id, item.track, "incorrect",
                       reason=f"execution: {result.status}")
    try:
        match = judge.judge_images(item.question, result.output_images[-1],
                                   item.annotation_image, item.track)
    except Exception as exc:
        log.warning("judge failure on %s: %s", item.id, exc)
        return Verdict(item.id, item.track, "unscored", reason=f"judge: {exc}")
    return Verdict(item.id, item.track, "correct" if match else "incorrect")


def eval_perception(item: BenchItem, candidate_code: str, pool: WorkerPool,
                    judge: ImageJudge) -> Verdict:
    """Run the candidate's marking code and judge it against the annotation."""
    if item.track != "perception":
        raise BenchError(f"item {item.id} is not on the perception track")
    return _eval_code_track(item, candidate_code, pool, judge)


def eval_instruction(item: BenchItem, candidate_code: str, pool: WorkerPool,
                     judge: ImageJudge) -> Verdict:
    """Run the candidate's interaction code and judge it against the annotation."""
    if item.track != "instruction":
        raise BenchError(f"item {item.id} is not on the instruction track")
    return _eval_code_track(item, candidate_code, pool, judge)


def eval_reasoning(item: BenchItem, candidate_answer: str,
                   judge: AnswerJudge) -> Verdict:
    """Judge the candidate answer against gold."""
    if item.track != "reasoning":
        raise BenchError(f"item {item.id} is not on the reasoning track")
    if not candidate_answer.strip():
        return Verdict(item.id, item.track, "incorrect", reason="empty answer")
    try:
        match = judge.judge_answer(item.question, candidate_answer,
                                   item.gold_answer or "")
    except Exception as exc:
        log.warning("judge failure on %s: %s", item.id, exc)
        return Verdict(item.id, item.track, "unscored", reason=f"judge: {exc}")
    return Verdict(item.id, item.track, "correct" if match else "incorrect")


# --- aggregation ------------------------------------------------------------------

@dataclass
class EvalReport:
    per_track: dict[str, dict]
    verdicts: list[Verdict]
    judge_id: str
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "judge": self.judge_id,
            "presentation": JUDGE_PRESENTATION,
            "config_digest": self.config_digest,
            "per_track": self.per_track,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


def aggregate(verdicts: list[Verdict], judge_id: str = "unknown",
              config_digest: str = "") -> EvalReport:
    """Per-track accuracy at one decimal; unscored items excluded from
    denominators and reported separately."""
    if not any(v.outcome in ("correct", "incorrect") for v in verdicts):
        raise BenchError("aggregate needs at least one scored item")
    per_track: dict[str, dict] = {}
    for track in TRACKS:
        tv = [v for v in verdicts if v.track == track]
        correct = sum(1 for v in tv if v.outcome == "correct")
        incorrect = sum(1 for v in tv if v.outcome == "incorrect")
        unscored = sum(1 for v in tv if v.outcome == "unscored")
        scored = correct + incorrect
        per_track[track] = {
            "attempted": len(tv),
            "correct": correct,
            "incorrect": incorrect,
            "unscored": unscored,
            "accuracy": round(100.0 * correct / scored, 1) if scored else None,
        }
    return EvalReport(per_track=per_track, verdicts=verdicts,
                      judge_id=judge_id, config_digest=config_digest)


TRACK_HEADERS = {
    "perception": "Perception",
    "instruction": "Instruction-Guided Interaction",
    "reasoning": "Interactive Reasoning",
}


def render_report(report: EvalReport, method: str = "candidate") -> str:
    """Plain-text table with the three track columns side by side."""
    headers = [TRACK_HEADERS[t] for t in TRACKS]
    widths = [max(len(h), 6) for h in headers]
    cells = []
    for t, w in zip(TRACKS, widths):
        acc = report.per_track[t]["accuracy"]
        cells.append((f"{acc:.1f}" if acc is not None else "-").rjust(w))
    name_w = max(len("Method"), len(method))
    lines = [
        f"{'Method'.ljust(name_w)}  " + "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
        f"{method.ljust(name_w)}  " + "  ".join(cells),
        "",
        f"judge: {report.judge_id}   presentation: {JUDGE_PRESENTATION}"
        + (f"   config: {report.config_digest[:12]}" if report.config_digest else ""),
    ]
    for t in TRACKS:
        row = report.per_track[t]
        lines.append(f"  {TRACK_HEADERS[t]}: {row['correct']}/{row['correct'] + row['incorrect']}"
                     f" correct, {row['unscored']} unscored")
    return "\n".join(lines)


def write_verdicts(verdicts: list[Verdict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_dict(), ensure_ascii=False) + "\n")


def evaluate_benchmark(items: list[BenchItem], candidates: dict[str, dict],
                       pool: WorkerPool, image_judge: ImageJudge,
                       answer_judge: AnswerJudge, judge_id: str = "",
                       config_digest: str = "",
                       worker_budget: int = 8) -> EvalReport:
    """Evaluate every item with a candidate entry; missing entries are unscored.

    ``candidates`` maps item id to {"code": ...} for code tracks or
    {"answer": ...} for the reasoning track.
    """
    def run(item: BenchItem) -> Verdict:
        entry = candidates.get(item.id)
        if entry is None:
            return Verdict(item.id, item.track, "unscored", reason="no candidate")
        if item.track == "reasoning":
            return eval_reasoning(item, entry.get("answer", ""), answer_judge)
        code = entry.get("code", "")
        if not code:
            return Verdict(item.id, item.track, "incorrect", reason="no code")
        if item.track == "perception":
            return eval_perception(item, code, pool, image_judge)
        return eval_instruction(item, code, pool, image_judge)

    with ThreadPoolExecutor(max_workers=min(worker_budget, max(1, len(items)))) as tpe:
        verdicts = list(tpe.map(run, items))
    jid = judge_id or getattr(image_judge, "judge_id", "unknown")
    return aggregate(verdicts, judge_id=jid, config_digest=config_digest)
