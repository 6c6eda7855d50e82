"""Progressive difficulty expansion: parallel and sequential step extension.

An extension appends one reasoning step whose code executes against the
parent's final image and re-states the question. Parallel extensions
introduce constructions independent of prior auxiliary work; sequential
extensions must build on an entity introduced by an earlier step. Entity
linkage is machine-checkable through the ``# entity: <label>`` comment
convention emitted by the prompts.

Depth counts applied extensions and is hard-capped at 3 in total;
per-strategy counts are reported alongside.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace

from . import datamodel as dm
from .calibration import Checker, Repairer, calibrate, sample_payload
from .executor import ExecutionRequest, WorkerPool
from .gateway import ExtensionDraft, GenRequest, extract_entities

log = logging.getLogger(__name__)

MAX_DEPTH = dm.MAX_DIFFICULTY_DEPTH
EXTENDABLE_STATUSES = ("verified", "expanded")
STRATEGIES = ("parallel", "sequential")


class ExpansionError(Exception):
    pass


@dataclass(frozen=True)
class ExtensionPlan:
    strategy: str
    parent_id: str
    new_code: str
    new_reasoning: str
    references: tuple[str, ...]


def entity_scopes(sample: dm.Sample) -> tuple[set[str], set[str]]:
    """Entity labels defined by the original figure vs by prior steps."""
    original = set(extract_entities(sample.original_code))
    from_steps: set[str] = set()
    for step in sample.trajectory.steps:
        if step.code:
            from_steps.update(extract_entities(step.code))
    return original, from_steps


def validate_plan(plan: ExtensionPlan, sample: dm.Sample) -> None:
    """Enforce the strategy reference rules against the parent's entities."""
    original, from_steps = entity_scopes(sample)
    known = original | from_steps
    refs = set(plan.references)
    if not refs:
        raise ExpansionError("extension plan references no entities")
    unknown = refs - known
    if unknown:
        raise ExpansionError(f"plan references unknown entities: {sorted(unknown)}")
    if plan.strategy == "parallel":
        step_refs = refs & (from_steps - original)
        if step_refs:
            raise ExpansionError(
                f"parallel plan may reference only original-figure entities, "
                f"but uses step entities {sorted(step_refs)}")
    elif plan.strategy == "sequential":
        if not refs & from_steps:
            raise ExpansionError(
                "sequential plan must reference at least one entity introduced "
                "by a prior step")
    else:
        raise ExpansionError(f"unknown strategy {plan.strategy!r}")


def _final_image(sample: dm.Sample) -> dm.ImageRef:
    for step in reversed(sample.trajectory.steps):
        if step.output_image is not None:
            return step.output_image
    if sample.original_image is None:
        raise ExpansionError(f"sample {sample.id[:12]} has no rendered image")
    return sample.original_image


def _extend(sample: dm.Sample, strategy: str, generator, pool: WorkerPool,
            store: dm.ImageStore, timeout_ms: int = 10_000) -> dm.Sample:
    if sample.status not in EXTENDABLE_STATUSES:
        raise ExpansionError(
            f"only verified or expanded samples can be extended, not {sample.status!r}")
    if sample.difficulty_depth >= MAX_DEPTH:
        raise ExpansionError(f"difficulty depth cap {MAX_DEPTH} reached")
    request = GenRequest(mode=f"extend_{strategy}", payload=sample_payload(sample),
                         tag=f"ext:{strategy}:{sample.id[:12]}")
    draft: ExtensionDraft = generator.extend(request)
    plan = ExtensionPlan(strategy=strategy, parent_id=sample.id,
                         new_code=draft.code, new_reasoning=draft.thought,
                         references=tuple(draft.references))
    validate_plan(plan, sample)

    result = pool.execute(ExecutionRequest(
        code=plan.new_code, input_images=[("img0", _final_image(sample))],
        timeout_ms=timeout_ms))
    if result.status != "ok" or not result.output_images:
        raise ExpansionError(
            f"extension code failed ({result.status}): {result.trace.strip()[:200]}")
    new_step = dm.Step(
        thought=plan.new_reasoning, code=plan.new_code,
        output_image=result.output_images[-1],
        execution=dm.ExecutionSummary(status=result.status))
    child = replace(
        sample,
        question=draft.question,
        answer=draft.answer,
        trajectory=dm.Trajectory(steps=sample.trajectory.steps + (new_step,),
                                 final_answer=draft.answer),
        difficulty_depth=sample.difficulty_depth + 1,
        status="expanded",
        provenance=replace(sample.provenance, parent=sample.id, check=None),
    )
    return dm.canonicalize(child, store)


def extend_parallel(sample: dm.Sample, generator, pool: WorkerPool,
                    store: dm.ImageStore, **kwargs) -> dm.Sample:
    """Append a construction independent of existing auxiliary work."""
    return _extend(sample, "parallel", generator, pool, store, **kwargs)


def extend_sequential(sample: dm.Sample, generator, pool: WorkerPool,
                      store: dm.ImageStore, **kwargs) -> dm.Sample:
    """Append a construction that builds on a prior step's entity."""
    return _extend(sample, "sequential", generator, pool, store, **kwargs)


@dataclass
class ExpansionReport:
    attempted: int = 0
    parallel: int = 0
    sequential: int = 0
    survived: int = 0
    failed_extension: int = 0
    failed_validation: int = 0


def expand_dataset(verified: list[dm.Sample], fraction: float, rng: random.Random,
                   generator, checker: Checker, pool: WorkerPool,
                   store: dm.ImageStore, repairer: Repairer | None = None,
                   max_iters: int = 3) -> tuple[list[dm.Sample], ExpansionReport]:
    """Extend a sampled subset and merge parents with surviving children.

    Strategy is a uniform coin per extension (sequential falls back to
    parallel when the parent has no step entities to build on). Children
    are re-validated through calibration; parents are never mutated or
    dropped, and no child exceeds the depth cap.
    """
    report = ExpansionReport()
    eligible = [s for s in verified
                if s.status in EXTENDABLE_STATUSES and s.difficulty_depth < MAX_DEPTH]
    k = round(fraction * len(eligible))
    chosen = rng.sample(eligible, k) if k else []
    children: list[dm.Sample] = []
    for parent in chosen:
        strategy = rng.choice(STRATEGIES)
        _, step_entities = entity_scopes(parent)
        if strategy == "sequential" and not step_entities:
            strategy = "parallel"
        report.attempted += 1
        try:
            child = _extend(parent, strategy, generator, pool, store)
        except ExpansionError as exc:
            report.failed_extension += 1
            log.warning("extension of %s failed: %s", parent.id[:12], exc)
            continue
        setattr(report, strategy, getattr(report, strategy) + 1)
        children.append(child)
    if children:
        result = calibrate(children, checker, repairer=repairer,
                           max_iters=max_iters, store=store)
        survivors = []
        for child in result.verified:
            # keep expanded status and lineage; calibration's pass verdict
            # rides along in provenance.check
            kept = replace(child, status="expanded")
            survivors.append(dm.canonicalize(kept, store))
        report.failed_validation = len(result.rejected)
    else:
        survivors = []
    report.survived = len(survivors)
    return list(verified) + survivors, report
