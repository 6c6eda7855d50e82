"""Constructive co-evolution loop: grow knowledge and tools while accumulating data.

Each round freezes both sets, generates from knowledge combos and tool
combos (concurrently), renders every candidate's code through the sandbox
before acceptance, then applies the knowledge expansion followed by the
tool expansion. Unrenderable code is a generation failure, so the render
gate lives here rather than in calibration.

State checkpoints after every round; a resumed run reproduces the exact
final manifest digest of an uninterrupted run when the generator is the
deterministic mock. Per-round randomness is derived by hashing the master
seed with the round and side labels, which is what makes resume replay
exact without serializing generator state.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import datamodel as dm
from . import forest as ft
from .executor import ExecutionRequest, RenderError, WorkerPool, render_original
from .gateway import GenBatch, GenRequest, SampleDraft

log = logging.getLogger(__name__)

MAX_ROUNDS_CAP = 16
CHECKPOINT_SCHEMA = "vizflow.flywheel.v1"


class FlywheelError(Exception):
    pass


@dataclass
class FlywheelConfig:
    rounds: int = 2
    combos_per_side: int = 1
    arity_choices: tuple[int, ...] = (1, 2, 3)
    dedup_threshold: float = ft.DEFAULT_DEDUP_THRESHOLD
    seed: int = 0
    render_timeout_ms: int = 10_000
    worker_budget: int = 8

    def __post_init__(self) -> None:
        if self.rounds < 0 or self.rounds > MAX_ROUNDS_CAP:
            raise FlywheelError(f"rounds must be in [0, {MAX_ROUNDS_CAP}]")
        if self.combos_per_side < 1:
            raise FlywheelError("combos_per_side must be >= 1")


@dataclass
class RoundReport:
    round: int
    new_concepts: int
    new_tools: int
    samples_accepted: int
    samples_dropped: int
    k_total: int
    t_total: int
    d_total: int


@dataclass
class FlywheelResult:
    forest: ft.KnowledgeForest
    tools: ft.ToolSet
    manifest: dict[str, Any]
    growth: list[RoundReport]
    samples: list[dm.Sample] = field(default_factory=list)


def _rng_for(seed: int, label: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{label}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _pick_arity(rng: random.Random, choices: tuple[int, ...], pool: int) -> int:
    usable = [a for a in choices if a <= pool]
    if not usable:
        usable = [1]
    return rng.choice(usable)


def render_draft(draft: SampleDraft, pool: WorkerPool, store: dm.ImageStore,
                 refs: tuple[tuple[str, ...], tuple[str, ...]],
                 generator_id: str, round_index: int,
                 timeout_ms: int = 10_000) -> dm.Sample:
    """Render a draft's figure code and every step; raises on any failure."""
    original_ref = render_original(draft.original_code, pool, timeout_ms=timeout_ms)
    current = original_ref
    steps: list[dm.Step] = []
    for thought, code in draft.steps:
        if code is None:
            steps.append(dm.Step(thought=thought))
            continue
        result = pool.execute(ExecutionRequest(
            code=code, input_images=[("img0", current)], timeout_ms=timeout_ms))
        if result.status != "ok" or not result.output_images:
            raise RenderError(f"step execution failed ({result.status}): "
                              f"{result.trace.strip()[:200]}")
        current = result.output_images[-1]
        steps.append(dm.Step(
            thought=thought, code=code, output_image=current,
            execution=dm.ExecutionSummary(status=result.status)))
    knowledge_refs, tool_refs = refs
    sample = dm.Sample(
        id="",
        question=draft.question,
        answer=draft.answer,
        original_code=draft.original_code,
        original_image=original_ref,
        trajectory=dm.Trajectory(steps=tuple(steps), final_answer=draft.answer),
        knowledge_refs=knowledge_refs,
        tool_refs=tool_refs,
        status="generated",
        provenance=dm.Provenance(generator=generator_id, round=round_index),
    )
    return dm.canonicalize(sample, store)


def _side_generate(side: str, round_index: int, config: FlywheelConfig,
                   elements: list, client) -> list[tuple[GenBatch, tuple[str, ...]]]:
    """Run all generator calls for one side of a round; order is call order."""
    rng = _rng_for(config.seed, f"round:{round_index}:{side}")
    ids = [el.id for el in elements]
    by_id = {el.id: el for el in elements}
    mode = "from_knowledge" if side == "k" else "from_tools"
    out: list[tuple[GenBatch, tuple[str, ...]]] = []
    for i in range(config.combos_per_side):
        arity = _pick_arity(rng, config.arity_choices, len(ids))
        combo = ft.combos(ids, arity, rng)[0]
        request = GenRequest(mode=mode, combo=combo,
                             tag=f"r{round_index}:{side}:{i}", pool_size=len(ids))
        context = [by_id[cid] for cid in combo]
        out.append((client.generate(request, context), combo))
    return out


def run_round(round_index: int, config: FlywheelConfig, forest: ft.KnowledgeForest,
              tools: ft.ToolSet, client, pool: WorkerPool, store: dm.ImageStore,
              ) -> tuple[list[dm.Sample], int, int, int]:
    """One co-evolution round; returns (accepted, dropped, |dK|, |dT|)."""
    k_elements = forest.concepts()   # both sets frozen at round start
    t_elements = tools.tools()

    with ThreadPoolExecutor(max_workers=2) as tpe:
        k_future = tpe.submit(_side_generate, "k", round_index, config, k_elements, client)
        t_future = tpe.submit(_side_generate, "t", round_index, config, t_elements, client)
        k_batches = k_future.result()
        t_batches = t_future.result()

    render_jobs: list[tuple[SampleDraft, tuple[tuple[str, ...], tuple[str, ...]]]] = []
    predicted_concepts: list = []
    predicted_tools: list = []
    for batch, combo in k_batches:
        for draft in batch.samples:
            render_jobs.append((draft, (combo, ())))
        predicted_tools.extend(batch.predicted_tools)
    for batch, combo in t_batches:
        for draft in batch.samples:
            render_jobs.append((draft, ((), combo)))
        predicted_concepts.extend(batch.predicted_concepts)

    accepted: list[dm.Sample] = []
    dropped = 0
    with ThreadPoolExecutor(max_workers=config.worker_budget) as tpe:
        futures = [tpe.submit(render_draft, draft, pool, store, refs,
                              getattr(client, "generator_id", "unknown"),
                              round_index, config.render_timeout_ms)
                   for draft, refs in render_jobs]
        for fut, (draft, _) in zip(futures, render_jobs):
            try:
                accepted.append(fut.result())
            except (RenderError, dm.DatamodelError) as exc:
                dropped += 1
                log.warning("round %d: dropped unrenderable sample %r: %s",
                            round_index, draft.question[:50], exc)

    delta_k = ft.expand_knowledge(
        [ft.KnowledgeConcept.make(c.name, c.description, c.domain)
         for c in predicted_concepts], forest, config.dedup_threshold)
    delta_t = ft.expand_tools(
        [ft.ToolSpec.make(t.name, t.description, t.signature)
         for t in predicted_tools], tools, config.dedup_threshold)
    return accepted, dropped, len(delta_k), len(delta_t)


# --- run directory state -------------------------------------------------

def _round_shard_path(run_dir: Path, round_index: int) -> Path:
    return run_dir / "rounds" / f"round_{round_index:03d}.jsonl"


def checkpoint(run_dir: str | Path, config: FlywheelConfig, rounds_done: int,
               forest: ft.KnowledgeForest, tools: ft.ToolSet,
               growth: list[RoundReport]) -> Path:
    """Persist resumable state; returns the checkpoint path."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    forest_digest = ft.save_forest(forest, run_dir / "forest.snapshot", rounds_done)
    tools_digest = ft.save_tools(tools, run_dir / "tools.snapshot", rounds_done)
    state = {
        "schema": CHECKPOINT_SCHEMA,
        "seed": config.seed,
        "rounds_total": config.rounds,
        "combos_per_side": config.combos_per_side,
        "arity_choices": list(config.arity_choices),
        "dedup_threshold": config.dedup_threshold,
        "rounds_done": rounds_done,
        "forest_digest": forest_digest,
        "tools_digest": tools_digest,
        "growth": [vars(r) for r in growth],
    }
    payload = json.dumps(state, indent=2, sort_keys=True)
    state["state_digest"] = dm.sha256_hex(payload.encode("utf-8"))
    path = run_dir / "checkpoint.json"
    path.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def resume(run_dir: str | Path) -> tuple[FlywheelConfig, int, ft.KnowledgeForest,
                                          ft.ToolSet, list[RoundReport]]:
    """Load checkpointed state, verifying digests."""
    run_dir = Path(run_dir)
    path = run_dir / "checkpoint.json"
    if not path.exists():
        raise FlywheelError(f"no checkpoint in {run_dir}")
    state = json.loads(path.read_text(encoding="utf-8"))
    recorded = state.pop("state_digest", None)
    payload = json.dumps(state, indent=2, sort_keys=True)
    if recorded != dm.sha256_hex(payload.encode("utf-8")):
        raise FlywheelError("checkpoint digest mismatch; refusing to resume")
    forest = ft.load_forest(run_dir / "forest.snapshot")
    tools = ft.load_tools(run_dir / "tools.snapshot")
    if forest.digest() != state["forest_digest"] or tools.digest() != state["tools_digest"]:
        raise FlywheelError("snapshot digest mismatch; refusing to resume")
    config = FlywheelConfig(
        rounds=state["rounds_total"],
        combos_per_side=state["combos_per_side"],
        arity_choices=tuple(state["arity_choices"]),
        dedup_threshold=state["dedup_threshold"],
        seed=state["seed"],
    )
    growth = [RoundReport(**r) for r in state["growth"]]
    return config, state["rounds_done"], forest, tools, growth


def _merge_rounds(run_dir: Path, rounds_done: int) -> tuple[dict, list[dm.Sample]]:
    samples: list[dm.Sample] = []
    for n in range(1, rounds_done + 1):
        shard = _round_shard_path(run_dir, n)
        if shard.exists():
            samples.extend(dm.shard_read(shard))
    manifest = dm.shard_write(samples, run_dir / "d_init.jsonl")
    return manifest, samples


def run_evolution(config: FlywheelConfig, forest: ft.KnowledgeForest, tools: ft.ToolSet,
                  client, pool: WorkerPool, store: dm.ImageStore,
                  run_dir: str | Path, start_round: int = 0,
                  growth: list[RoundReport] | None = None) -> FlywheelResult:
    """Execute rounds ``start_round+1 .. config.rounds`` and merge the dataset.

    ``start_round`` > 0 continues a resumed run; already-written round
    shards are left untouched and included in the final merge.
    """
    if len(forest) == 0 or len(tools) == 0:
        raise FlywheelError("both seed sets must be non-empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    growth = list(growth or [])
    d_total = sum(r.samples_accepted for r in growth)

    for n in range(start_round + 1, config.rounds + 1):
        try:
            accepted, dropped, dk, dt = run_round(n, config, forest, tools,
                                                  client, pool, store)
        except Exception:
            log.error("round %d aborted; checkpoint retains %d completed rounds",
                      n, n - 1)
            raise
        dm.shard_write(accepted, _round_shard_path(run_dir, n))
        d_total += len(accepted)
        growth.append(RoundReport(
            round=n, new_concepts=dk, new_tools=dt,
            samples_accepted=len(accepted), samples_dropped=dropped,
            k_total=len(forest), t_total=len(tools), d_total=d_total))
        checkpoint(run_dir, config, n, forest, tools, growth)

    if start_round >= config.rounds and not (run_dir / "checkpoint.json").exists():
        checkpoint(run_dir, config, start_round, forest, tools, growth)
    manifest, samples = _merge_rounds(run_dir, config.rounds)
    (run_dir / "growth.json").write_text(
        json.dumps([vars(r) for r in growth], indent=2) + "\n", encoding="utf-8")
    return FlywheelResult(forest=forest, tools=tools, manifest=manifest,
                          growth=growth, samples=samples)


def growth_report(growth: list[RoundReport]) -> str:
    """Fixed-width per-round table of set and dataset increments."""
    lines = [f"{'round':>5}  {'+concepts':>9}  {'+tools':>6}  {'+samples':>8}  "
             f"{'|K|':>6}  {'|T|':>6}  {'|D|':>6}"]
    for r in growth:
        lines.append(f"{r.round:>5}  {r.new_concepts:>9}  {r.new_tools:>6}  "
                     f"{r.samples_accepted:>8}  {r.k_total:>6}  {r.t_total:>6}  "
                     f"{r.d_total:>6}")
    return "\n".join(lines)
