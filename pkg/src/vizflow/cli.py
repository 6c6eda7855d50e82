"""Operator entry point: evolve / perception / rollout / eval / stats.

One declarative YAML config drives every subcommand, with ``--set
key=value`` overrides and ``--seed`` for global determinism. Exit codes:
0 success, 2 config error, 3 stage failure (the failing stage is named on
stderr). Every subcommand runs offline with ``mock:`` endpoints and a
sandbox worker (real or canned stub).
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np

from . import bench as bn
from . import calibration as cal
from . import config as cfgmod
from . import datamodel as dm
from . import expansion as xp
from . import flywheel as fw
from . import forest as ft
from . import gateway as gw
from . import perception as pc
from . import rollout as rl
from .executor import (WorkerPool, default_worker_cmd, pool_spawn,
                       stub_worker_cmd)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def _worker_cmd(config: dict) -> list[str]:
    worker = config["executor"]["worker"]
    if worker == "auto":
        return default_worker_cmd()
    if worker == "stub":
        return stub_worker_cmd()
    return [str(part) for part in worker]


def _spawn_pool(config: dict, store: dm.ImageStore, run_dir: Path) -> WorkerPool:
    return pool_spawn(_worker_cmd(config), config["executor"]["workers"], store,
                      stderr_dir=str(run_dir / "worker-logs"))


def _load_seeds(config: dict) -> tuple[ft.KnowledgeForest, ft.ToolSet]:
    kpath = (cfgmod.builtin_seed_path("knowledge")
             if config["seeds"]["knowledge"] == "builtin"
             else Path(config["seeds"]["knowledge"]))
    tpath = (cfgmod.builtin_seed_path("tools")
             if config["seeds"]["tools"] == "builtin"
             else Path(config["seeds"]["tools"]))
    return ft.load_seed_concepts(kpath), ft.load_seed_tools(tpath)


def _make_checker(spec: str) -> cal.Checker:
    if spec.startswith("mock"):
        return cal.ScriptedChecker(checker_id=spec)
    if spec == "env":
        return cal.RemoteChecker(gw.RemoteGenerator(gw.EndpointConfig.from_env()))
    raise cfgmod.ConfigError(f"unknown checker spec {spec!r}")


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            log.info("stage %s ...", name)
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False
    return _Ctx()


# --- subcommands -----------------------------------------------------------------

def cmd_evolve(config: dict, resume: bool = False) -> int:
    run_dir = Path(config["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = cfgmod.echo_config(config, run_dir)
    store = dm.ImageStore(run_dir / "images")
    fw_cfg = fw.FlywheelConfig(
        rounds=config["flywheel"]["rounds"],
        combos_per_side=config["flywheel"]["combos_per_side"],
        arity_choices=tuple(config["flywheel"]["arity_choices"]),
        dedup_threshold=config["flywheel"]["dedup_threshold"],
        seed=config["seed"],
    )
    try:
        generator = gw.make_generator(
            config["generator"],
            transcripts=gw.TranscriptSink(run_dir / "transcripts" / "generator.jsonl")
            if config["generator"] == "env" else None)
        checker = _make_checker(config["checker"])
    except gw.GatewayError as exc:  # unset endpoint env vars and the like
        raise cfgmod.ConfigError(str(exc)) from exc

    with _stage("seeds"):
        forest, tools = _load_seeds(config)
        start_round, growth = 0, []
        if resume and (run_dir / "checkpoint.json").exists():
            _, start_round, forest, tools, growth = fw.resume(run_dir)
            log.info("resuming after round %d", start_round)

    with _stage("sandbox"), _spawn_pool(config, store, run_dir) as pool:
        with _stage("flywheel"):
            result = fw.run_evolution(fw_cfg, forest, tools, generator, pool,
                                      store, run_dir, start_round=start_round,
                                      growth=growth)
        with _stage("calibration"):
            audit = cal.AuditLog(run_dir / "calibration_audit.jsonl")
            repairer = generator
            calres = cal.calibrate(result.samples, checker, repairer=repairer,
                                   max_iters=config["calibration"]["max_iters"],
                                   store=store, audit_log=audit)
            dm.shard_write(calres.verified, run_dir / "d_verified.jsonl")
            dm.shard_write(calres.rejected, run_dir / "d_rejected.jsonl")
        with _stage("expansion"):
            rng = random.Random(f"expand|{config['seed']}")
            merged, report = xp.expand_dataset(
                calres.verified, config["expansion"]["fraction"], rng,
                generator, checker, pool, store,
                max_iters=config["calibration"]["max_iters"])
            dm.shard_write(merged, run_dir / "d_final.jsonl")

    print(fw.growth_report(result.growth))
    print(f"d_init: {len(result.samples)}  d_verified: {len(calres.verified)}  "
          f"rejected: {len(calres.rejected)}  d_final: {len(merged)} "
          f"(+{report.survived} expanded: {report.parallel} parallel, "
          f"{report.sequential} sequential)")
    print(f"run dir: {run_dir}  config digest: {digest[:12]}")
    return EXIT_OK


def cmd_perception(config: dict) -> int:
    run_dir = Path(config["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = cfgmod.echo_config(config, run_dir)
    store = dm.ImageStore(run_dir / "images")
    with _stage("seeds"):
        forest, _ = _load_seeds(config)
    with _stage("sandbox"), _spawn_pool(config, store, run_dir) as pool:
        with _stage("perception"):
            rng = random.Random(f"perception|{config['seed']}")
            samples, failures = pc.synth_perception(
                config["perception"]["count"], forest, rng, pool, store,
                timeout_ms=config["executor"]["timeout_ms"])
            manifest = dm.shard_write(samples, run_dir / "perception.jsonl")
    levels = [s.provenance.generator.rpartition("/")[2] for s in samples]
    counts = {lvl: levels.count(lvl) for lvl in pc.LEVELS}
    print(f"perception shard: {manifest['count']} items "
          f"(digest {manifest['digest'][:12]}), render failures: {failures}")
    print("levels: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"run dir: {run_dir}  config digest: {digest[:12]}")
    return EXIT_OK


def cmd_rollout(config: dict) -> int:
    run_dir = Path(config["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = cfgmod.echo_config(config, run_dir)
    store = dm.ImageStore(run_dir / "images")
    shard = (Path(config["rollout"]["input_shard"])
             if config["rollout"]["input_shard"]
             else run_dir / "d_final.jsonl")
    with _stage("input"):
        if not shard.exists():
            raise FileNotFoundError(
                f"input shard {shard} not found; run `vizflow evolve` first or "
                f"set rollout.input_shard")
        samples = [s for s in dm.shard_read(shard) if s.original_image is not None]
        samples = samples[: config["rollout"]["questions"]]
        if not samples:
            raise ValueError(f"no usable samples in {shard}")
    policy_spec = config["rollout"]["policy"]
    if not policy_spec.startswith("mock:"):
        raise cfgmod.ConfigError(f"cmd_rollout supports mock policies, got {policy_spec!r}")
    policy_seed = int(policy_spec.split(":", 1)[1])
    params = rl.GrpoParams(
        eps_low=config["rl"]["eps_low"], eps_high=config["rl"]["eps_high"],
        std_floor=config["rl"]["std_floor"],
        lambda_format=config["rl"]["lambda_format"],
        lambda_tool=config["rl"]["lambda_tool"])
    G = config["rollout"]["group_size"]
    traj_path = run_dir / "trajectories.jsonl"
    group_path = run_dir / "groups.jsonl"
    with _stage("sandbox"), _spawn_pool(config, store, run_dir) as pool:
        with _stage("rollout"), traj_path.open("w", encoding="utf-8") as tfh, \
                group_path.open("w", encoding="utf-8") as gfh:
            summary = []
            for sample in samples:
                outputs = []
                for j in range(G):
                    policy = rl.DemoPolicy(policy_seed, {sample.question: sample.answer},
                                           variant=j)
                    rr = rl.run_trajectory(policy, sample.question,
                                           sample.original_image, pool, store,
                                           max_steps=config["rollout"]["max_steps"],
                                           timeout_ms=config["executor"]["timeout_ms"])
                    reward = rl.compute_reward(rr.trajectory, sample.answer, params)
                    tfh.write(json.dumps({
                        "sample": sample.id, "rollout": j, "status": rr.status,
                        "reward": reward.to_dict(),
                        "trajectory": rr.trajectory.to_dict()},
                        ensure_ascii=False) + "\n")
                    # delta == 1 placeholder tensors wire the export format;
                    # real log-probs come from an external trainer
                    length = max(1, rr.trajectory.step_count)
                    outputs.append(rl.GroupOutput(np.zeros(length), np.zeros(length),
                                                  reward.total))
                group = rl.RolloutGroup(sample.question, outputs)
                record = rl.group_record(group, params)
                gfh.write(json.dumps(record, ensure_ascii=False) + "\n")
                summary.append((sample.id[:12], [o.reward for o in outputs],
                                record["surrogate"]))
        with _stage("targeted-filter"):
            filt_policy = rl.DemoPolicy(policy_seed,
                                        {s.question: s.answer for s in samples},
                                        variant=0, draw_first=False)
            kept = rl.targeted_filter(samples, filt_policy, pool, store)
            dm.shard_write(kept, run_dir / "d_targeted.jsonl")
    for sid, rewards, surrogate in summary:
        print(f"{sid}: rewards={rewards} surrogate={surrogate:+.4f}")
    print(f"targeted filter kept {len(kept)}/{len(samples)}")
    print(f"run dir: {run_dir}  config digest: {digest[:12]}")
    return EXIT_OK


def cmd_eval(config: dict) -> int:
    run_dir = Path(config["output_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = cfgmod.echo_config(config, run_dir)
    store = dm.ImageStore(run_dir / "images")
    if not config["eval"]["benchmark"]:
        raise cfgmod.ConfigError("eval.benchmark is required for cmd_eval")
    if not config["eval"]["candidates"]:
        raise cfgmod.ConfigError("eval.candidates is required for cmd_eval")
    with _stage("load"):
        items, warnings = bn.load_benchmark(config["eval"]["benchmark"])
        candidates: dict[str, dict] = {}
        for line in Path(config["eval"]["candidates"]).read_text("utf-8").split("\n"):
            if line.strip():
                rec = json.loads(line)
                candidates[rec["id"]] = rec
    judge_spec = config["eval"]["judge"]
    if judge_spec == "mock":
        judge = bn.ScriptedJudge()
        image_judge, answer_judge = judge, judge
    elif judge_spec == "env":
        remote = bn.RemoteJudge(gw.EndpointConfig.from_env(), store)
        image_judge, answer_judge = remote, remote
    else:
        raise cfgmod.ConfigError(f"unknown judge spec {judge_spec!r}")
    with _stage("sandbox"), _spawn_pool(config, store, run_dir) as pool:
        with _stage("evaluate"):
            report = bn.evaluate_benchmark(items, candidates, pool,
                                           image_judge, answer_judge,
                                           config_digest=digest)
    bn.write_verdicts(report.verdicts, run_dir / "verdicts.jsonl")
    text = bn.render_report(report)
    (run_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    for w in warnings:
        print(f"warning: {w}")
    print(text)
    return EXIT_OK


def cmd_stats(run_dir: str) -> int:
    rd = Path(run_dir)
    snapshot = rd / "forest.snapshot"
    if not snapshot.exists():
        raise StageError("stats", FileNotFoundError(f"no forest snapshot in {rd}"))
    forest = ft.load_forest(snapshot)
    st = ft.stats(forest)
    print(f"knowledge nodes: {st['node_count']}  max depth: {st['max_depth']}  "
          f"domains: {st['domain_count']}")
    print(f"per-round growth: {st['per_round_growth']}")
    tools_snapshot = rd / "tools.snapshot"
    if tools_snapshot.exists():
        tools = ft.load_tools(tools_snapshot)
        print(f"tools: {len(tools)}  per-round growth: "
              f"{[len(r) for r in tools.round_log]}")
    growth_file = rd / "growth.json"
    if growth_file.exists():
        growth = [fw.RoundReport(**r) for r in json.loads(growth_file.read_text("utf-8"))]
        print(fw.growth_report(growth))
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vizflow",
        description="co-evolving synthesis, calibration, and evaluation for "
                    "interactive visual-reasoning data")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("-c", "--config", default=None, help="YAML config file")
        p.add_argument("--set", dest="sets", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, default=None, help="global seed override")

    p = sub.add_parser("evolve", help="flywheel, calibration, expansion end to end")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the run directory's checkpoint")
    p = sub.add_parser("perception", help="synthesize a perception shard")
    common(p)
    p = sub.add_parser("rollout", help="roll out a mock policy and score groups")
    common(p)
    p = sub.add_parser("eval", help="evaluate candidates against a benchmark")
    common(p)
    p.add_argument("--benchmark", default=None, help="benchmark shard path")
    p.add_argument("--candidates", default=None, help="candidate JSONL path")
    p = sub.add_parser("stats", help="print forest stats and growth for a run")
    p.add_argument("run_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args.run_dir)
        sets = list(args.sets)
        if args.command == "eval":
            if args.benchmark:
                sets.append(f"eval.benchmark={args.benchmark}")
            if args.candidates:
                sets.append(f"eval.candidates={args.candidates}")
        config = cfgmod.load_config(args.config, sets=sets, seed=args.seed)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    try:
        if args.command == "evolve":
            return cmd_evolve(config, resume=args.resume)
        if args.command == "perception":
            return cmd_perception(config)
        if args.command == "rollout":
            return cmd_rollout(config)
        if args.command == "eval":
            return cmd_eval(config)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
