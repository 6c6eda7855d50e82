"""Perception synthesis walkthrough: exact scenes, exact answers.

Coordinates come first; the drawing code is templated from them, so the
tags are ground truth by construction. Prints a scene's relations, its
three question levels, and the count distribution of a large draw.
"""

import random
import statistics
import tempfile
from pathlib import Path

from vizflow import datamodel as dm
from vizflow import executor as ex
from vizflow import perception as pc

rng = random.Random(2718)

print("== element count distribution (target: mean 8, sd 2, clamp [2, 20]) ==")
draws = [pc.sample_count(random.Random(i)) for i in range(10_000)]
print(f"mean {statistics.mean(draws):.3f}   sd {statistics.pstdev(draws):.3f}   "
      f"range [{min(draws)}, {max(draws)}]")

print("\n== one scene ==")
spec = pc.sample_scene(None, rng)
kinds = {}
for el in spec.elements:
    kinds[el["kind"]] = kinds.get(el["kind"], 0) + 1
print(f"{spec.count} elements: " + ", ".join(f"{v} {k}" for k, v in kinds.items()))
for rel in spec.relations:
    holds = pc.relation_holds(spec, rel, tol=0.5)
    print(f"  {rel['kind']}: {rel['subject']} vs {rel['object']}  "
          f"(holds numerically: {holds})")

work = Path(tempfile.mkdtemp(prefix="scene-demo-"))
store = dm.ImageStore(work / "images")
with ex.pool_spawn(ex.default_worker_cmd(), 2, store) as pool:
    ref, tags = pc.render_scene(spec, pool)
    print(f"\nrendered {ref.width}x{ref.height} image {ref.digest[:16]}...")
    print(f"tags: " + ", ".join(f"{t.label}@({t.x},{t.y})" for t in tags[:6])
          + (" ..." if len(tags) > 6 else ""))

    print("\n== questions (three levels) ==")
    for item in pc.make_questions(spec, tags, rng):
        print(f"[{item['level']}] {item['question']}")
        print(f"          -> {item['answer']}")

    print("\n== a small shard ==")
    samples, failures = pc.synth_perception(9, None, random.Random(99),
                                            pool, store)
    manifest = dm.shard_write(samples, work / "perception.jsonl")
    levels = [s.provenance.generator.rpartition("/")[2] for s in samples]
    print(f"{manifest['count']} items, digest {manifest['digest'][:16]}..., "
          f"levels: " + ", ".join(f"{l}={levels.count(l)}" for l in pc.LEVELS))
