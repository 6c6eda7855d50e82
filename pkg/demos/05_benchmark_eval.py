"""Benchmark harness walkthrough: three tracks, scripted judges, one table.

Builds a 12-item fixture benchmark (4 per track), evaluates candidates
through the sandbox and scripted judges, and prints the three-column
report plus the expert vote gate in action.
"""

import tempfile
from pathlib import Path

from vizflow import bench as bn
from vizflow import datamodel as dm
from vizflow import executor as ex

from PIL import Image

work = Path(tempfile.mkdtemp(prefix="bench-demo-"))
store = dm.ImageStore(work / "images")

print("== expert vote gate (3 of 5 required) ==")
for votes in ([True, True, True, False, False],
              [True, True, False, False, False],
              [True] * 5):
    print(f"  {votes} -> {'include' if bn.expert_vote_gate(votes) else 'exclude'}")

items, candidates, scripted = [], {}, {}
plan = {"perception": 3, "instruction": 2, "reasoning": 2}  # correct per track
for track, n_correct in plan.items():
    for i in range(4):
        image = store.put_image(Image.new("RGB", (64, 64), (230, 230, 230)))
        annotation = None
        gold = None
        if track == "reasoning":
            gold = str(i * i)
        else:
            annotation = store.put_image(Image.new("RGB", (64, 64), (i, 80, 80)))
        item = bn.BenchItem(id=f"{track}-{i}", track=track,
                            question=f"{track} task {i}", image=image,
                            annotation_image=annotation, gold_answer=gold,
                            source="demo", domain="Geometry")
        items.append(item)
        scripted[item.question] = i < n_correct
        mark_code = ("from PIL import Image, ImageDraw\n"
                     "img = Image.open('img0.png').convert('RGB')\n"
                     "ImageDraw.Draw(img).ellipse([28, 28, 36, 36], fill='red')\n"
                     "img.save('marked.png')\n")
        candidates[item.id] = ({"id": item.id, "answer": gold or ""}
                               if track == "reasoning"
                               else {"id": item.id, "code": mark_code})

bn.write_benchmark(items, work / "bench.jsonl")
loaded, warnings = bn.load_benchmark(work / "bench.jsonl")
print(f"\nloaded benchmark: {len(loaded)} items, warnings: {warnings or 'none'}")

judge = bn.ScriptedJudge(scripted)
with ex.pool_spawn(ex.default_worker_cmd(), 2, store) as pool:
    report = bn.evaluate_benchmark(loaded, candidates, pool, judge, judge)

print("\n" + bn.render_report(report, method="demo-candidate"))
print("\nexpected by construction: perception 75.0, instruction 50.0, "
      "reasoning 50.0")
