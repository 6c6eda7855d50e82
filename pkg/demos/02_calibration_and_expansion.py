"""Quality control walkthrough: check, repair, reject, then deepen.

Builds a small corpus with planted defects, routes it through calibration
with a scripted checker and repairer, then extends the survivors one
difficulty level with parallel and sequential constructions.
"""

import random
import tempfile
from pathlib import Path

from vizflow import calibration as cal
from vizflow import datamodel as dm
from vizflow import executor as ex
from vizflow import expansion as xp
from vizflow import gateway as gw

work = Path(tempfile.mkdtemp(prefix="calib-demo-"))
store = dm.ImageStore(work / "images")


def build_corpus(pool):
    """6 clean items, 2 with wrong answers, 1 with a broken figure."""
    corpus = []
    generator = gw.MockGenerator(seed=5)
    from vizflow.flywheel import render_draft
    n = 0
    for tag in ("a", "b", "c", "d", "e"):
        batch = generator.generate(gw.GenRequest(
            mode="from_knowledge", combo=("k",), tag=tag, pool_size=1))
        for draft in batch.samples:
            if n >= 9:
                break
            if 6 <= n < 8:
                draft.answer = "wrong-on-purpose"
            if n == 8:
                draft.question = "broken-figure " + draft.question
            corpus.append(render_draft(draft, pool, store, (("k",), ()),
                                       "mock:5", 1))
            n += 1
    return corpus


def checker_rule(sample):
    if sample.question.startswith("broken-figure"):
        return (True, False, True)          # invalid rendered image
    if sample.answer == "wrong-on-purpose":
        return (False, True, True)          # repairable: answer only
    return (True, True, True)


class DemoRepairer:
    def repair(self, request):
        payload = request.payload
        return payload["question"], "42"    # reconstructed from the pictures


with ex.pool_spawn(ex.default_worker_cmd(), 2, store) as pool:
    corpus = build_corpus(pool)
    print(f"corpus: {len(corpus)} samples (2 repairable, 1 broken image)")

    result = cal.calibrate(corpus, cal.ScriptedChecker(checker_rule),
                           repairer=DemoRepairer(), store=store,
                           audit_log=cal.AuditLog(work / "audit.jsonl"))
    print(f"verified: {len(result.verified)}   rejected: {len(result.rejected)}")
    print("audit trail:")
    for entry in result.audit:
        print(f"  iter {entry['iteration']}  {entry['action']:<10}"
              f"  sample {entry['sample'][:10]}")

    print("\n== difficulty expansion ==")
    rng = random.Random(3)
    merged, report = xp.expand_dataset(result.verified, fraction=1.0, rng=rng,
                                       generator=gw.MockGenerator(seed=5),
                                       checker=cal.ScriptedChecker(),
                                       pool=pool, store=store)
    print(f"attempted {report.attempted} extensions "
          f"({report.parallel} parallel, {report.sequential} sequential); "
          f"{report.survived} survived re-validation")
    depths = sorted(s.difficulty_depth for s in merged)
    print(f"dataset grew {len(result.verified)} -> {len(merged)}; depths: {depths}")
    child = next(s for s in merged if s.difficulty_depth == 1)
    print(f"\nextended question: {child.question[:90]}...")
    print(f"lineage: child {child.id[:10]} -> parent {child.provenance.parent[:10]}")
