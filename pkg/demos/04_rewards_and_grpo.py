"""Reward and group math walkthrough.

Enumerates the reward table, rolls out a scripted policy against the
sandbox to score real trajectories, then standardizes a group and
evaluates the clipped surrogate against a scalar oracle.
"""

import itertools
import math
import tempfile
from pathlib import Path

import numpy as np

from vizflow import datamodel as dm
from vizflow import executor as ex
from vizflow import rollout as rl

print("== reward table: acc + 0.5*format + 0.3*[acc>0]*tool ==")
for acc, fmt, tool in itertools.product((0, 1), repeat=3):
    total = rl.reward_total(acc, fmt, tool)
    print(f"  acc={acc} format={fmt} tool={tool} -> {total:.1f}")

work = Path(tempfile.mkdtemp(prefix="reward-demo-"))
store = dm.ImageStore(work / "images")

with ex.pool_spawn(ex.default_worker_cmd(), 2, store) as pool:
    from PIL import Image
    figure = store.put_image(Image.new("RGB", (320, 240), "white"))

    print("\n== scripted rollouts against the sandbox ==")
    scripts = {
        "tool user, right": [
            "Mark it first.\n```python\nfrom PIL import Image, ImageDraw\n"
            "img = Image.open('img0.png')\nImageDraw.Draw(img).line("
            "[0, 0, 100, 100], fill='red')\nimg.save('m.png')\n```",
            "Now it is visible.\n<answer>12</answer>"],
        "tool user, wrong": [
            "Mark it first.\n```python\nfrom PIL import Image, ImageDraw\n"
            "img = Image.open('img0.png')\nImageDraw.Draw(img).line("
            "[0, 100, 100, 0], fill='blue')\nimg.save('m.png')\n```",
            "Hmm.\n<answer>99</answer>"],
        "no tool, right": ["Obvious.\n<answer>12</answer>"],
        "silent":          ["still thinking..."],
    }
    rewards = []
    for label, turns in scripts.items():
        result = rl.run_trajectory(rl.ScriptedPolicy(turns), "What is 7+5?",
                                   figure, pool, store, max_steps=3)
        breakdown = rl.compute_reward(result.trajectory, "12")
        rewards.append(breakdown.total)
        print(f"  {label:<18} status={result.status:<10} "
              f"acc={breakdown.r_acc} fmt={breakdown.r_format} "
              f"tool={breakdown.r_tool} total={breakdown.total:.1f}")

print("\n== group standardization ==")
advantages = rl.group_advantages(rewards)
for total, adv in zip(rewards, advantages):
    print(f"  reward {total:.1f} -> advantage {adv:+.3f}")
print(f"  (sum: {advantages.sum():+.2e})")

print("\n== clipped surrogate vs scalar oracle ==")
rng = np.random.default_rng(7)
outputs = [rl.GroupOutput(rng.normal(0, 0.3, 12), rng.normal(0, 0.3, 12), r)
           for r in rewards]
group = rl.RolloutGroup("What is 7+5?", outputs)
params = rl.GrpoParams()
fast = rl.grpo_surrogate(group, params)


def oracle(group, params):
    rs = [o.reward for o in group.outputs]
    mean = sum(rs) / len(rs)
    std = max(math.sqrt(sum((r - mean) ** 2 for r in rs) / len(rs)),
              params.std_floor)
    total, count = 0.0, 0
    for out, r in zip(group.outputs, rs):
        adv = (r - mean) / std
        for lp, lref in zip(out.logp_policy, out.logp_ref):
            d = math.exp(lp - lref)
            c = min(max(d, 1 - params.eps_low), 1 + params.eps_high)
            total += min(d * adv, c * adv)
            count += 1
    return total / count


slow = oracle(group, params)
print(f"  vectorized: {fast:+.9f}")
print(f"  oracle:     {slow:+.9f}")
print(f"  |diff|:     {abs(fast - slow):.2e}")
