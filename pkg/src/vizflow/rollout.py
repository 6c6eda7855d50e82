"""Interactive rollout loop, reward function, group advantages, and the
clipped importance-ratio surrogate.

The policy is an opaque endpoint (or a scripted mock): each turn yields a
thought, optionally one fenced code block executed in the sandbox, and
optionally a final-answer tag. Rewards are deterministic — answer match
by normalized string/number comparison, structural well-formedness, and
ok-status tool use gated on correctness — so they are cheap and exactly
reproducible. No parameter updates happen here; the surrogate value and
per-token terms are exposed for an external trainer.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import datamodel as dm
from .executor import ExecutionRequest, WorkerPool

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 8

_CODE_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.S)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.S)


class RolloutError(Exception):
    pass


@dataclass
class GrpoParams:
    eps_low: float = 0.2
    eps_high: float = 0.2
    std_floor: float = 1e-6
    lambda_format: float = 0.5
    lambda_tool: float = 0.3

    def __post_init__(self) -> None:
        if self.eps_low <= 0 or self.eps_high <= 0:
            raise RolloutError("clip bounds must be positive")
        if self.std_floor <= 0:
            raise RolloutError("std floor must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    r_format: int
    r_tool: int
    total: float

    def to_dict(self) -> dict:
        return {"r_acc": self.r_acc, "r_format": self.r_format,
                "r_tool": self.r_tool, "total": self.total}


# --- answer normalization ---------------------------------------------------

_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _normalize_text(s: str) -> str:
    return re.sub(r"\s+", " ", s.strip()).casefold()


def _as_number(s: str) -> float | None:
    s = s.strip().rstrip(".")
    if _NUM_RE.match(s):
        try:
            return float(s)
        except ValueError:
            return None
    return None


def _as_tuple(s: str) -> tuple[float, ...] | None:
    s = s.strip()
    if not (s.startswith("(") and s.endswith(")")):
        return None
    parts = [p.strip() for p in s[1:-1].split(",")]
    nums = [_as_number(p) for p in parts]
    if len(nums) >= 2 and all(v is not None for v in nums):
        return tuple(v for v in nums if v is not None)
    return None


def answers_match(candidate: str, gold: str, tol: float = 1e-6) -> bool:
    """Case/whitespace-insensitive match with numeric tolerance.

    Numbers (and coordinate tuples of numbers) compare within ``tol``;
    everything else compares as normalized text.
    """
    ca, ga = candidate.strip(), gold.strip()
    cn, gn = _as_number(ca), _as_number(ga)
    if cn is not None and gn is not None:
        return abs(cn - gn) <= tol
    ct, gt = _as_tuple(ca), _as_tuple(ga)
    if ct is not None and gt is not None:
        return len(ct) == len(gt) and all(abs(a - b) <= tol for a, b in zip(ct, gt))
    return _normalize_text(ca) == _normalize_text(ga)


# --- trajectory loop ---------------------------------------------------------

class ScriptedPolicy:
    """Deterministic policy double: turn text is a pure function of context."""

    def __init__(self, turns: list[str], role: str = "policy"):
        self.turns = list(turns)
        self.role = role

    def complete(self, messages: list[dict]) -> str:
        idx = sum(1 for m in messages if m.get("role") == "assistant")
        if idx >= len(self.turns):
            return self.turns[-1] if self.turns else ""
        return self.turns[idx]


class DemoPolicy:
    """Offline demo double with an answer book.

    Optionally draws one annotation step, then answers. Correctness is a
    seeded hash of (question, shown image digest, variant), so answers are
    deterministic yet vary across group members and across visual states —
    enough spread for the group math and the targeted filter to act on.
    """

    def __init__(self, seed: int, answer_book: dict[str, str], variant: int = 0,
                 draw_first: bool = True, role: str = "policy"):
        self.seed = seed
        self.answer_book = dict(answer_book)
        self.variant = variant
        self.draw_first = draw_first
        self.role = role

    def _answer_for(self, question: str, image_digest: str) -> str:
        import hashlib
        key = f"{self.seed}|{question}|{image_digest}|{self.variant}"
        gold = self.answer_book.get(question, "unknown")
        return gold if hashlib.sha256(key.encode()).digest()[0] % 2 == 0 else "no idea"

    def complete(self, messages: list[dict]) -> str:
        question = next((m["content"] for m in messages if m.get("role") == "user"), "")
        shown = ""
        for m in messages:
            if m.get("image") is not None:
                shown = m["image"].digest
        turn = sum(1 for m in messages if m.get("role") == "assistant")
        if self.draw_first and turn == 0:
            return ("I will highlight the figure before answering.\n"
                    "```python\n"
                    "from PIL import Image, ImageDraw\n"
                    "img = Image.open(\"img0.png\").convert(\"RGB\")\n"
                    "d = ImageDraw.Draw(img)\n"
                    "d.rectangle([4, 4, 60, 28], outline=\"red\", width=2)\n"
                    "img.save(\"marked.png\")\n"
                    "```\n")
        return (f"Reading the marked figure.\n"
                f"<answer>{self._answer_for(question, shown)}</answer>")


class RemotePolicy:
    """Policy backed by a chat endpoint; images travel as data URLs."""

    def __init__(self, config, store: dm.ImageStore, role: str = "policy",
                 temperature: float = 0.0, max_tokens: int = 2048):
        self.config = config
        self.store = store
        self.role = role
        self.temperature = temperature
        self.max_tokens = max_tokens

    def complete(self, messages: list[dict]) -> str:
        import base64
        from .gateway import complete as gw_complete
        wire = []
        for m in messages:
            if m.get("image") is not None:
                b64 = base64.b64encode(self.store.get(m["image"])).decode("ascii")
                wire.append({"role": m["role"], "content": [
                    {"type": "text", "text": m["content"]},
                    {"type": "image_url",
                     "image_url": {"url": f"data:image/png;base64,{b64}"}},
                ]})
            else:
                wire.append({"role": m["role"], "content": m["content"]})
        return gw_complete(wire, self.config, temperature=self.temperature,
                           max_tokens=self.max_tokens)


def parse_turn(text: str) -> tuple[str, str | None, str | None]:
    """Split a policy turn into (thought, code, answer)."""
    code_m = _CODE_RE.search(text)
    answer_m = _ANSWER_RE.search(text)
    thought = _CODE_RE.sub("", _ANSWER_RE.sub("", text)).strip()
    return (thought,
            code_m.group(1).strip() if code_m else None,
            answer_m.group(1).strip() if answer_m else None)


@dataclass
class RolloutResult:
    trajectory: dm.Trajectory
    status: str  # answered | truncated | failed


def run_trajectory(policy, question: str, image0: dm.ImageRef, pool: WorkerPool,
                   store: dm.ImageStore, max_steps: int = DEFAULT_MAX_STEPS,
                   timeout_ms: int = 10_000) -> RolloutResult:
    """Alternate policy turns and sandbox executions until answer or budget."""
    if max_steps < 1:
        raise RolloutError("max_steps must be >= 1")
    context: list[dict] = [{"role": "user", "content": question, "image": image0}]
    current = image0
    steps: list[dm.Step] = []
    for _ in range(max_steps):
        try:
            text = policy.complete(context)
        except Exception as exc:
            log.warning("policy transport failure: %s", exc)
            return RolloutResult(dm.Trajectory(steps=tuple(steps)), "failed")
        thought, code, answer = parse_turn(text)
        context.append({"role": "assistant", "content": text})
        output_ref = None
        if code is not None:
            result = pool.execute(ExecutionRequest(
                code=code, input_images=[("img0", current)], timeout_ms=timeout_ms))
            if result.status == "ok" and result.output_images:
                output_ref = result.output_images[-1]
                current = output_ref
                context.append({"role": "user",
                                "content": "Updated image attached.",
                                "image": current})
            else:
                # surfaced to the policy as an observation; the loop continues
                context.append({"role": "user",
                                "content": f"Execution {result.status}: "
                                           f"{result.trace.strip()[:300]}"})
            steps.append(dm.Step(thought=thought, code=code, output_image=output_ref,
                                 execution=dm.ExecutionSummary(status=result.status)))
        else:
            steps.append(dm.Step(thought=thought))
        if answer is not None:
            return RolloutResult(
                dm.Trajectory(steps=tuple(steps), final_answer=answer), "answered")
    return RolloutResult(dm.Trajectory(steps=tuple(steps), final_answer=None),
                         "truncated")


# --- reward -----------------------------------------------------------------

def _trajectory_well_formed(traj: dm.Trajectory) -> bool:
    if traj.final_answer is None:
        return False
    try:
        for step in traj.steps:
            step.validate()
    except dm.DatamodelError:
        return False
    return True


def reward_total(r_acc: int, r_format: int, r_tool: int,
                 params: GrpoParams | None = None) -> float:
    """The reward formula itself: accuracy plus weighted formatting plus
    tool use gated on a correct answer."""
    params = params or GrpoParams()
    return (r_acc
            + params.lambda_format * r_format
            + params.lambda_tool * (1 if r_acc > 0 else 0) * r_tool)


def compute_reward(traj: dm.Trajectory, gold_answer: str,
                   params: GrpoParams | None = None) -> RewardBreakdown:
    """Score one trajectory: the tool term counts only when the final
    answer is correct, so a wrong-but-tool-using trajectory earns nothing
    for the tool call."""
    params = params or GrpoParams()
    r_acc = 1 if (traj.final_answer is not None
                  and answers_match(traj.final_answer, gold_answer)) else 0
    r_format = 1 if _trajectory_well_formed(traj) else 0
    r_tool = 1 if any(s.execution is not None and s.execution.status == "ok"
                      and s.output_image is not None for s in traj.steps) else 0
    return RewardBreakdown(r_acc=r_acc, r_format=r_format, r_tool=r_tool,
                           total=reward_total(r_acc, r_format, r_tool, params))


# --- group math ---------------------------------------------------------------

@dataclass
class GroupOutput:
    """One of the G outputs: token log-probs under policy and reference."""

    logp_policy: np.ndarray
    logp_ref: np.ndarray
    reward: float

    def __post_init__(self) -> None:
        self.logp_policy = np.asarray(self.logp_policy, dtype=np.float64)
        self.logp_ref = np.asarray(self.logp_ref, dtype=np.float64)
        if self.logp_policy.shape != self.logp_ref.shape:
            raise RolloutError("log-prob arrays must have matching lengths")

    @property
    def length(self) -> int:
        return int(self.logp_policy.shape[0])


@dataclass
class RolloutGroup:
    question: str
    outputs: list[GroupOutput] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.outputs:
            raise RolloutError("a rollout group needs G >= 1 outputs")

    @property
    def rewards(self) -> list[float]:
        return [o.reward for o in self.outputs]


def group_advantages(rewards: list[float] | np.ndarray,
                     std_floor: float = 1e-6) -> np.ndarray:
    """Group-standardized advantages: (r - mean) / max(std, floor).

    Population std; the floor keeps degenerate groups (G=1 or all-equal
    rewards) at exactly zero advantage.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 1:
        raise RolloutError("advantages need at least one reward")
    centered = r - r.mean()
    return centered / max(float(r.std()), std_floor)


def per_token_terms(group: RolloutGroup, params: GrpoParams | None = None,
                    ) -> list[np.ndarray]:
    """Clipped importance-ratio terms per token, advantage broadcast per output."""
    params = params or GrpoParams()
    adv = group_advantages(group.rewards, params.std_floor)
    terms: list[np.ndarray] = []
    for a, out in zip(adv, group.outputs):
        delta = np.exp(out.logp_policy - out.logp_ref)
        clipped = np.clip(delta, 1.0 - params.eps_low, 1.0 + params.eps_high)
        terms.append(np.minimum(delta * a, clipped * a))
    return terms


def grpo_surrogate(group: RolloutGroup, params: GrpoParams | None = None) -> float:
    """Token-count-normalized sum of the clipped terms over the whole group."""
    terms = per_token_terms(group, params)
    total_tokens = sum(out.length for out in group.outputs)
    if total_tokens == 0:
        return 0.0
    return float(sum(t.sum() for t in terms) / total_tokens)


# --- targeted data selection ---------------------------------------------------

def _one_shot_answer(policy, question: str, image: dm.ImageRef, pool: WorkerPool,
                     store: dm.ImageStore) -> str | None:
    result = run_trajectory(policy, question, image, pool, store, max_steps=1)
    if result.status == "failed":
        raise RolloutError("policy transport failure")
    return result.trajectory.final_answer


def targeted_filter(samples: list[dm.Sample], policy, pool: WorkerPool,
                    store: dm.ImageStore) -> list[dm.Sample]:
    """Keep samples the policy gets wrong on the original image but right on
    the final edited image (single greedy attempt each)."""
    kept: list[dm.Sample] = []
    for sample in samples:
        if sample.original_image is None:
            log.warning("targeted_filter: %s has no original image; skipped",
                        sample.id[:12])
            continue
        final = None
        for step in reversed(sample.trajectory.steps):
            if step.output_image is not None:
                final = step.output_image
                break
        if final is None:
            log.warning("targeted_filter: %s has no edited image; skipped",
                        sample.id[:12])
            continue
        try:
            ans_orig = _one_shot_answer(policy, sample.question,
                                        sample.original_image, pool, store)
            ans_edit = _one_shot_answer(policy, sample.question, final, pool, store)
        except RolloutError as exc:
            log.warning("targeted_filter: %s skipped: %s", sample.id[:12], exc)
            continue
        wrong_on_original = not (ans_orig is not None
                                 and answers_match(ans_orig, sample.answer))
        right_on_edited = (ans_edit is not None
                           and answers_match(ans_edit, sample.answer))
        if wrong_on_original and right_on_edited:
            kept.append(sample)
    return kept


# --- export for external trainers ---------------------------------------------

def group_record(group: RolloutGroup, params: GrpoParams | None = None) -> dict:
    """Line-delimited-friendly record of one group's tensors and rewards."""
    params = params or GrpoParams()
    adv = group_advantages(group.rewards, params.std_floor)
    return {
        "question": group.question,
        "surrogate": grpo_surrogate(group, params),
        "outputs": [
            {
                "length": out.length,
                "reward": out.reward,
                "advantage": float(a),
                "logp_policy": out.logp_policy.tolist(),
                "logp_ref": out.logp_ref.tolist(),
            }
            for a, out in zip(adv, group.outputs)
        ],
    }
