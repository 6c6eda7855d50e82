"""Generator gateway: prompt assembly, chat-completion transport, output parsing.

The generator is pluggable. :class:`RemoteGenerator` talks to any endpoint
speaking the common ``/v1/chat/completions`` JSON shape, with exponential
backoff and a shared token-bucket rate limit. :class:`MockGenerator` is a
deterministic offline double that emits real drawing code, so the whole
pipeline can run and be tested without a network.

Generator output is a fenced, block-tagged text format rather than free
JSON: it survives partial generations and diffs cleanly in fixtures. The
same parser serves generation, repair, extension, and verdict responses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import requests

from .prompts import DEFAULT_TEMPLATE_FOR_MODE, TEMPLATES

log = logging.getLogger(__name__)

GEN_MODES = ("from_knowledge", "from_tools", "repair", "extend_parallel",
             "extend_sequential", "check")
DEFAULT_SAMPLES_PER_CALL = 2

ENV_API_BASE = "VTHINKER_API_BASE"
ENV_API_KEY = "VTHINKER_API_KEY"
ENV_MODEL = "VTHINKER_MODEL"


class GatewayError(Exception):
    pass


class GatewayAuthError(GatewayError):
    """Invalid credentials; never retried."""


class GatewayTransportError(GatewayError):
    """Transient transport failure that exhausted the retry budget."""


class GatewayParseError(GatewayError):
    def __init__(self, message: str, block: str | None = None):
        super().__init__(message)
        self.block = block


class MissingBlockError(GatewayParseError):
    def __init__(self, block: str):
        super().__init__(f"required block <<<{block}>>> not found", block=block)


class UnbalancedFenceError(GatewayParseError):
    def __init__(self, block: str, detail: str = "unclosed"):
        super().__init__(f"unbalanced fence for block <<<{block}>>>: {detail}", block=block)


class EmptyFieldError(GatewayParseError):
    def __init__(self, block: str):
        super().__init__(f"block <<<{block}>>> is empty but required", block=block)


# --- request / batch types ----------------------------------------------

def _default_temperature(mode: str) -> float:
    return 0.0 if mode in ("check", "repair") else 0.8


@dataclass
class GenRequest:
    """One generator call. ``tag`` names the call for audit and mock seeding."""

    mode: str
    combo: tuple[str, ...] | None = None
    payload: dict[str, Any] | None = None
    template_id: str | None = None
    temperature: float | None = None
    max_tokens: int = 2048
    attempt: int = 0
    tag: str = ""
    pool_size: int = 0

    def __post_init__(self) -> None:
        if self.mode not in GEN_MODES:
            raise GatewayError(f"unknown mode {self.mode!r}")
        if self.mode in ("from_knowledge", "from_tools") and self.combo is None:
            raise GatewayError(f"mode {self.mode} requires a combo")
        if self.mode in ("repair", "extend_parallel", "extend_sequential", "check") \
                and self.payload is None:
            raise GatewayError(f"mode {self.mode} requires a sample payload")
        if self.template_id is None:
            self.template_id = DEFAULT_TEMPLATE_FOR_MODE[self.mode]
        if self.temperature is None:
            self.temperature = _default_temperature(self.mode)


@dataclass
class SampleDraft:
    """A parsed sample candidate: code present, images not yet rendered."""

    question: str
    answer: str
    original_code: str
    steps: list[tuple[str, str | None]] = field(default_factory=list)  # (thought, code)


@dataclass
class ConceptDraft:
    name: str
    description: str = ""
    domain: str = "general"


@dataclass
class ToolDraft:
    name: str
    description: str = ""
    signature: str = ""


@dataclass
class ExtensionDraft:
    question: str
    answer: str
    thought: str
    code: str
    references: list[str]


@dataclass
class GenBatch:
    samples: list[SampleDraft]
    predicted_concepts: list[ConceptDraft]
    predicted_tools: list[ToolDraft]
    raw_response: str


# --- fenced block parsing -----------------------------------------------

@dataclass
class Block:
    name: str
    text_lines: list[str] = field(default_factory=list)
    children: list["Block"] = field(default_factory=list)

    @property
    def text(self) -> str:
        return "\n".join(self.text_lines).strip()

    def child(self, name: str) -> "Block | None":
        for c in self.children:
            if c.name == name:
                return c
        return None

    def all(self, name: str) -> list["Block"]:
        return [c for c in self.children if c.name == name]


_BLOCK_NAME = r"[A-Za-z_][A-Za-z0-9_]*"


def parse_blocks(text: str) -> Block:
    """Parse fenced blocks into a tree rooted at a synthetic top block.

    Total over arbitrary text: any input either parses or raises a named
    :class:`GatewayParseError`; stray text outside blocks is ignored.
    """
    open_re = re.compile(rf"^<<<({_BLOCK_NAME})>>>\s*$")
    close_re = re.compile(rf"^<<</({_BLOCK_NAME})>>>\s*$")
    root = Block(name="_root")
    stack = [root]
    for line in text.splitlines():
        stripped = line.strip()
        m_open = open_re.match(stripped)
        m_close = close_re.match(stripped)
        if m_open:
            block = Block(name=m_open.group(1))
            stack[-1].children.append(block)
            stack.append(block)
        elif m_close:
            name = m_close.group(1)
            if len(stack) == 1:
                raise UnbalancedFenceError(name, "close without open")
            if stack[-1].name != name:
                raise UnbalancedFenceError(name, f"expected <<</{stack[-1].name}>>>")
            stack.pop()
        else:
            if len(stack) > 1:
                stack[-1].text_lines.append(line)
    if len(stack) > 1:
        raise UnbalancedFenceError(stack[-1].name)
    return root


def _inline_or_nested(parent: Block, name: str, required: bool = True) -> str:
    """Fetch a child block's text, supporting single-line `<<<x>>>body<<</x>>>`."""
    child = parent.child(name)
    if child is None:
        # single-line form folded into parent text
        m = re.search(rf"<<<{name}>>>(.*?)<<</{name}>>>", "\n".join(parent.text_lines), re.S)
        if m:
            value = m.group(1).strip()
            if not value and required:
                raise EmptyFieldError(name)
            return value
        if required:
            raise MissingBlockError(name)
        return ""
    value = child.text
    if not value and required:
        raise EmptyFieldError(name)
    return value


def _kv_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        if ":" in line:
            key, _, val = line.partition(":")
            out[key.strip().casefold()] = val.strip()
    return out


def parse_gen_output(text: str) -> GenBatch:
    """Parse a generation response into samples plus predicted counterparts."""
    root = parse_blocks(text)
    sample_blocks = root.all("sample")
    if not sample_blocks:
        raise MissingBlockError("sample")
    samples: list[SampleDraft] = []
    for sb in sample_blocks:
        question = _inline_or_nested(sb, "question")
        answer = _inline_or_nested(sb, "answer")
        code = _inline_or_nested(sb, "original_code")
        steps: list[tuple[str, str | None]] = []
        for step in sb.all("step"):
            thought = _inline_or_nested(step, "thought")
            step_code = _inline_or_nested(step, "code", required=False) or None
            steps.append((thought, step_code))
        samples.append(SampleDraft(question=question, answer=answer,
                                   original_code=code, steps=steps))
    concepts = []
    for cb in root.all("concept"):
        kv = _kv_lines(cb.text)
        if not kv.get("name"):
            raise EmptyFieldError("concept.name")
        concepts.append(ConceptDraft(name=kv["name"],
                                     description=kv.get("description", ""),
                                     domain=kv.get("domain", "general")))
    tools = []
    for tb in root.all("tool"):
        kv = _kv_lines(tb.text)
        if not kv.get("name"):
            raise EmptyFieldError("tool.name")
        tools.append(ToolDraft(name=kv["name"],
                               description=kv.get("description", ""),
                               signature=kv.get("signature", "")))
    return GenBatch(samples=samples, predicted_concepts=concepts,
                    predicted_tools=tools, raw_response=text)


def parse_repair_output(text: str) -> tuple[str, str]:
    root = parse_blocks(text)
    block = root.child("repair")
    if block is None:
        raise MissingBlockError("repair")
    return _inline_or_nested(block, "question"), _inline_or_nested(block, "answer")


def parse_extension_output(text: str) -> ExtensionDraft:
    root = parse_blocks(text)
    block = root.child("extension")
    if block is None:
        raise MissingBlockError("extension")
    refs_raw = _inline_or_nested(block, "references")
    references = [r.strip() for r in refs_raw.split(",") if r.strip()]
    if not references:
        raise EmptyFieldError("references")
    return ExtensionDraft(
        question=_inline_or_nested(block, "question"),
        answer=_inline_or_nested(block, "answer"),
        thought=_inline_or_nested(block, "thought"),
        code=_inline_or_nested(block, "code"),
        references=references,
    )


def _parse_bool(raw: str, block: str) -> bool:
    val = raw.strip().casefold()
    if val in ("true", "yes", "1"):
        return True
    if val in ("false", "no", "0"):
        return False
    raise GatewayParseError(f"block <<<{block}>>> has non-boolean value {raw!r}", block=block)


def parse_verdict_output(text: str) -> dict[str, Any]:
    """Parse a three-criterion check verdict."""
    root = parse_blocks(text)
    block = root.child("verdict")
    if block is None:
        raise MissingBlockError("verdict")
    kv = _kv_lines(block.text)
    for key in ("answer_ok", "image_ok", "states_ok"):
        if key not in kv:
            raise MissingBlockError(f"verdict.{key}")
    return {
        "answer_ok": _parse_bool(kv["answer_ok"], "verdict"),
        "image_ok": _parse_bool(kv["image_ok"], "verdict"),
        "states_ok": _parse_bool(kv["states_ok"], "verdict"),
        "rationale": kv.get("rationale", ""),
    }


def parse_match_output(text: str) -> bool:
    """Parse a binary judge verdict."""
    root = parse_blocks(text)
    block = root.child("verdict")
    if block is None:
        raise MissingBlockError("verdict")
    kv = _kv_lines(block.text)
    if "match" not in kv:
        raise MissingBlockError("verdict.match")
    return _parse_bool(kv["match"], "verdict")


# --- prompt construction --------------------------------------------------

def _context_lines(context: Sequence[Any]) -> str:
    lines = []
    for el in context:
        name = getattr(el, "name", str(el))
        desc = getattr(el, "description", "")
        sig = getattr(el, "signature", "")
        line = f"- {name}: {desc}" if desc else f"- {name}"
        if sig:
            line += f" [signature: {sig}]"
        lines.append(line)
    return "\n".join(lines)


def build_prompt(request: GenRequest, context: Sequence[Any] = (),
                 n_samples: int = DEFAULT_SAMPLES_PER_CALL) -> list[dict[str, str]]:
    """Assemble the message list; byte-identical for identical inputs."""
    if request.template_id not in TEMPLATES:
        raise GatewayError(f"unknown template id {request.template_id!r}")
    tpl = TEMPLATES[request.template_id]
    payload_txt = ""
    if request.payload is not None:
        payload_txt = json.dumps(request.payload, sort_keys=True, indent=2, ensure_ascii=False)
    user = tpl["user"].format(context=_context_lines(context),
                              payload=payload_txt, n_samples=n_samples)
    return [{"role": "system", "content": tpl["system"]},
            {"role": "user", "content": user}]


# --- transport --------------------------------------------------------------

class TokenBucket:
    """Shared, thread-safe rate limiter: ``capacity`` tokens, steady refill."""

    def __init__(self, capacity: float = 10.0, refill_per_s: float = 5.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.capacity = capacity
        self.refill_per_s = refill_per_s
        self._tokens = capacity
        self._updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity,
                                   self._tokens + (now - self._updated) * self.refill_per_s)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.refill_per_s
            self._sleep(wait)


@dataclass
class EndpointConfig:
    base_url: str
    api_key: str = ""
    model: str = "default"
    timeout_s: float = 60.0
    max_attempts: int = 5
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0

    @classmethod
    def from_env(cls) -> "EndpointConfig":
        base = os.environ.get(ENV_API_BASE)
        if not base:
            raise GatewayError(f"{ENV_API_BASE} is not set")
        return cls(base_url=base,
                   api_key=os.environ.get(ENV_API_KEY, ""),
                   model=os.environ.get(ENV_MODEL, "default"))


class TranscriptSink:
    """Append-only request/response log for audit, one JSON record per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def record(self, tag: str, mode: str, prompt: Any, response: str) -> None:
        entry = {"tag": tag, "mode": mode, "prompt": prompt, "response": response}
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def complete(messages: list[dict[str, str]], config: EndpointConfig,
             temperature: float = 0.0, max_tokens: int = 2048,
             rate_limiter: TokenBucket | None = None,
             sleep: Callable[[float], None] = time.sleep) -> str:
    """POST to the chat-completions endpoint with bounded retries.

    Transient failures (429, 5xx, timeouts, connection drops, malformed
    bodies) are retried with exponential backoff up to ``max_attempts``;
    authentication failures abort immediately.
    """
    url = config.base_url.rstrip("/") + "/v1/chat/completions"
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    body = {"model": config.model, "messages": messages,
            "temperature": temperature, "max_tokens": max_tokens}
    last_error: Exception | None = None
    for attempt in range(1, config.max_attempts + 1):
        if rate_limiter is not None:
            rate_limiter.acquire()
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=config.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = exc
        else:
            if resp.status_code in (401, 403):
                raise GatewayAuthError(f"authentication rejected ({resp.status_code})")
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    last_error = GatewayError(f"malformed response body: {exc}")
            elif resp.status_code == 429 or 500 <= resp.status_code < 600:
                last_error = GatewayError(f"transient status {resp.status_code}")
            else:
                raise GatewayError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        if attempt < config.max_attempts:
            delay = config.backoff_base_s * (config.backoff_factor ** (attempt - 1))
            log.warning("completion attempt %d failed (%s); retrying in %.1fs",
                        attempt, last_error, delay)
            sleep(delay)
    raise GatewayTransportError(f"retry budget exhausted after "
                                f"{config.max_attempts} attempts: {last_error}")


# --- clients ---------------------------------------------------------------

class RemoteGenerator:
    """Generator backed by a chat-completion endpoint."""

    def __init__(self, config: EndpointConfig, rate_limiter: TokenBucket | None = None,
                 transcripts: TranscriptSink | None = None,
                 samples_per_call: int = DEFAULT_SAMPLES_PER_CALL):
        self.config = config
        self.rate_limiter = rate_limiter or TokenBucket()
        self.transcripts = transcripts
        self.samples_per_call = samples_per_call
        self.generator_id = f"remote:{config.model}"

    def _complete(self, request: GenRequest, context: Sequence[Any]) -> str:
        messages = build_prompt(request, context, n_samples=self.samples_per_call)
        text = complete(messages, self.config, temperature=request.temperature,
                        max_tokens=request.max_tokens, rate_limiter=self.rate_limiter)
        if self.transcripts is not None:
            self.transcripts.record(request.tag, request.mode, messages, text)
        return text

    def generate(self, request: GenRequest, context: Sequence[Any] = ()) -> GenBatch:
        return parse_gen_output(self._complete(request, context))

    def repair(self, request: GenRequest) -> tuple[str, str]:
        return parse_repair_output(self._complete(request, ()))

    def extend(self, request: GenRequest) -> ExtensionDraft:
        return parse_extension_output(self._complete(request, ()))


def _derive_rng(seed: int, tag: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{tag}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


_ENTITY_RE = re.compile(r"#\s*entity:\s*([A-Za-z0-9_./-]+)")


def extract_entities(code: str) -> list[str]:
    """Entity labels declared in code via the `# entity: <label>` convention."""
    return _ENTITY_RE.findall(code or "")


_FIGURE_CODE = """\
from PIL import Image, ImageDraw
img = Image.new("RGB", (640, 480), "white")
d = ImageDraw.Draw(img)
# entity: figure
{body}
img.save("figure.png")
"""

_ANNOTATE_CODE = """\
from PIL import Image, ImageDraw
img = Image.open("img0.png").convert("RGB")
d = ImageDraw.Draw(img)
# entity: {entity}
{body}
img.save("step.png")
"""


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.1f}"


class MockGenerator:
    """Deterministic offline generator emitting runnable drawing code.

    The same (seed, request.tag) always yields the same batch. ``novelty``
    controls how many brand-new counterpart predictions each call emits:
    an integer, or ``"proportional"`` to scale with the sampled pool size.
    Remaining predictions echo the combo context, so they deduplicate away.
    """

    def __init__(self, seed: int = 0, novelty: int | str = 1,
                 proportional_rate: float = 0.5,
                 samples_per_call: int = DEFAULT_SAMPLES_PER_CALL):
        self.seed = seed
        self.novelty = novelty
        self.proportional_rate = proportional_rate
        self.samples_per_call = samples_per_call
        self.generator_id = f"mock:{seed}"

    def _novelty_for(self, request: GenRequest) -> int:
        if self.novelty == "proportional":
            return max(1, round(self.proportional_rate * request.pool_size))
        return int(self.novelty)

    def _sample_text(self, rng: random.Random, idx: int) -> str:
        kind = rng.choice(("triangle", "rectangle", "circle"))
        if kind == "triangle":
            a, b = rng.randint(3, 8), rng.randint(3, 8)
            question = (f"Right triangle ABC has legs of length {a} and {b} "
                        f"as drawn. What is its area?")
            answer = _fmt_num(a * b / 2)
            body = (f"# entity: triangle_abc\n"
                    f"d.polygon([(100, 380), (100, {380 - a * 30}), ({100 + b * 30}, 380)],"
                    f" outline=\"black\")\n"
                    f"d.text((88, 384), \"A\", fill=\"black\")\n"
                    f"d.text((88, {380 - a * 30 - 12}), \"B\", fill=\"black\")\n"
                    f"d.text(({100 + b * 30 + 6}, 384), \"C\", fill=\"black\")")
            thought = "Mark the right angle at A to confirm which sides are the legs."
            step_body = ("d.rectangle([100, 368, 112, 380], outline=\"red\")")
            entity = "right_angle_marker"
        elif kind == "rectangle":
            w, h = rng.randint(4, 9), rng.randint(3, 7)
            question = (f"Rectangle ABCD has width {w} and height {h} as drawn. "
                        f"What is its perimeter?")
            answer = _fmt_num(2 * (w + h))
            body = (f"# entity: rect_abcd\n"
                    f"d.rectangle([120, 120, {120 + w * 40}, {120 + h * 40}],"
                    f" outline=\"black\")\n"
                    f"d.text((108, 108), \"A\", fill=\"black\")\n"
                    f"d.text(({120 + w * 40 + 6}, {120 + h * 40 + 4}), \"C\", fill=\"black\")")
            thought = "Draw the diagonal AC to split the rectangle into two triangles."
            step_body = (f"d.line([120, 120, {120 + w * 40}, {120 + h * 40}],"
                         f" fill=\"red\", width=2)")
            entity = "diagonal_ac"
        else:
            r = rng.randint(3, 9)
            question = (f"Circle O is drawn with radius {r}. What is its diameter?")
            answer = _fmt_num(2 * r)
            body = (f"# entity: circle_o\n"
                    f"d.ellipse([{320 - r * 20}, {240 - r * 20}, {320 + r * 20},"
                    f" {240 + r * 20}], outline=\"black\")\n"
                    f"d.text((316, 234), \"O\", fill=\"black\")")
            thought = "Draw a diameter through O to relate it to the radius."
            step_body = (f"d.line([{320 - r * 20}, 240, {320 + r * 20}, 240],"
                         f" fill=\"red\", width=2)")
            entity = "diameter_line"
        code = _FIGURE_CODE.format(body=body)
        step_code = _ANNOTATE_CODE.format(entity=entity, body=step_body)
        return (
            "<<<sample>>>\n"
            f"<<<question>>>{question}<<</question>>>\n"
            f"<<<answer>>>{answer}<<</answer>>>\n"
            "<<<original_code>>>\n" + code + "<<</original_code>>>\n"
            "<<<step>>>\n"
            f"<<<thought>>>{thought}<<</thought>>>\n"
            "<<<code>>>\n" + step_code + "<<</code>>>\n"
            "<<</step>>>\n"
            "<<</sample>>>\n"
        )

    def generate(self, request: GenRequest, context: Sequence[Any] = ()) -> GenBatch:
        rng = _derive_rng(self.seed, request.tag)
        parts = [self._sample_text(rng, i) for i in range(self.samples_per_call)]
        novelty = self._novelty_for(request)
        predict_kind = "tool" if request.mode == "from_knowledge" else "concept"
        for i in range(novelty):
            # hash-heavy names keep fresh predictions below the similarity
            # gate across rounds, so configured novelty rates hold exactly
            h = hashlib.sha256(f"{self.seed}|{request.tag}|{i}".encode()).hexdigest()[:12]
            fresh = f"{predict_kind} {h}"
            if predict_kind == "tool":
                parts.append(f"<<<tool>>>\nname: {fresh}\ndescription: op {h}\n"
                             f"signature: (image, target)\n<<</tool>>>\n")
            else:
                parts.append(f"<<<concept>>>\nname: {fresh}\ndescription: idea {h}\n"
                             f"domain: general\n<<</concept>>>\n")
        # echo only context elements of the predicted type, so re-predicting
        # known elements exercises dedup without cross-type pollution
        for el in context:
            name = getattr(el, "name", str(el))
            desc = getattr(el, "description", "")
            if predict_kind == "tool" and hasattr(el, "signature"):
                parts.append(f"<<<tool>>>\nname: {name}\ndescription: {desc}\n"
                             f"signature: (image)\n<<</tool>>>\n")
            elif predict_kind == "concept" and hasattr(el, "domain"):
                parts.append(f"<<<concept>>>\nname: {name}\ndescription: {desc}\n"
                             f"domain: general\n<<</concept>>>\n")
        return parse_gen_output("".join(parts))

    def repair(self, request: GenRequest) -> tuple[str, str]:
        payload = request.payload or {}
        question = payload.get("question", "")
        answer = payload.get("expected_answer") or payload.get("answer", "")
        return (f"[recalibrated] {question}", answer)

    def extend(self, request: GenRequest) -> ExtensionDraft:
        rng = _derive_rng(self.seed, f"extend|{request.tag}")
        payload = request.payload or {}
        original_entities = extract_entities(payload.get("original_code", ""))
        step_entities: list[str] = []
        for step in payload.get("steps", []):
            step_entities.extend(extract_entities(step.get("code") or ""))
        depth = int(payload.get("difficulty_depth", 0))
        if request.mode == "extend_sequential" and step_entities:
            references = [step_entities[-1]]
        else:
            references = [original_entities[0] if original_entities else "figure"]
        entity = f"aux_box_{depth + 1}"
        x = 20 + 30 * depth
        body = f"d.rectangle([{x}, 20, {x + 24}, 44], outline=\"blue\", width=2)"
        code = _ANNOTATE_CODE.format(entity=entity, body=body)
        regions = rng.randint(2, 5)
        question = (payload.get("question", "") +
                    f" After adding auxiliary box {depth + 1}, how many marked "
                    f"constructions does the figure carry?")
        text = (
            "<<<extension>>>\n"
            f"<<<question>>>{question}<<</question>>>\n"
            f"<<<answer>>>{regions}<<</answer>>>\n"
            f"<<<thought>>>Add one auxiliary box building on {references[0]}.<<</thought>>>\n"
            "<<<code>>>\n" + code + "<<</code>>>\n"
            f"<<<references>>>{', '.join(references)}<<</references>>>\n"
            "<<</extension>>>\n"
        )
        return parse_extension_output(text)


def make_generator(spec: str, transcripts: TranscriptSink | None = None,
                   samples_per_call: int = DEFAULT_SAMPLES_PER_CALL):
    """Build a generator from a config string: ``mock:<seed>`` or ``env``."""
    if spec.startswith("mock:"):
        return MockGenerator(seed=int(spec.split(":", 1)[1]),
                             samples_per_call=samples_per_call)
    if spec == "env":
        return RemoteGenerator(EndpointConfig.from_env(), transcripts=transcripts,
                               samples_per_call=samples_per_call)
    raise GatewayError(f"unknown generator spec {spec!r}")
