"""Evolving knowledge and tool sets: combo sampling, similarity-gated expansion, stats.

The knowledge side is a forest of concepts with parent links; the tool
side is a flat named set. Both grow monotonically: expansion only ever
adds elements, and each call is logged as one round so growth curves can
be reconstructed exactly.

Deduplication is greedy cosine-similarity gating in prediction order
against a pluggable embedding backend. The default backend is a
deterministic feature-hashing vectorizer so the whole pipeline runs
offline and reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import yaml

from .datamodel import canonical_json, sha256_hex

DEFAULT_DEDUP_THRESHOLD = 0.85
EMBED_DIM = 256


class ForestError(Exception):
    pass


def normalize_name(name: str) -> str:
    """Trim, case-fold, and collapse whitespace; duplicates mostly differ in surface form."""
    return re.sub(r"\s+", " ", name.strip()).casefold()


def _stable_id(prefix: str, name: str) -> str:
    return prefix + hashlib.sha256(normalize_name(name).encode("utf-8")).hexdigest()[:16]


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic character-trigram feature hashing into a unit vector.

    No model, no network: identical text always maps to the identical
    vector, which keeps dedup decisions reproducible in tests and runs.
    """

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        text = normalize_name(text)
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f"  {text}  "
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            h = hashlib.sha256(gram.encode("utf-8")).digest()
            idx = int.from_bytes(h[:4], "big") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class KnowledgeConcept:
    """A named node of the knowledge system, used as a generation anchor."""

    id: str
    name: str
    description: str = ""
    parent: str | None = None
    domain: str = "general"
    depth: int = 0
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def make(cls, name: str, description: str = "", domain: str = "general",
             parent: str | None = None, depth: int = 0) -> "KnowledgeConcept":
        return cls(id=_stable_id("kc_", name), name=name, description=description,
                   domain=domain, parent=parent, depth=depth)

    def embed_text(self) -> str:
        return f"{self.name}: {self.description}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "parent": self.parent,
            "domain": self.domain,
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeConcept":
        return cls(id=d["id"], name=d["name"], description=d.get("description", ""),
                   parent=d.get("parent"), domain=d.get("domain", "general"),
                   depth=int(d.get("depth", 0)))


@dataclass
class ToolSpec:
    """A visual-operation specification usable inside reasoning code."""

    id: str
    name: str
    description: str = ""
    signature: str = ""
    example_invocation: str | None = None
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def make(cls, name: str, description: str = "", signature: str = "",
             example_invocation: str | None = None) -> "ToolSpec":
        return cls(id=_stable_id("tl_", name), name=name, description=description,
                   signature=signature, example_invocation=example_invocation)

    def embed_text(self) -> str:
        return f"{self.name}: {self.description}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "signature": self.signature,
            "example_invocation": self.example_invocation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolSpec":
        return cls(id=d["id"], name=d["name"], description=d.get("description", ""),
                   signature=d.get("signature", ""),
                   example_invocation=d.get("example_invocation"))


class KnowledgeForest:
    """Id-keyed concept collection with hierarchy and per-round growth log."""

    def __init__(self, embedder: Embedder | None = None):
        self.embedder: Embedder = embedder or HashingEmbedder()
        self._concepts: dict[str, KnowledgeConcept] = {}
        self.round_log: list[list[str]] = []

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, cid: str) -> bool:
        return cid in self._concepts

    def get(self, cid: str) -> KnowledgeConcept:
        return self._concepts[cid]

    def ids(self) -> list[str]:
        return list(self._concepts)

    def concepts(self) -> list[KnowledgeConcept]:
        return list(self._concepts.values())

    def _ensure_embedding(self, c: KnowledgeConcept) -> np.ndarray:
        if c.embedding is None:
            c.embedding = self.embedder.embed(c.embed_text())
        return c.embedding

    def add_root(self, concept: KnowledgeConcept) -> KnowledgeConcept:
        """Insert a seed concept (no round accounting)."""
        concept = replace(concept, parent=concept.parent, depth=concept.depth)
        if concept.parent is not None and concept.parent not in self._concepts:
            raise ForestError(f"parent {concept.parent} not in forest")
        if concept.parent is not None:
            concept.depth = self._concepts[concept.parent].depth + 1
        self._concepts[concept.id] = concept
        return concept

    def domains(self) -> set[str]:
        return {c.domain for c in self._concepts.values()}

    def digest(self) -> str:
        payload = canonical_json(sorted((c.to_dict() for c in self._concepts.values()),
                                        key=lambda d: d["id"]))
        return sha256_hex(payload.encode("utf-8"))

    def check_hierarchy(self) -> None:
        """Full re-walk: parents resolve, no cycles, depths consistent."""
        for c in self._concepts.values():
            seen = {c.id}
            node = c
            while node.parent is not None:
                if node.parent not in self._concepts:
                    raise ForestError(f"{node.id} has dangling parent {node.parent}")
                node = self._concepts[node.parent]
                if node.id in seen:
                    raise ForestError(f"parent cycle through {node.id}")
                seen.add(node.id)
            # walk again to verify depth arithmetic
            depth = 0
            node = c
            while node.parent is not None:
                node = self._concepts[node.parent]
                depth += 1
            if depth != c.depth:
                raise ForestError(f"{c.id} depth {c.depth} != walked depth {depth}")


class ToolSet:
    """Flat id-keyed tool collection with per-round growth log."""

    def __init__(self, embedder: Embedder | None = None):
        self.embedder: Embedder = embedder or HashingEmbedder()
        self._tools: dict[str, ToolSpec] = {}
        self.round_log: list[list[str]] = []

    def __len__(self) -> int:
        return len(self._tools)

    def __contains__(self, tid: str) -> bool:
        return tid in self._tools

    def get(self, tid: str) -> ToolSpec:
        return self._tools[tid]

    def ids(self) -> list[str]:
        return list(self._tools)

    def tools(self) -> list[ToolSpec]:
        return list(self._tools.values())

    def add(self, tool: ToolSpec) -> ToolSpec:
        self._tools[tool.id] = tool
        return tool

    def _ensure_embedding(self, t: ToolSpec) -> np.ndarray:
        if t.embedding is None:
            t.embedding = self.embedder.embed(t.embed_text())
        return t.embedding

    def digest(self) -> str:
        payload = canonical_json(sorted((t.to_dict() for t in self._tools.values()),
                                        key=lambda d: d["id"]))
        return sha256_hex(payload.encode("utf-8"))


def combos(elements: Sequence[str], arity: int, rng: random.Random,
           count: int = 1) -> list[tuple[str, ...]]:
    """Sample ``count`` tuples of distinct element ids, uniformly under ``rng``."""
    if arity < 1:
        raise ForestError("arity must be >= 1")
    if not elements:
        raise ForestError("cannot sample combos from an empty set")
    if arity > len(elements):
        raise ForestError(f"arity {arity} exceeds set size {len(elements)}")
    return [tuple(rng.sample(list(elements), arity)) for _ in range(count)]


def expand_knowledge(predicted: Iterable[KnowledgeConcept], forest: KnowledgeForest,
                     threshold: float = DEFAULT_DEDUP_THRESHOLD) -> list[KnowledgeConcept]:
    """Merge novel predicted concepts into the forest; returns the accepted delta.

    Greedy gating in prediction order: a prediction is accepted only if its
    max cosine similarity against existing plus already-accepted concepts is
    below ``threshold`` and its normalized name is unused. Accepted concepts
    are parented to the nearest existing concept by similarity (new root when
    the forest is empty). The forest is updated in place and the call is
    logged as one round.
    """
    existing = forest.concepts()
    existing_vecs = [forest._ensure_embedding(c) for c in existing]
    used_names = {normalize_name(c.name) for c in existing}
    accepted: list[KnowledgeConcept] = []
    accepted_vecs: list[np.ndarray] = []

    for pred in predicted:
        norm = normalize_name(pred.name)
        if not norm or norm in used_names:
            continue
        vec = forest.embedder.embed(pred.embed_text())
        sims = [cosine(vec, v) for v in existing_vecs + accepted_vecs]
        if sims and max(sims) >= threshold:
            continue
        parent: KnowledgeConcept | None = None
        if existing_vecs:
            parent = existing[int(np.argmax([cosine(vec, v) for v in existing_vecs]))]
        concept = KnowledgeConcept(
            id=_stable_id("kc_", pred.name),
            name=pred.name.strip(),
            description=pred.description,
            parent=parent.id if parent else None,
            domain=pred.domain if pred.domain != "general" or parent is None else parent.domain,
            depth=parent.depth + 1 if parent else 0,
            embedding=vec,
        )
        forest._concepts[concept.id] = concept
        used_names.add(norm)
        accepted.append(concept)
        accepted_vecs.append(vec)

    forest.round_log.append([c.id for c in accepted])
    return accepted


def expand_tools(predicted: Iterable[ToolSpec], tools: ToolSet,
                 threshold: float = DEFAULT_DEDUP_THRESHOLD) -> list[ToolSpec]:
    """Merge novel predicted tools into the set; same gating, no hierarchy."""
    existing = tools.tools()
    existing_vecs = [tools._ensure_embedding(t) for t in existing]
    used_names = {normalize_name(t.name) for t in existing}
    accepted: list[ToolSpec] = []
    accepted_vecs: list[np.ndarray] = []

    for pred in predicted:
        norm = normalize_name(pred.name)
        if not norm or norm in used_names:
            continue
        vec = tools.embedder.embed(pred.embed_text())
        sims = [cosine(vec, v) for v in existing_vecs + accepted_vecs]
        if sims and max(sims) >= threshold:
            continue
        tool = ToolSpec(
            id=_stable_id("tl_", pred.name),
            name=pred.name.strip(),
            description=pred.description,
            signature=pred.signature,
            example_invocation=pred.example_invocation,
            embedding=vec,
        )
        tools._tools[tool.id] = tool
        used_names.add(norm)
        accepted.append(tool)
        accepted_vecs.append(vec)

    tools.round_log.append([t.id for t in accepted])
    return accepted


def stats(forest: KnowledgeForest) -> dict:
    """Exact node, depth, domain, and per-round growth counts."""
    return {
        "node_count": len(forest),
        "max_depth": max((c.depth for c in forest.concepts()), default=0),
        "domain_count": len(forest.domains()),
        "per_round_growth": [len(r) for r in forest.round_log],
    }


# --- persistence --------------------------------------------------------

def save_forest(forest: KnowledgeForest, path: str | Path, round_index: int = 0) -> str:
    """Snapshot as a header line plus one concept record per line; returns digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = forest.digest()
    header = {
        "kind": "forest",
        "round": round_index,
        "digest": digest,
        "count": len(forest),
        "round_log": forest.round_log,
    }
    lines = [canonical_json(header)]
    lines += [canonical_json(c.to_dict()) for c in forest.concepts()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return digest


def load_forest(path: str | Path, embedder: Embedder | None = None) -> KnowledgeForest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if not lines:
        raise ForestError(f"empty forest snapshot {path}")
    header = json.loads(lines[0])
    forest = KnowledgeForest(embedder=embedder)
    for raw in lines[1:]:
        if raw.strip():
            c = KnowledgeConcept.from_dict(json.loads(raw))
            forest._concepts[c.id] = c
    forest.round_log = [list(r) for r in header.get("round_log", [])]
    if header.get("digest") != forest.digest():
        raise ForestError(f"forest snapshot digest mismatch in {path}")
    return forest


def save_tools(tools: ToolSet, path: str | Path, round_index: int = 0) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = tools.digest()
    header = {
        "kind": "tools",
        "round": round_index,
        "digest": digest,
        "count": len(tools),
        "round_log": tools.round_log,
    }
    lines = [canonical_json(header)]
    lines += [canonical_json(t.to_dict()) for t in tools.tools()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return digest


def load_tools(path: str | Path, embedder: Embedder | None = None) -> ToolSet:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    if not lines:
        raise ForestError(f"empty tool snapshot {path}")
    header = json.loads(lines[0])
    tools = ToolSet(embedder=embedder)
    for raw in lines[1:]:
        if raw.strip():
            t = ToolSpec.from_dict(json.loads(raw))
            tools._tools[t.id] = t
    tools.round_log = [list(r) for r in header.get("round_log", [])]
    if header.get("digest") != tools.digest():
        raise ForestError(f"tool snapshot digest mismatch in {path}")
    return tools


def load_seed_concepts(path: str | Path, embedder: Embedder | None = None) -> KnowledgeForest:
    """Load a declarative seed file: a YAML list of {name, description, domain}."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ForestError(f"seed file {path} must be a YAML list")
    forest = KnowledgeForest(embedder=embedder)
    for entry in raw:
        forest.add_root(KnowledgeConcept.make(
            name=entry["name"],
            description=entry.get("description", ""),
            domain=entry.get("domain", "general"),
        ))
    return forest


def load_seed_tools(path: str | Path, embedder: Embedder | None = None) -> ToolSet:
    """Load a declarative seed file: a YAML list of {name, description, signature}."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ForestError(f"seed file {path} must be a YAML list")
    tools = ToolSet(embedder=embedder)
    for entry in raw:
        tools.add(ToolSpec.make(
            name=entry["name"],
            description=entry.get("description", ""),
            signature=entry.get("signature", ""),
            example_invocation=entry.get("example_invocation"),
        ))
    return tools
