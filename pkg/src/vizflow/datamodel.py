"""Canonical record types, content-addressed image storage, and shard persistence.

Every other module builds on the types defined here. Serialization is
line-delimited JSON with lexicographically ordered keys so that record
hashing is deterministic and shards can be streamed. Images are stored
as canonically re-encoded PNG under a digest-derived path, which makes
byte-exact reproducibility checks possible.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from PIL import Image

SCHEMA_VERSION = "vizflow.sample.v1"  # unofficial schema, ours alone
MAX_DIFFICULTY_DEPTH = 3
PNG_COMPRESS_LEVEL = 6

SAMPLE_STATUSES = ("generated", "verified", "repaired", "expanded", "rejected")


class DatamodelError(Exception):
    """Base class for datamodel failures."""


class DanglingImageError(DatamodelError):
    """A record references an image digest that is not in the store."""


class DepthLimitError(DatamodelError):
    """difficulty_depth exceeds the hard cap."""


class ImageDecodeError(DatamodelError):
    """Bytes do not decode as the canonical raster format."""


class ShardError(DatamodelError):
    """Shard file or manifest is malformed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace; the hashing form."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_png(img: Image.Image) -> bytes:
    """Re-encode an image to the canonical PNG form.

    Strips metadata and ancillary chunks by rebuilding the pixel buffer,
    then encodes RGB with a fixed compression level. Identical pixels
    always yield identical bytes.
    """
    rgb = img.convert("RGB")
    clean = Image.frombytes("RGB", rgb.size, rgb.tobytes())
    buf = io.BytesIO()
    clean.save(buf, format="PNG", compress_level=PNG_COMPRESS_LEVEL)
    return buf.getvalue()


@dataclass(frozen=True)
class ImageRef:
    """Content address of a stored image."""

    digest: str
    media: str = "png"
    width: int = 0
    height: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "digest": self.digest,
            "media": self.media,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ImageRef":
        return cls(
            digest=d["digest"],
            media=d.get("media", "png"),
            width=int(d.get("width", 0)),
            height=int(d.get("height", 0)),
        )


@dataclass(frozen=True)
class ExecutionSummary:
    """Run-invariant record of one sandbox execution attached to a step.

    Only the outcome is canonical; transport ids and timings vary between
    runs and live in run logs instead, keeping sample ids reproducible.
    """

    status: str

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExecutionSummary":
        return cls(status=d["status"])


@dataclass(frozen=True)
class Step:
    """One reasoning step: a thought, optional code, and its rendered output."""

    thought: str
    code: str | None = None
    output_image: ImageRef | None = None
    execution: ExecutionSummary | None = None

    def validate(self) -> None:
        if (self.code is None) != (self.execution is None):
            raise DatamodelError("step invariant violated: code present iff execution present")
        if self.output_image is not None and self.code is None:
            raise DatamodelError("step invariant violated: output image requires code")

    def to_dict(self) -> dict[str, Any]:
        return {
            "thought": self.thought,
            "code": self.code,
            "output_image": self.output_image.to_dict() if self.output_image else None,
            "execution": self.execution.to_dict() if self.execution else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Step":
        return cls(
            thought=d["thought"],
            code=d.get("code"),
            output_image=ImageRef.from_dict(d["output_image"]) if d.get("output_image") else None,
            execution=ExecutionSummary.from_dict(d["execution"]) if d.get("execution") else None,
        )


@dataclass(frozen=True)
class Trajectory:
    """Ordered reasoning steps plus the final answer, if one was produced."""

    steps: tuple[Step, ...] = ()
    final_answer: str | None = None

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Trajectory":
        return cls(
            steps=tuple(Step.from_dict(s) for s in d.get("steps", [])),
            final_answer=d.get("final_answer"),
        )


@dataclass(frozen=True)
class Provenance:
    """Where a sample came from and how it was vetted."""

    generator: str = "unknown"
    round: int = 0
    parent: str | None = None
    check: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "generator": self.generator,
            "round": self.round,
            "parent": self.parent,
            "check": self.check,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            generator=d.get("generator", "unknown"),
            round=int(d.get("round", 0)),
            parent=d.get("parent"),
            check=d.get("check"),
        )


@dataclass(frozen=True)
class Sample:
    """One synthesized task with its rendering code, images, and lineage.

    ``id`` is the sha256 of the canonical serialization of every other
    field, so any change to content changes identity.
    """

    id: str
    question: str
    answer: str
    original_code: str
    original_image: ImageRef | None
    trajectory: Trajectory
    knowledge_refs: tuple[str, ...] = ()
    tool_refs: tuple[str, ...] = ()
    difficulty_depth: int = 0
    status: str = "generated"
    provenance: Provenance = field(default_factory=Provenance)
    tags: tuple[dict[str, Any], ...] | None = None  # perception extension field

    def body_dict(self) -> dict[str, Any]:
        """All fields except ``id``, in serializable form."""
        return {
            "question": self.question,
            "answer": self.answer,
            "original_code": self.original_code,
            "original_image": self.original_image.to_dict() if self.original_image else None,
            "trajectory": self.trajectory.to_dict(),
            "knowledge_refs": list(self.knowledge_refs),
            "tool_refs": list(self.tool_refs),
            "difficulty_depth": self.difficulty_depth,
            "status": self.status,
            "provenance": self.provenance.to_dict(),
            "tags": [dict(t) for t in self.tags] if self.tags is not None else None,
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.body_dict()
        d["id"] = self.id
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Sample":
        return cls(
            id=d.get("id", ""),
            question=d["question"],
            answer=d["answer"],
            original_code=d["original_code"],
            original_image=ImageRef.from_dict(d["original_image"]) if d.get("original_image") else None,
            trajectory=Trajectory.from_dict(d.get("trajectory", {})),
            knowledge_refs=tuple(d.get("knowledge_refs", ())),
            tool_refs=tuple(d.get("tool_refs", ())),
            difficulty_depth=int(d.get("difficulty_depth", 0)),
            status=d.get("status", "generated"),
            provenance=Provenance.from_dict(d.get("provenance", {})),
            tags=tuple(dict(t) for t in d["tags"]) if d.get("tags") is not None else None,
        )

    def serialize(self) -> str:
        return canonical_json(self.to_dict())


class ImageStore:
    """Content-addressed PNG store: ``<root>/<first-2-hex>/<digest>``.

    Puts are idempotent and safe under concurrent use; readers never see
    partially written objects because writes go through a rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def put(self, data: bytes) -> ImageRef:
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except Exception as exc:
            raise ImageDecodeError(f"bytes do not decode as an image: {exc}") from exc
        if (img.format or "").upper() != "PNG":
            raise ImageDecodeError(f"expected PNG bytes, got {img.format!r}")
        digest = sha256_hex(data)
        path = self._path(digest)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f".{digest}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            with self._lock:
                if not path.exists():
                    os.replace(tmp, path)
                else:
                    tmp.unlink(missing_ok=True)
        return ImageRef(digest=digest, media="png", width=img.width, height=img.height)

    def put_image(self, img: Image.Image) -> ImageRef:
        return self.put(canonical_png(img))

    def get(self, ref: ImageRef | str) -> bytes:
        digest = ref.digest if isinstance(ref, ImageRef) else ref
        path = self._path(digest)
        if not path.exists():
            raise DanglingImageError(f"image {digest} not in store")
        return path.read_bytes()

    def has(self, ref: ImageRef | str) -> bool:
        digest = ref.digest if isinstance(ref, ImageRef) else ref
        return self._path(digest).exists()

    def object_count(self) -> int:
        return sum(1 for p in self.root.glob("*/*") if p.is_file())


def image_put(store: ImageStore, data: bytes) -> ImageRef:
    """Module-level convenience wrapper over :meth:`ImageStore.put`."""
    return store.put(data)


def compute_id(sample: Sample) -> str:
    return sha256_hex(canonical_json(sample.body_dict()).encode("utf-8"))


def canonicalize(sample: Sample, store: ImageStore | None = None) -> Sample:
    """Validate a sample's invariants and return it with its content id.

    When a store is given, every referenced image must resolve in it.
    """
    if sample.difficulty_depth < 0 or sample.difficulty_depth > MAX_DIFFICULTY_DEPTH:
        raise DepthLimitError(
            f"difficulty_depth {sample.difficulty_depth} outside [0, {MAX_DIFFICULTY_DEPTH}]"
        )
    if sample.status not in SAMPLE_STATUSES:
        raise DatamodelError(f"unknown status {sample.status!r}")
    for step in sample.trajectory.steps:
        step.validate()
    if store is not None:
        refs = [sample.original_image] + [s.output_image for s in sample.trajectory.steps]
        for ref in refs:
            if ref is not None and not store.has(ref):
                raise DanglingImageError(f"image {ref.digest} not in store")
    return replace(sample, id=compute_id(sample))


def new_sample(**kwargs: Any) -> Sample:
    """Build a sample with a computed id (no store check)."""
    return canonicalize(Sample(id="", **kwargs))


# --- shard persistence -------------------------------------------------

def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def shard_write(samples: Iterable[Sample], path: str | Path) -> dict[str, Any]:
    """Write one sample per line and a sidecar manifest; returns the manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [s.serialize() for s in samples]
    body = ("\n".join(lines) + "\n") if lines else ""
    data = body.encode("utf-8")
    path.write_bytes(data)
    manifest = {
        "path": path.name,
        "count": len(lines),
        "digest": sha256_hex(data),
        "schema_version": SCHEMA_VERSION,
    }
    _manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def shard_read(path: str | Path, verify_manifest: bool = True) -> list[Sample]:
    """Read a shard back; raises :class:`ShardError` with a line number on damage."""
    path = Path(path)
    if not path.exists():
        raise ShardError(f"shard {path} does not exist")
    data = path.read_bytes()
    if verify_manifest:
        mpath = _manifest_path(path)
        if mpath.exists():
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
            actual = sha256_hex(data)
            if manifest.get("digest") != actual:
                raise ShardError(
                    f"manifest digest mismatch for {path.name}: "
                    f"expected {manifest.get('digest')}, got {actual}"
                )
            if manifest.get("count") != data.decode("utf-8").count("\n"):
                raise ShardError(f"manifest count mismatch for {path.name}")
    samples: list[Sample] = []
    # framing is strictly "\n"; splitlines() would also split on NEL etc.,
    # which are legal raw characters inside ensure_ascii=False records
    for i, raw in enumerate(data.decode("utf-8").split("\n"), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ShardError(f"malformed record: {exc}", line=i) from exc
        try:
            sample = Sample.from_dict(record)
        except (KeyError, TypeError, ValueError) as exc:
            raise ShardError(f"record missing field: {exc}", line=i) from exc
        if compute_id(sample) != sample.id:
            raise ShardError("record id does not match content", line=i)
        samples.append(sample)
    return samples
