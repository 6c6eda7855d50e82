from __future__ import annotations

import io
import random

import pytest
from PIL import Image, ImageDraw

from vizflow import datamodel as dm
from vizflow import executor as ex
from vizflow import forest as ft


def png_bytes(size=(8, 8), color="white", dot=None, label: str | None = None) -> bytes:
    img = Image.new("RGB", size, color)
    d = ImageDraw.Draw(img)
    if dot is not None:
        d.point(dot, fill="black")
    if label is not None:
        # stamp a hash of the label into the pixels: distinct labels give
        # distinct bytes, so digest-keyed fixtures never collide
        import hashlib
        digest = hashlib.sha256(label.encode()).digest()
        for i, byte in enumerate(digest[:8]):
            d.point((i % size[0], (i * 3) % size[1]), fill=(byte, 0, 0))
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


@pytest.fixture
def store(tmp_path) -> dm.ImageStore:
    return dm.ImageStore(tmp_path / "images")


@pytest.fixture
def white_ref(store) -> dm.ImageRef:
    return store.put(png_bytes())


@pytest.fixture(scope="session")
def session_store(tmp_path_factory) -> dm.ImageStore:
    return dm.ImageStore(tmp_path_factory.mktemp("images"))


@pytest.fixture(scope="session")
def stub_pool(session_store):
    """One stub-worker pool shared across the session; cheap and canned."""
    pool = ex.pool_spawn(ex.stub_worker_cmd(), 2, session_store)
    yield pool
    pool.close()


def make_sample(store: dm.ImageStore, question="What is drawn?", answer="42",
                steps=1, status="generated", depth=0, parent=None,
                code="# entity: figure\nprint('draw')") -> dm.Sample:
    ref = store.put(png_bytes(label=f"orig|{question}"))
    step_list = []
    for i in range(steps):
        out = store.put(png_bytes(label=f"step{i}|{question}"))
        step_list.append(dm.Step(
            thought=f"annotate pass {i}",
            code=f"# entity: mark_{i}\nprint('annotate {i}')",
            output_image=out,
            execution=dm.ExecutionSummary(status="ok")))
    sample = dm.Sample(
        id="",
        question=question,
        answer=answer,
        original_code=code,
        original_image=ref,
        trajectory=dm.Trajectory(steps=tuple(step_list), final_answer=answer),
        knowledge_refs=("kc_x",),
        difficulty_depth=depth,
        status=status,
        provenance=dm.Provenance(generator="fixture", round=1, parent=parent),
    )
    return dm.canonicalize(sample, store)


def seed_forest() -> ft.KnowledgeForest:
    forest = ft.KnowledgeForest()
    for name, desc in [("Pythagorean relation", "right triangle side lengths"),
                       ("Circle circumference", "two pi times the radius"),
                       ("Median of a triangle", "vertex to opposite midpoint")]:
        forest.add_root(ft.KnowledgeConcept.make(name, desc, "Geometry"))
    return forest


def seed_tools() -> ft.ToolSet:
    tools = ft.ToolSet()
    for name, desc in [("auxiliary line", "draw a helper segment"),
                       ("point marker", "mark a labeled point")]:
        tools.add(ft.ToolSpec.make(name, desc, "(image, coords)"))
    return tools


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)
