"""Perception scene synthesis: exact-coordinate scenes, rendering, and questions.

Coordinates are generated first and the drawing code is templated from
them, so every tag is ground truth by construction — no image analysis is
ever needed. Relations are built constructively on the integer grid
(points on a line are lattice points of the line's direction vector), so
geometric checks hold exactly, well inside the 0.5 px tolerance.

Questions come in three levels: surface (read a tagged coordinate),
semantic (identify a point by spatial role), and integrated (compute a
derived quantity analytically).
"""

from __future__ import annotations

import logging
import random
import string
from dataclasses import dataclass, field

from . import datamodel as dm
from . import forest as ft
from .executor import WorkerPool, render_original

log = logging.getLogger(__name__)

CANVAS_W, CANVAS_H = 640, 480
MARGIN = 30
COUNT_MEAN, COUNT_STD = 8.0, 2.0  # variance 4
COUNT_CLAMP = (2, 20)

ELEMENT_KINDS = ("point", "line", "angle", "circle", "text", "symbol")
RELATION_KINDS = ("point_on_line", "point_on_circle",
                  "point_inside_circle", "point_outside_circle")
TEXT_WORDS = ("base", "height", "radius", "axis", "origin", "north")
LEVELS = ("surface", "semantic", "integrated")


class PerceptionError(Exception):
    pass


@dataclass(frozen=True)
class CoordinateTag:
    label: str
    x: int
    y: int
    role: str = "point"

    def to_dict(self) -> dict:
        return {"label": self.label, "x": self.x, "y": self.y, "role": self.role}


@dataclass
class SceneSpec:
    elements: list[dict] = field(default_factory=list)
    relations: list[dict] = field(default_factory=list)
    count: int = 0
    concepts: tuple[str, ...] = ()
    seed: int = 0

    def validate(self) -> None:
        if self.count != len(self.elements):
            raise PerceptionError(f"count {self.count} != |elements| {len(self.elements)}")
        labels = {e["label"] for e in self.elements}
        for rel in self.relations:
            for end in ("subject", "object"):
                if rel[end] not in labels:
                    raise PerceptionError(f"relation endpoint {rel[end]!r} names no element")
        for tag in self.tags():
            if not (0 <= tag.x < CANVAS_W and 0 <= tag.y < CANVAS_H):
                raise PerceptionError(f"tag {tag.label} at ({tag.x}, {tag.y}) "
                                      f"is outside the canvas")

    def element(self, label: str) -> dict:
        for e in self.elements:
            if e["label"] == label:
                return e
        raise PerceptionError(f"no element labeled {label!r}")

    def tags(self) -> list[CoordinateTag]:
        out = []
        for e in self.elements:
            p = e["params"]
            if e["kind"] == "point":
                out.append(CoordinateTag(e["label"], p["x"], p["y"], "point"))
            elif e["kind"] == "circle":
                out.append(CoordinateTag(e["label"], p["cx"], p["cy"], "center"))
            elif e["kind"] == "angle":
                out.append(CoordinateTag(e["label"], p["vx"], p["vy"], "vertex"))
            elif e["kind"] == "text":
                out.append(CoordinateTag(e["label"], p["x"], p["y"], "text"))
            elif e["kind"] == "symbol":
                out.append(CoordinateTag(e["label"], p["x"], p["y"], "symbol"))
        return out


def sample_count(rng: random.Random) -> int:
    """Element count: rounded normal draw (mean 8, sd 2) clamped to [2, 20]."""
    draw = round(rng.gauss(COUNT_MEAN, COUNT_STD))
    return max(COUNT_CLAMP[0], min(COUNT_CLAMP[1], draw))


def _free_xy(rng: random.Random) -> tuple[int, int]:
    return (rng.randint(MARGIN, CANVAS_W - MARGIN - 1),
            rng.randint(MARGIN, CANVAS_H - MARGIN - 1))


def _in_bounds(x: int, y: int) -> bool:
    return MARGIN <= x < CANVAS_W - MARGIN and MARGIN <= y < CANVAS_H - MARGIN


_DIRECTIONS = ((1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (1, -1), (2, -1), (1, -2))


def _point_labels():
    for ch in string.ascii_uppercase:
        yield ch
    i = 2
    while True:
        for ch in string.ascii_uppercase:
            yield f"{ch}{i}"
        i += 1


def sample_scene(forest: ft.KnowledgeForest | None, rng: random.Random) -> SceneSpec:
    """Draw a scene spec whose relations hold exactly on the integer grid."""
    count = sample_count(rng)
    spec = SceneSpec(count=count, seed=rng.randrange(2**31))
    labels = _point_labels()
    lines: list[dict] = []
    circles: list[dict] = []
    n_line = n_circle = n_angle = n_text = n_symbol = 0

    def add_point_free() -> None:
        x, y = _free_xy(rng)
        spec.elements.append({"kind": "point", "label": next(labels),
                              "params": {"x": x, "y": y}})

    # two anchor points guarantee surface and semantic questions apply
    add_point_free()
    add_point_free()

    while len(spec.elements) < count:
        kind = rng.choices(ELEMENT_KINDS, weights=(40, 20, 8, 15, 10, 7))[0]
        if kind == "point":
            made = False
            if lines and rng.random() < 0.6:
                line = rng.choice(lines)
                p = line["params"]
                k = p["steps"]
                if k >= 2:
                    j = rng.randint(1, k - 1)
                    x = p["x1"] + j * p["dx"] * p["scale"]
                    y = p["y1"] + j * p["dy"] * p["scale"]
                    label = next(labels)
                    spec.elements.append({"kind": "point", "label": label,
                                          "params": {"x": x, "y": y}})
                    spec.relations.append({"kind": "point_on_line",
                                           "subject": label, "object": line["label"]})
                    made = True
            if not made and circles and rng.random() < 0.7:
                circle = rng.choice(circles)
                p = circle["params"]
                variant = rng.choice(("on", "inside", "outside"))
                label = next(labels)
                placed: tuple[int, int] | None = None
                if variant == "on":
                    dx, dy = rng.choice(((p["r"], 0), (-p["r"], 0), (0, p["r"]), (0, -p["r"])))
                    placed = (p["cx"] + dx, p["cy"] + dy)
                    rel = "point_on_circle"
                elif variant == "inside":
                    d = rng.randint(0, max(0, p["r"] - 2))
                    ang = rng.choice(((1, 0), (0, 1), (-1, 0), (0, -1)))
                    placed = (p["cx"] + ang[0] * d, p["cy"] + ang[1] * d)
                    rel = "point_inside_circle"
                else:
                    rel = "point_outside_circle"
                    for _ in range(50):
                        x, y = _free_xy(rng)
                        if (x - p["cx"]) ** 2 + (y - p["cy"]) ** 2 > (p["r"] + 2) ** 2:
                            placed = (x, y)
                            break
                if placed is not None and _in_bounds(*placed):
                    spec.elements.append({"kind": "point", "label": label,
                                          "params": {"x": placed[0], "y": placed[1]}})
                    spec.relations.append({"kind": rel, "subject": label,
                                           "object": circle["label"]})
                    made = True
            if not made:
                add_point_free()
        elif kind == "line":
            for _ in range(50):
                dx, dy = rng.choice(_DIRECTIONS)
                steps = rng.randint(3, 8)
                scale = rng.randint(8, 25)
                x1, y1 = _free_xy(rng)
                x2, y2 = x1 + steps * dx * scale, y1 + steps * dy * scale
                if _in_bounds(x2, y2):
                    n_line += 1
                    el = {"kind": "line", "label": f"l{n_line}",
                          "params": {"x1": x1, "y1": y1, "x2": x2, "y2": y2,
                                     "dx": dx, "dy": dy,
                                     "scale": scale, "steps": steps}}
                    spec.elements.append(el)
                    lines.append(el)
                    break
        elif kind == "circle":
            r = rng.randint(30, 80)
            for _ in range(50):
                cx, cy = _free_xy(rng)
                if (_in_bounds(cx - r, cy - r) and _in_bounds(cx + r, cy + r)):
                    n_circle += 1
                    el = {"kind": "circle", "label": f"c{n_circle}",
                          "params": {"cx": cx, "cy": cy, "r": r}}
                    spec.elements.append(el)
                    circles.append(el)
                    break
        elif kind == "angle":
            for _ in range(50):
                vx, vy = _free_xy(rng)
                d1, d2 = rng.sample(_DIRECTIONS, 2)
                s1, s2 = rng.randint(40, 90), rng.randint(40, 90)
                ax, ay = vx + d1[0] * s1, vy + d1[1] * s1
                bx, by = vx + d2[0] * s2, vy + d2[1] * s2
                if _in_bounds(ax, ay) and _in_bounds(bx, by):
                    n_angle += 1
                    spec.elements.append({"kind": "angle", "label": f"g{n_angle}",
                                          "params": {"vx": vx, "vy": vy,
                                                     "ax": ax, "ay": ay,
                                                     "bx": bx, "by": by}})
                    break
        elif kind == "text":
            x, y = _free_xy(rng)
            n_text += 1
            spec.elements.append({"kind": "text", "label": f"t{n_text}",
                                  "params": {"x": x, "y": y,
                                             "content": rng.choice(TEXT_WORDS)}})
        else:
            x, y = _free_xy(rng)
            n_symbol += 1
            spec.elements.append({"kind": "symbol", "label": f"s{n_symbol}",
                                  "params": {"x": x, "y": y,
                                             "shape": rng.choice(("tick", "arrow"))}})

    if forest is not None and len(forest) > 0:
        arity = min(len(forest), rng.choice((1, 2, 3)))
        spec.concepts = ft.combos(forest.ids(), arity, rng)[0]
    spec.validate()
    return spec


def scene_code(spec: SceneSpec) -> str:
    """Template the drawing code from the spec's exact coordinates."""
    body: list[str] = []
    for e in spec.elements:
        p = e["params"]
        if e["kind"] == "point":
            body.append(f'd.ellipse([{p["x"] - 3}, {p["y"] - 3}, {p["x"] + 3}, '
                        f'{p["y"] + 3}], fill="black")')
            body.append(f'd.text(({p["x"] + 6}, {p["y"] - 14}), "{e["label"]}", '
                        f'fill="black")')
        elif e["kind"] == "line":
            body.append(f'd.line([{p["x1"]}, {p["y1"]}, {p["x2"]}, {p["y2"]}], '
                        f'fill="black", width=2)')
            mx, my = (p["x1"] + p["x2"]) // 2, (p["y1"] + p["y2"]) // 2
            body.append(f'd.text(({mx + 6}, {my + 4}), "{e["label"]}", fill="gray")')
        elif e["kind"] == "circle":
            body.append(f'd.ellipse([{p["cx"] - p["r"]}, {p["cy"] - p["r"]}, '
                        f'{p["cx"] + p["r"]}, {p["cy"] + p["r"]}], outline="black", width=2)')
            body.append(f'd.ellipse([{p["cx"] - 2}, {p["cy"] - 2}, {p["cx"] + 2}, '
                        f'{p["cy"] + 2}], fill="black")')
            body.append(f'd.text(({p["cx"] + 6}, {p["cy"] - 14}), "{e["label"]}", '
                        f'fill="black")')
        elif e["kind"] == "angle":
            body.append(f'd.line([{p["vx"]}, {p["vy"]}, {p["ax"]}, {p["ay"]}], '
                        f'fill="black", width=2)')
            body.append(f'd.line([{p["vx"]}, {p["vy"]}, {p["bx"]}, {p["by"]}], '
                        f'fill="black", width=2)')
            body.append(f'd.arc([{p["vx"] - 14}, {p["vy"] - 14}, {p["vx"] + 14}, '
                        f'{p["vy"] + 14}], 0, 360, fill="gray")')
        elif e["kind"] == "text":
            body.append(f'd.text(({p["x"]}, {p["y"]}), "{p["content"]}", fill="black")')
        else:  # symbol
            if p["shape"] == "tick":
                body.append(f'd.line([{p["x"] - 5}, {p["y"] + 5}, {p["x"] + 5}, '
                            f'{p["y"] - 5}], fill="black", width=2)')
            else:
                body.append(f'd.line([{p["x"] - 12}, {p["y"]}, {p["x"] + 10}, '
                            f'{p["y"]}], fill="black", width=2)')
                body.append(f'd.polygon([({p["x"] + 10}, {p["y"] - 4}), '
                            f'({p["x"] + 10}, {p["y"] + 4}), ({p["x"] + 16}, {p["y"]})], '
                            f'fill="black")')
    lines = "\n".join(body)
    return (
        'from PIL import Image, ImageDraw\n'
        f'img = Image.new("RGB", ({CANVAS_W}, {CANVAS_H}), "white")\n'
        'd = ImageDraw.Draw(img)\n'
        f'{lines}\n'
        'img.save("scene.png")\n'
    )


def render_scene(spec: SceneSpec, pool: WorkerPool,
                 timeout_ms: int = 10_000) -> tuple[dm.ImageRef, list[CoordinateTag]]:
    """Render through the sandbox; tags are the exact templated coordinates."""
    spec.validate()
    ref = render_original(scene_code(spec), pool, timeout_ms=timeout_ms)
    return ref, spec.tags()


def relation_holds(spec: SceneSpec, relation: dict, tol: float = 0.5) -> bool:
    """Numeric check of one relation against the spec coordinates."""
    subject = spec.element(relation["subject"])["params"]
    obj = spec.element(relation["object"])["params"]
    x, y = subject["x"], subject["y"]
    kind = relation["kind"]
    if kind == "point_on_line":
        x1, y1, x2, y2 = obj["x1"], obj["y1"], obj["x2"], obj["y2"]
        length = ((x2 - x1) ** 2 + (y2 - y1) ** 2) ** 0.5
        dist = abs((x2 - x1) * (y1 - y) - (x1 - x) * (y2 - y1)) / length
        return dist <= tol
    dist = ((x - obj["cx"]) ** 2 + (y - obj["cy"]) ** 2) ** 0.5
    if kind == "point_on_circle":
        return abs(dist - obj["r"]) <= tol
    if kind == "point_inside_circle":
        return dist < obj["r"] - 1
    if kind == "point_outside_circle":
        return dist > obj["r"] + 1
    raise PerceptionError(f"unknown relation kind {kind!r}")


def _fmt_coord(x: float, y: float) -> str:
    def f(v: float) -> str:
        return str(int(v)) if float(v).is_integer() else f"{v:.1f}"
    return f"({f(x)}, {f(y)})"


def make_questions(spec: SceneSpec, tags: list[CoordinateTag],
                   rng: random.Random) -> list[dict]:
    """Up to one QA item per level; inapplicable levels are skipped."""
    if not tags:
        raise PerceptionError("cannot build questions without tags")
    items: list[dict] = []
    point_tags = [t for t in tags if t.role == "point"]

    if point_tags:
        t = rng.choice(point_tags)
        items.append({
            "level": "surface",
            "question": f"What are the pixel coordinates of point {t.label} "
                        f"in the image?",
            "answer": f"({t.x}, {t.y})",
        })

    if len(point_tags) >= 2:
        top_left = min(point_tags, key=lambda t: (t.x, t.y))
        items.append({
            "level": "semantic",
            "question": "Among the labeled points, which one is the top-left-most "
                        "(smallest x, ties broken by smallest y)?",
            "answer": top_left.label,
        })

    line_els = [e for e in spec.elements if e["kind"] == "line"]
    if line_els:
        e = rng.choice(line_els)
        p = e["params"]
        mx, my = (p["x1"] + p["x2"]) / 2, (p["y1"] + p["y2"]) / 2
        items.append({
            "level": "integrated",
            "question": f"Segment {e['label']} runs from ({p['x1']}, {p['y1']}) to "
                        f"({p['x2']}, {p['y2']}). What are the coordinates of its "
                        f"midpoint?",
            "answer": _fmt_coord(mx, my),
        })
    elif len(point_tags) >= 2:
        a, b = point_tags[0], point_tags[1]
        mx, my = (a.x + b.x) / 2, (a.y + b.y) / 2
        items.append({
            "level": "integrated",
            "question": f"What are the coordinates of the midpoint between point "
                        f"{a.label} and point {b.label}?",
            "answer": _fmt_coord(mx, my),
        })
    return items


def synth_perception(n: int, forest: ft.KnowledgeForest | None, rng: random.Random,
                     pool: WorkerPool, store: dm.ImageStore,
                     timeout_ms: int = 10_000) -> tuple[list[dm.Sample], int]:
    """Loop sample-render-question until ``n`` items; returns (samples, failures)."""
    if n < 0:
        raise PerceptionError("n must be >= 0")
    samples: list[dm.Sample] = []
    failures = 0
    while len(samples) < n:
        spec = sample_scene(forest, rng)
        code = scene_code(spec)
        try:
            ref, tags = render_scene(spec, pool, timeout_ms=timeout_ms)
        except Exception as exc:
            failures += 1
            log.warning("scene render failed: %s", exc)
            if failures > max(10, 2 * n):
                raise PerceptionError(f"too many render failures ({failures})")
            continue
        for item in make_questions(spec, tags, rng):
            if len(samples) >= n:
                break
            sample = dm.Sample(
                id="",
                question=item["question"],
                answer=item["answer"],
                original_code=code,
                original_image=ref,
                trajectory=dm.Trajectory(),
                knowledge_refs=spec.concepts,
                status="generated",
                provenance=dm.Provenance(generator=f"perception/{item['level']}",
                                         round=0),
                tags=tuple(t.to_dict() for t in tags),
            )
            samples.append(dm.canonicalize(sample, store))
    return samples, failures
