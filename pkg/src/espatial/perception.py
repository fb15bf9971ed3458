"""Perception frontend: entity extraction, detection, depth, and scene I/O.

Backends abstract the perception models. The synthetic backend returns
ground truth embedded in the frame, the file backend serves pre-recorded
detections, and the optional remote backend posts to an external endpoint.
The deterministic fallback entity extractor tokenizes a question and matches
against a noun lexicon plus palette colors and brick footprints.
"""

from __future__ import annotations

import json
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Protocol, Sequence

from .bricks import (
    DEFAULT_STUD_FRAME,
    LegoStructure,
    StudFrame,
    brick_label,
    node_footprint,
    random_structure,
)
from .errors import (
    BackendUnavailable,
    EmptyQuestion,
    InvalidDepth,
    MisalignedInputs,
    ParseError,
    SchemaVersionMismatch,
)
from .geometry import DEFAULT_THRESHOLDS, PALETTE, Box, Thresholds, classify_color, color_text
from .scene import ObjectNode, SceneGraph, merge_edge_confidence, size_class_for_box
from .geometry import derive_all

SCENE_SCHEMA = "espatial-scene/1"


@dataclass(frozen=True)
class DetectionRecord:
    """One detected region: label, normalized box, mean color, score."""

    label: str
    bbox: Box
    rgb: tuple[int, int, int]
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ParseError(f"score {self.score} outside [0, 1]", field="score")
        if len(self.rgb) != 3 or not all(0 <= int(v) <= 255 for v in self.rgb):
            raise ParseError(f"bad rgb triple {self.rgb!r}", field="rgb")
        object.__setattr__(self, "rgb", tuple(int(v) for v in self.rgb))


@dataclass(frozen=True)
class PerceptionFrame:
    """One observation: image handle, detections, aligned depth samples."""

    image_ref: str
    detections: tuple[DetectionRecord, ...]
    depths: tuple[float, ...]
    t: int = 0

    def __post_init__(self):
        if len(self.detections) != len(self.depths):
            raise MisalignedInputs(
                f"{len(self.detections)} detections vs {len(self.depths)} depth samples"
            )
        for d in self.depths:
            if not d > 0:
                raise InvalidDepth(f"depth {d!r} must be positive")


@dataclass(frozen=True)
class EntityQueue:
    """Entity labels ordered by decreasing relevance; rank is the position."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ParseError("duplicate labels in entity queue", field="labels")

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)


# --- deterministic fallback extraction --------------------------------------

_NOUNS = frozenset({
    "block", "brick", "cube", "ball", "box", "bottle", "cup", "plate",
    "mug", "can", "book", "bowl", "structure", "tower", "piece", "object",
})

_FOOTPRINT_TOKEN = re.compile(r"^\d+[x×]\d+$")
_TOKEN = re.compile(r"[0-9a-zA-Z×]+")

# Single-word color modifiers: palette entries plus the base hues of
# multi-word entries ("blue" from light_blue/dark_blue).
_COLOR_WORDS = frozenset(PALETTE) | {name.rsplit("_", 1)[-1] for name in PALETTE if "_" in name}


def _normalize_token(token: str) -> str:
    return token.lower().replace("×", "x")


def normalize_label(label: str) -> str:
    return " ".join(_normalize_token(t) for t in _TOKEN.findall(label))


def fallback_extract(question: str) -> EntityQueue:
    """Lexicon-driven extraction: noun phrases with optional color and
    footprint modifiers, ranked by first occurrence."""
    tokens = [_normalize_token(t) for t in _TOKEN.findall(question)]
    phrases: list[str] = []
    for i, token in enumerate(tokens):
        if token not in _NOUNS:
            continue
        parts = [token]
        j = i - 1
        if j >= 0 and _FOOTPRINT_TOKEN.match(tokens[j]):
            parts.insert(0, tokens[j])
            j -= 1
        if j >= 1 and f"{tokens[j - 1]}_{tokens[j]}" in PALETTE:
            parts.insert(0, f"{tokens[j - 1]} {tokens[j]}")
            j -= 2
        elif j >= 0 and tokens[j] in _COLOR_WORDS:
            parts.insert(0, tokens[j])
            j -= 1
        phrase = " ".join(parts)
        if phrase not in phrases:
            phrases.append(phrase)
    return EntityQueue(tuple(phrases))


def _label_matches(entity: str, label: str) -> bool:
    entity_tokens = set(normalize_label(entity).split())
    label_tokens = set(normalize_label(label).split())
    return entity_tokens <= label_tokens


# --- backends ----------------------------------------------------------------

class PerceptionBackend(Protocol):
    name: str

    def extract_entities(self, question: str) -> EntityQueue: ...

    def detect(self, entities: EntityQueue, frame: PerceptionFrame) -> tuple[DetectionRecord, ...]: ...

    def estimate_depth(self, frame: PerceptionFrame) -> tuple[float, ...]: ...


class _GroundTruthBackend:
    """Shared behavior for backends that read truth straight off the frame."""

    name = "ground_truth"

    def extract_entities(self, question: str) -> EntityQueue:
        return fallback_extract(question)

    def detect(self, entities: EntityQueue, frame: PerceptionFrame) -> tuple[DetectionRecord, ...]:
        if not len(entities):
            return frame.detections
        picked: list[DetectionRecord] = []
        seen: set[int] = set()
        for entity in entities:
            for idx, record in enumerate(frame.detections):
                if idx not in seen and _label_matches(entity, record.label):
                    picked.append(record)
                    seen.add(idx)
        return tuple(picked)

    def estimate_depth(self, frame: PerceptionFrame) -> tuple[float, ...]:
        return frame.depths


class SyntheticBackend(_GroundTruthBackend):
    name = "synthetic"


class FileBackend(_GroundTruthBackend):
    """Serves frames saved with :func:`save_scene`."""

    name = "file"

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None

    def load(self) -> PerceptionFrame:
        if self.path is None:
            raise BackendUnavailable("file backend has no path configured")
        return load_scene(self.path)


class RemoteBackend:
    """Posts perception requests to an external model endpoint.

    Never required by tests or the deterministic pipeline; requests respect
    a bounded in-flight limit.
    """

    name = "remote"

    def __init__(self, endpoint: str, token: str | None = None,
                 timeout_s: float = 10.0, max_in_flight: int = 4):
        self.endpoint = endpoint
        self.token = token if token is not None else os.environ.get("ESPATIAL_TOKEN")
        self.timeout_s = timeout_s
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _post(self, op: str, payload: dict) -> dict:
        body = json.dumps({"op": op, **payload}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        request = urllib.request.Request(self.endpoint, data=body, headers=headers)
        with self._gate:
            try:
                with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                    return json.loads(response.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, ValueError) as e:
                raise BackendUnavailable(f"{op} via {self.endpoint}: {e}") from e

    def extract_entities(self, question: str) -> EntityQueue:
        reply = self._post("extract_entities", {"question": question})
        return EntityQueue(tuple(reply["labels"]))

    def detect(self, entities: EntityQueue, frame: PerceptionFrame) -> tuple[DetectionRecord, ...]:
        reply = self._post("detect", {
            "labels": list(entities), "image_ref": frame.image_ref,
        })
        return tuple(
            DetectionRecord(d["label"], Box(*d["bbox"]), tuple(d["rgb"]), d["score"])
            for d in reply["detections"]
        )

    def estimate_depth(self, frame: PerceptionFrame) -> tuple[float, ...]:
        reply = self._post("estimate_depth", {"image_ref": frame.image_ref})
        return tuple(float(v) for v in reply["depths"])


_DEFAULT_BACKEND = SyntheticBackend()


# --- pipeline operations -------------------------------------------------------

def extract_entities(question: str, backend: PerceptionBackend | None = None) -> EntityQueue:
    if not question or not question.strip():
        raise EmptyQuestion("question must be non-empty")
    return (backend or _DEFAULT_BACKEND).extract_entities(question)


def detect(entities: EntityQueue, frame: PerceptionFrame,
           backend: PerceptionBackend | None = None) -> tuple[DetectionRecord, ...]:
    return (backend or _DEFAULT_BACKEND).detect(entities, frame)


def estimate_depth(frame: PerceptionFrame,
                   backend: PerceptionBackend | None = None) -> tuple[float, ...]:
    return (backend or _DEFAULT_BACKEND).estimate_depth(frame)


_MATCH_RADIUS = 0.15  # normalized; node identity matching across steps


def build_graph(
    detections: Sequence[DetectionRecord],
    depths: Sequence[float],
    prev: SceneGraph | None = None,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    provenance: str = "perception",
) -> SceneGraph:
    """Construct the scene graph for one observation.

    Node ids are assigned deterministically over detections sorted by label
    then box origin. With a previous graph, a detection inherits the id of
    the nearest same-label node within the match radius, preserving identity
    and edge confidences across steps.
    """
    if len(detections) != len(depths):
        raise MisalignedInputs(f"{len(detections)} detections vs {len(depths)} depths")

    order = sorted(
        range(len(detections)),
        key=lambda i: (detections[i].label, detections[i].bbox.x_min, detections[i].bbox.y_min),
    )

    matched: dict[int, str] = {}
    taken: set[str] = set()
    if prev is not None:
        for i in order:
            record = detections[i]
            cx, cy = record.bbox.center
            best: tuple[float, str] | None = None
            for node in prev.nodes:
                if node.label != record.label or node.id in taken:
                    continue
                ncx, ncy = node.bbox.center
                gap = ((cx - ncx) ** 2 + (cy - ncy) ** 2) ** 0.5
                if gap <= _MATCH_RADIUS and (best is None or (gap, node.id) < best):
                    best = (gap, node.id)
            if best is not None:
                matched[i] = best[1]
                taken.add(best[1])

    nodes: list[ObjectNode] = []
    counter = 0
    for i in order:
        record = detections[i]
        if i in matched:
            node_id = matched[i]
        else:
            while True:
                node_id = f"obj{counter}"
                counter += 1
                if node_id not in taken:
                    break
            taken.add(node_id)
        footprint = _label_footprint(record.label)
        nodes.append(ObjectNode(
            id=node_id,
            label=record.label,
            color=classify_color(record.rgb),
            bbox=record.bbox,
            depth_m=depths[i],
            size_class=footprint or size_class_for_box(record.bbox),
            attributes={"score": f"{record.score:.3f}"},
        ))

    edges = derive_all(tuple(nodes), thresholds)
    if prev is not None:
        edges = merge_edge_confidence(edges, prev.edges)
    return SceneGraph(
        t=prev.t + 1 if prev is not None else 0,
        nodes=tuple(nodes),
        edges=edges,
        provenance=provenance,
    )


def _label_footprint(label: str) -> str | None:
    for token in normalize_label(label).split():
        if _FOOTPRINT_TOKEN.match(token) and node_footprint(token):
            return token
    return None


# --- synthetic scenes -----------------------------------------------------------

_SYNTH_NOUNS = ("ball", "cup", "box", "bottle", "book", "plate", "mug", "can")


def _jitter_rgb(anchor: tuple[int, int, int], rng: Random, spread: int = 8) -> tuple[int, int, int]:
    return tuple(max(0, min(255, v + rng.randint(-spread, spread))) for v in anchor)


def frame_from_structure(
    structure: LegoStructure,
    rgb_seed: int = 0,
    image_ref: str = "synthetic://structure",
    drop_index: int | None = None,
    stud_frame: StudFrame = DEFAULT_STUD_FRAME,
) -> PerceptionFrame:
    """Render a structure as ground-truth detections through the stud frame.

    ``drop_index`` omits one brick's detection, simulating a missed object.
    """
    rng = Random(rgb_seed)
    detections: list[DetectionRecord] = []
    depths: list[float] = []
    for i, brick in enumerate(structure.bricks):
        bbox, depth = stud_frame.project(brick)
        rgb = _jitter_rgb(PALETTE[brick.spec.color], rng)
        score = round(rng.uniform(0.75, 0.99), 3)
        if i == drop_index:
            continue
        detections.append(DetectionRecord(brick_label(brick.spec), bbox, rgb, score))
        depths.append(depth)
    return PerceptionFrame(image_ref, tuple(detections), tuple(depths))


def synth_structure(seed: int, n_bricks: int) -> LegoStructure:
    """Deterministic random valid structure, with the hue and stacking
    stressors: two bricks are forced to light vs dark blue and a stacked
    pair shares one color when the layout allows."""
    rng = Random(f"structure-{seed}")  # str seeds hash deterministically across processes
    structure = random_structure(rng, n_bricks)
    bricks = list(structure.bricks)
    if len(bricks) >= 2:
        from dataclasses import replace as _replace

        bricks[0] = _replace(bricks[0], spec=_replace(bricks[0].spec, color="light_blue"))
        bricks[1] = _replace(bricks[1], spec=_replace(bricks[1].spec, color="dark_blue"))
        occupied = {cell: i for i, b in enumerate(bricks) for cell in b.cells3()}
        for i, brick in enumerate(bricks):
            if brick.layer == 0:
                continue
            below = next(
                (occupied[(cx, cy, brick.layer - 1)] for cx, cy in brick.cells()
                 if (cx, cy, brick.layer - 1) in occupied),
                None,
            )
            if below is not None and below != i:
                color = bricks[below].spec.color
                bricks[i] = _replace(brick, spec=_replace(brick.spec, color=color))
                break
    return LegoStructure(tuple(bricks))


def synth_scene(
    seed: int,
    n_objects: int,
    brick_mode: bool = False,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> tuple[PerceptionFrame, SceneGraph]:
    """Deterministic ground-truth scene plus its expected graph.

    In brick mode the scene is a rendered valid structure; otherwise objects
    get unique (color, noun) labels, random boxes, and depths in [0.4, 3.0].
    """
    if n_objects < 0:
        raise ValueError("n_objects must be non-negative")
    if brick_mode:
        structure = synth_structure(seed, n_objects)
        frame = frame_from_structure(structure, rgb_seed=seed, image_ref=f"synthetic://{seed}")
    else:
        rng = Random(f"scene-{seed}")
        combos = [(color, noun) for color in PALETTE for noun in _SYNTH_NOUNS]
        chosen = rng.sample(combos, n_objects)
        detections: list[DetectionRecord] = []
        depths: list[float] = []
        for color, noun in chosen:
            width = rng.uniform(0.04, 0.22)
            height = rng.uniform(0.04, 0.22)
            cx = rng.uniform(0.02 + width / 2, 0.98 - width / 2)
            cy = rng.uniform(0.02 + height / 2, 0.98 - height / 2)
            detections.append(DetectionRecord(
                label=f"{color_text(color)} {noun}",
                bbox=Box.from_center(cx, cy, width, height),
                rgb=_jitter_rgb(PALETTE[color], rng),
                score=round(rng.uniform(0.5, 1.0), 3),
            ))
            depths.append(round(rng.uniform(0.4, 3.0), 4))
        frame = PerceptionFrame(f"synthetic://{seed}", tuple(detections), tuple(depths))
    expected = build_graph(frame.detections, frame.depths, thresholds=thresholds,
                           provenance="synthetic")
    return frame, expected


# --- file I/O --------------------------------------------------------------------

def frame_to_dict(frame: PerceptionFrame) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "t": frame.t,
        "image_ref": frame.image_ref,
        "detections": [
            {
                "label": d.label,
                "bbox": list(d.bbox.as_tuple()),
                "rgb": list(d.rgb),
                "score": d.score,
                "depth_m": frame.depths[i],
            }
            for i, d in enumerate(frame.detections)
        ],
    }


def frame_from_dict(data: dict) -> PerceptionFrame:
    schema = data.get("schema")
    if schema != SCENE_SCHEMA:
        raise SchemaVersionMismatch(schema, SCENE_SCHEMA)
    detections: list[DetectionRecord] = []
    depths: list[float] = []
    try:
        for i, d in enumerate(data["detections"]):
            try:
                detections.append(DetectionRecord(
                    d["label"], Box(*(float(v) for v in d["bbox"])),
                    tuple(d["rgb"]), float(d["score"]),
                ))
                depths.append(float(d["depth_m"]))
            except KeyError as e:
                raise ParseError(
                    f"detection {i} missing {e.args[0]!r}", field=f"detections[{i}].{e.args[0]}"
                ) from e
        return PerceptionFrame(data["image_ref"], tuple(detections), tuple(depths),
                               t=int(data.get("t", 0)))
    except KeyError as e:
        raise ParseError(f"scene missing {e.args[0]!r}", field=e.args[0]) from e


def _load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON in {path}: {e.msg}", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ParseError(f"expected a JSON object in {path}")
    return data


def _dump_json(data: dict, path: str | Path):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_scene(frame: PerceptionFrame, path: str | Path):
    _dump_json(frame_to_dict(frame), path)


def load_scene(path: str | Path) -> PerceptionFrame:
    return frame_from_dict(_load_json(path))


def save_graph(graph: SceneGraph, path: str | Path):
    _dump_json(graph.to_dict(), path)


def load_graph(path: str | Path) -> SceneGraph:
    return SceneGraph.from_dict(_load_json(path))
