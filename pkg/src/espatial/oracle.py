"""Brute-force reference evaluation, independent of the engine under test.

Everything here is written straight from box and depth arithmetic with plain
loops, deliberately not calling the relation-derivation, query, structure, or
reasoning modules, so it can label datasets and serve as an independent
oracle in equivalence tests. Only passive data types are shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import Box, Thresholds
from .query import QueryCategory, WorkspaceEnvelope


@dataclass(frozen=True)
class TruthObject:
    """Minimal ground-truth record: a name, a box, and a depth."""

    name: str
    bbox: Box
    depth_m: float


def truth_from_frame(frame) -> list[TruthObject]:
    """Ground-truth objects for a synthetic frame, named by the engine's id
    rule (label then box origin) purely so answers can be compared."""
    order = sorted(
        range(len(frame.detections)),
        key=lambda i: (frame.detections[i].label, frame.detections[i].bbox.x_min,
                       frame.detections[i].bbox.y_min),
    )
    return [
        TruthObject(f"obj{rank}", frame.detections[i].bbox, frame.depths[i])
        for rank, i in enumerate(order)
    ]


def _center3(obj: TruthObject) -> tuple[float, float, float]:
    cx = (obj.bbox.x_min + obj.bbox.x_max) / 2
    cy = (obj.bbox.y_min + obj.bbox.y_max) / 2
    return ((cx - 0.5) * obj.depth_m, (cy - 0.5) * obj.depth_m, obj.depth_m)


def point_distance(p: Sequence[float], q: Sequence[float]) -> float:
    total = 0.0
    for a, b in zip(p, q):
        total += (a - b) * (a - b)
    return math.sqrt(total)


def metric_distance(a: TruthObject, b: TruthObject) -> float:
    return point_distance(_center3(a), _center3(b))


def box_iou(a: Box, b: Box) -> float:
    left = max(a.x_min, b.x_min)
    right = min(a.x_max, b.x_max)
    top = max(a.y_min, b.y_min)
    bottom = min(a.y_max, b.y_max)
    if right <= left or bottom <= top:
        return 0.0
    inter = (right - left) * (bottom - top)
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def box_gap(a: Box, b: Box) -> float:
    gx = 0.0
    if a.x_min > b.x_max:
        gx = a.x_min - b.x_max
    elif b.x_min > a.x_max:
        gx = b.x_min - a.x_max
    gy = 0.0
    if a.y_min > b.y_max:
        gy = a.y_min - b.y_max
    elif b.y_min > a.y_max:
        gy = b.y_min - a.y_max
    return math.sqrt(gx * gx + gy * gy)


def pair_relations(a: TruthObject, b: TruthObject, th: Thresholds) -> dict[str, float]:
    """Relations holding from a to b, each with its magnitude; one ordered
    pair at a time, every kind decided by its own predicate."""
    out: dict[str, float] = {}
    cxa = (a.bbox.x_min + a.bbox.x_max) / 2
    cya = (a.bbox.y_min + a.bbox.y_max) / 2
    cxb = (b.bbox.x_min + b.bbox.x_max) / 2
    cyb = (b.bbox.y_min + b.bbox.y_max) / 2

    if cxb - cxa > th.tau_dir:
        out["left_of"] = cxb - cxa
    if cxa - cxb > th.tau_dir:
        out["right_of"] = cxa - cxb
    if cyb - cya > th.tau_dir:
        out["above"] = cyb - cya
    if cya - cyb > th.tau_dir:
        out["below"] = cya - cyb
    if b.depth_m - a.depth_m > th.tau_depth_m:
        out["in_front_of"] = b.depth_m - a.depth_m
    if a.depth_m - b.depth_m > th.tau_depth_m:
        out["behind"] = a.depth_m - b.depth_m

    d = metric_distance(a, b)
    if d < th.tau_near_m:
        out["near"] = d
    iou = box_iou(a.bbox, b.bbox)
    if iou > th.tau_iou:
        out["overlapping"] = iou
    gap = box_gap(a.bbox, b.bbox)
    if gap < th.tau_adj and not iou > th.tau_iou:
        out["adjacent_to"] = gap

    touching = ("adjacent_to" in out) or ("overlapping" in out)
    if "above" in out and touching and abs(a.depth_m - b.depth_m) <= th.tau_depth_m:
        out["on_top_of"] = out["above"]
    return out


def brute_force_edges(objects: Iterable[TruthObject], th: Thresholds) -> dict[tuple[str, str, str], float]:
    """(subject, object, kind) -> magnitude over every ordered pair."""
    objects = list(objects)
    edges: dict[tuple[str, str, str], float] = {}
    for a in objects:
        for b in objects:
            if a.name == b.name:
                continue
            for kind, magnitude in pair_relations(a, b, th).items():
                edges[(a.name, b.name, kind)] = magnitude
    return edges


_DIRECTIONAL = ("left_of", "right_of", "above", "below", "in_front_of", "behind", "on_top_of")


def answer_from_truth(
    category: QueryCategory,
    objects: Sequence[TruthObject],
    idx_a: int,
    idx_b: int | None,
    workspace: WorkspaceEnvelope,
    th: Thresholds,
    truth_bricks: frozenset | None = None,
    target_bricks: frozenset | None = None,
):
    """Gold answer for one query, evaluated directly over ground truth."""
    if category is QueryCategory.SUCCESS_JUDGMENT:
        return structures_match(truth_bricks, target_bricks), None
    a = objects[idx_a]
    if category is QueryCategory.DISTANCE:
        return metric_distance(a, objects[idx_b]), "m"
    if category is QueryCategory.ADJACENCY:
        rel = pair_relations(a, objects[idx_b], th)
        return ("adjacent_to" in rel) or ("overlapping" in rel), None
    if category is QueryCategory.OVERLAP:
        return "overlapping" in pair_relations(a, objects[idx_b], th), None
    if category is QueryCategory.DIRECTION:
        rel = pair_relations(a, objects[idx_b], th)
        return sorted(k for k in rel if k in _DIRECTIONAL), None
    if category is QueryCategory.REACHABILITY:
        d = point_distance(_center3(a), workspace.base3)
        return workspace.min_reach_m <= d <= workspace.reach_m, None
    if category is QueryCategory.ARM_FEASIBILITY:
        d = point_distance(_center3(a), workspace.base3)
        if not (workspace.min_reach_m <= d <= workspace.reach_m):
            return False, None
        for j, other in enumerate(objects):
            if j == idx_a:
                continue
            if box_iou(a.bbox, other.bbox) > th.tau_iou and \
                    point_distance(_center3(other), workspace.base3) < d:
                return False, None
        return True, None
    raise ValueError(f"unhandled category {category!r}")


# --- brick-world oracles ----------------------------------------------------

def brick_tuples(structure) -> frozenset[tuple[str, int, int, int, int, int]]:
    """Plain-tuple view of a structure's bricks: (color, w, l, x, y, layer)."""
    return frozenset(
        (b.spec.color, b.spec.footprint[0], b.spec.footprint[1], b.x, b.y, b.layer)
        for b in structure.bricks
    )


def _translated_to_origin(bricks: frozenset) -> frozenset:
    if not bricks:
        return bricks
    min_x = min(b[3] for b in bricks)
    min_y = min(b[4] for b in bricks)
    return frozenset((c, w, l, x - min_x, y - min_y, k) for (c, w, l, x, y, k) in bricks)


def structures_match(a: frozenset | None, b: frozenset | None) -> bool:
    """Translation-invariant equality over plain brick tuples."""
    return _translated_to_origin(a or frozenset()) == _translated_to_origin(b or frozenset())


def brute_force_violations(structure) -> set[tuple[str, tuple]]:
    """Exhaustive support and collision scan; returns (kind, brick tuple)
    pairs naming each offending brick."""
    bricks = list(structure.bricks)
    cell_owners: dict[tuple[int, int, int], list[int]] = {}
    for i, brick in enumerate(bricks):
        for dx in range(brick.spec.footprint[0]):
            for dy in range(brick.spec.footprint[1]):
                cell = (brick.x + dx, brick.y + dy, brick.layer)
                cell_owners.setdefault(cell, []).append(i)

    def ident(i: int) -> tuple:
        b = bricks[i]
        return (b.spec.color, b.spec.footprint[0], b.spec.footprint[1], b.x, b.y, b.layer)

    found: set[tuple[str, tuple]] = set()
    for i, brick in enumerate(bricks):
        if brick.x < 0 or brick.y < 0 or brick.layer < 0:
            found.add(("negative_coordinate", ident(i)))
        collides = False
        supported = brick.layer == 0
        for dx in range(brick.spec.footprint[0]):
            for dy in range(brick.spec.footprint[1]):
                cell = (brick.x + dx, brick.y + dy, brick.layer)
                if len(cell_owners.get(cell, ())) > 1:
                    collides = True
                below = (brick.x + dx, brick.y + dy, brick.layer - 1)
                if below in cell_owners:
                    supported = True
        if collides:
            found.add(("cell_collision", ident(i)))
        if not supported:
            found.add(("floating", ident(i)))
    return found
