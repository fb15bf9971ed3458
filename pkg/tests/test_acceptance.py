"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with `pytest -s tests/test_acceptance.py` to see the summary lines.
Each criterion is checked at its stated size and tolerance; the randomized
checks compare the engine against the independent brute-force oracle.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from random import Random

from espatial.bench import generate_dataset, gold_for_item, run_bench, run_reassembly, score_answer
from espatial.bricks import LegoStructure, random_structure, validate
from espatial.config import EngineConfig
from espatial.cot import StepProposal, StepStatus, validate_step
from espatial.errors import EngineError
from espatial.geometry import (
    DEFAULT_THRESHOLDS,
    DUALS,
    SYMMETRIC_KINDS,
    derive_all,
    derive_pairwise,
    distance,
)
from espatial.oracle import TruthObject, brute_force_edges, brute_force_violations
from espatial.planner import parse_command, plan, replay, serialize_command
from espatial.scene import (
    Action,
    DisturbanceEvent,
    GraphHistory,
    Pose,
    SceneGraph,
    apply_event,
    graphs_equal_modulo_t,
)

from .conftest import random_node, random_nodes
from .test_bricks import corrupted_structure, violation_set


def report(criterion: int, ok: bool, detail: str):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def test_c1_relation_derivation_oracle_equivalence():
    """1,000 seeded scenes, 3-12 objects: derive_all == brute force, < 10 s."""
    started = time.perf_counter()
    mismatches = 0
    rng = Random("c1")
    for _ in range(1000):
        nodes = random_nodes(rng, rng.randint(3, 12))
        engine = {e.key(): e.magnitude for e in derive_all(nodes)}
        truth = brute_force_edges(
            [TruthObject(n.id, n.bbox, n.depth_m) for n in nodes], DEFAULT_THRESHOLDS
        )
        if set(engine) != set(truth):
            mismatches += 1
            continue
        if any(abs(engine[k] - truth[k]) > 1e-9 * max(1.0, abs(truth[k])) for k in engine):
            mismatches += 1
    elapsed = time.perf_counter() - started
    report(1, mismatches == 0 and elapsed < 10.0,
           f"1000 scenes, {mismatches} mismatches, {elapsed:.2f}s (< 10 s)")


def test_c2_dual_symmetry_and_triangle_invariants():
    """10,000 pairs: zero dual/symmetry violations; 10,000 triples: triangle
    inequality at 1e-9 relative tolerance."""
    rng = Random("c2")
    violations = 0
    for _ in range(10_000):
        a = random_node(rng, "a")
        b = random_node(rng, "b")
        keys = {(e.subject_id, e.object_id, e.kind) for e in derive_pairwise(a, b)}
        for kind, dual in DUALS.items():
            if (("a", "b", kind) in keys) != (("b", "a", dual) in keys):
                violations += 1
        for kind in SYMMETRIC_KINDS:
            if (("a", "b", kind) in keys) != (("b", "a", kind) in keys):
                violations += 1
    triangle_violations = 0
    for _ in range(10_000):
        a, b, c = (random_node(rng, n) for n in "abc")
        if distance(a, c) > (distance(a, b) + distance(b, c)) * (1 + 1e-9) + 1e-15:
            triangle_violations += 1
    report(2, violations == 0 and triangle_violations == 0,
           f"10k pairs: {violations} rule violations; 10k triples: "
           f"{triangle_violations} triangle violations")


def _random_event(rng: Random, graph: SceneGraph, counter: int):
    kinds = ["noop", "pick", "move", "move_d"]
    if len(graph.nodes) > 1:
        kinds += ["remove", "remove_d"]
    if len(graph.nodes) < 10:
        kinds.append("add")
    kind = rng.choice(kinds)
    if kind == "noop":
        return Action.noop()
    if kind == "add":
        return DisturbanceEvent.add(random_node(rng, f"x{counter}"))
    target = rng.choice(graph.nodes).id
    fresh = random_node(rng, "pose")
    return {
        "pick": Action.pick(target),
        "move": Action.place_object(target, Pose(fresh.bbox, fresh.depth_m)),
        "move_d": DisturbanceEvent.move(target, Pose(fresh.bbox, fresh.depth_m)),
        "remove": Action.remove(target),
        "remove_d": DisturbanceEvent.remove(target),
    }[kind]


def test_c3_dynamics_soundness():
    """200 sequences of <= 50 events: final graph equals from-scratch rebuild
    and history fold; input snapshots unmodified."""
    rng = Random("c3")
    failures = 0
    for _ in range(200):
        initial = SceneGraph.from_nodes(random_nodes(rng, rng.randint(3, 6)))
        snapshot = json.dumps(initial.to_dict(), sort_keys=True)
        history = GraphHistory(initial)
        graph = initial
        for counter in range(rng.randint(1, 50)):
            event = _random_event(rng, graph, counter)
            graph = apply_event(graph, event)
            history.apply(event)
        rebuilt = SceneGraph.from_nodes(graph.nodes, t=graph.t, provenance=graph.provenance)
        ok = (
            graphs_equal_modulo_t(graph, rebuilt)
            and graph.t == rebuilt.t
            and history.current == graph
            and history.replay() == graph
            and history.verify()
            and json.dumps(initial.to_dict(), sort_keys=True) == snapshot
        )
        if not ok:
            failures += 1
    report(3, failures == 0, f"200 sequences, {failures} failures")


def test_c4_validator_equivalence():
    """500 structures (<= 20 bricks, with injected floating/colliding cases):
    validate agrees with exhaustive search and names the same bricks."""
    rng = Random("c4")
    disagreements = 0
    for trial in range(500):
        n = rng.randint(1, 20)
        structure = random_structure(rng, n) if trial % 2 == 0 else corrupted_structure(rng, n)
        if violation_set(validate(structure)) != brute_force_violations(structure):
            disagreements += 1
    report(4, disagreements == 0, f"500 structures, {disagreements} disagreements")


def test_c5_planner_round_trip_and_grammar():
    """500 valid targets (<= 15 bricks): replay(plan) == target, all prefixes
    valid, grammar round-trips; the canonical ordinal example parses."""
    rng = Random("c5")
    failures = 0
    for _ in range(500):
        target = random_structure(rng, rng.randint(1, 15))
        try:
            assembly = plan(target)
        except EngineError:
            failures += 1
            continue
        partial = LegoStructure()
        ok = True
        for command in assembly.commands:
            if parse_command(serialize_command(command)) != command:
                ok = False
                break
            partial = partial.with_brick(command.to_brick())
            if validate(partial):
                ok = False
                break
        from espatial.bricks import equals

        if not (ok and equals(replay(assembly), target)):
            failures += 1
    literal = parse_command("place the red 1×1 block at position (2, 0) in the second layer")
    literal_ok = (
        literal.spec.color == "red"
        and literal.spec.footprint == (1, 1)
        and literal.position == (2, 0)
        and literal.layer == 1
    )
    report(5, failures == 0 and literal_ok,
           f"500 targets, {failures} failures; ordinal example parsed: {literal_ok}")


def test_c6_fallback_reasoning_soundness():
    """1,000-item dataset across all seven categories: run_bench with the
    fallback reasoner scores 1.000; gold verified by a second oracle run."""
    config = EngineConfig()
    dataset = generate_dataset(6001, 1000, config=config)
    categories = {item.category.value for item in dataset.items}
    double_run_ok = True
    for item in dataset.items:
        target = None
        if item.params.get("target") is not None:
            target = LegoStructure.from_dict(item.params["target"])
        value, _units = gold_for_item(
            item.category, item.scene,
            item.params.get("subject_index"), item.params.get("object_index"),
            target, config,
        )
        if not score_answer(value, item.gold_value):
            double_run_ok = False
            break
    result = run_bench(dataset, config)
    report(6, len(categories) == 7 and double_run_ok and result.overall_accuracy == 1.0,
           f"{len(dataset.items)} items over {len(categories)} categories, "
           f"double-oracle ok: {double_run_ok}, overall accuracy {result.overall_accuracy:.3f}")


def test_c7_reassembly_analog():
    """20 seeded reassembly scenarios (<= 12 bricks): 20/20 description
    accuracy and 20/20 simulated assembly success."""
    described = assembled = 0
    for seed in range(20):
        result = run_reassembly(seed, max_bricks=12)
        described += result.description_ok
        assembled += result.assembly_ok
    report(7, described == 20 and assembled == 20,
           f"description {described}/20, assembly {assembled}/20")


def test_c8_step_validation_mutation_and_contradictions():
    """100 small graphs: removing a validated step's cited evidence flips it
    to Rejected; 100 constructed contradictions all Rejected(ContradictsEdge)."""
    rng = Random("c8")
    mutation_failures = 0
    checked = 0
    while checked < 100:
        graph = SceneGraph.from_nodes(random_nodes(rng, rng.randint(2, 5)))
        if not graph.edges:
            continue
        checked += 1
        edge = rng.choice(graph.edges)
        claim = f"{edge.subject_id} {edge.kind.value} {edge.object_id}"
        step = validate_step(StepProposal(claim), graph)
        if step.status is not StepStatus.VALIDATED:
            mutation_failures += 1
            continue
        cited = {r for r in step.grounded_refs if "->" in r}
        kept = tuple(
            e for e in graph.edges
            if f"{e.subject_id}->{e.object_id}:{e.kind.value}" not in cited
        )
        mutated = SceneGraph(t=graph.t, nodes=graph.nodes, edges=kept,
                             provenance=graph.provenance)
        if validate_step(StepProposal(claim), mutated).status is not StepStatus.REJECTED:
            mutation_failures += 1

    contradiction_failures = 0
    for _ in range(100):
        left = random_node(rng, "a")
        right = random_node(rng, "b")
        # force a clear horizontal ordering: b strictly left of a
        left = replace(left, bbox=replace(left.bbox, x_min=0.7, x_max=0.9))
        right = replace(right, bbox=replace(right.bbox, x_min=0.1, x_max=0.3))
        graph = SceneGraph.from_nodes((left, right))
        step = validate_step(StepProposal("a left_of b"), graph)
        if not (step.status is StepStatus.REJECTED and step.rule == "ContradictsEdge"):
            contradiction_failures += 1
    report(8, mutation_failures == 0 and contradiction_failures == 0,
           f"mutations: {mutation_failures} failures over 100 graphs; "
           f"contradictions: {contradiction_failures} failures over 100 cases")


def test_c9_report_reproducibility():
    """Two bench runs with identical seed and config produce byte-identical
    report bodies modulo the wall-clock field."""
    config = EngineConfig()
    dataset = generate_dataset(9001, 60, config=config)
    first = run_bench(dataset, config)
    second = run_bench(dataset, config)
    identical = first.body_without_wallclock() == second.body_without_wallclock()
    report(9, identical, f"byte-identical modulo wall clock: {identical}")
