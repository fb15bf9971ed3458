"""Assembly planning, replay, and the placement command grammar."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from espatial.bricks import (
    FOOTPRINT_PLACEMENTS,
    BrickSpec,
    LegoStructure,
    PlacedBrick,
    equals,
    from_graph,
    random_structure,
    validate,
)
from espatial.errors import GrammarError, InvalidTarget, ReplayViolation
from espatial.geometry import PALETTE
from espatial.planner import (
    AssemblyPlan,
    PlacementCommand,
    parse_command,
    plan,
    replay,
    serialize_command,
    to_actions,
)
from espatial.scene import SceneGraph, apply_action


def command(color, footprint, position, layer) -> PlacementCommand:
    return PlacementCommand(BrickSpec(color, footprint), position, layer)


class TestPlan:
    def test_empty_target(self):
        assert plan(LegoStructure()).commands == ()

    def test_two_brick_tower_only_valid_order(self):
        tower = LegoStructure.of(
            PlacedBrick(BrickSpec("red", (1, 1)), (0, 0), 0),
            PlacedBrick(BrickSpec("green", (1, 1)), (0, 0), 1),
        )
        assembly = plan(tower)
        assert [c.layer for c in assembly.commands] == [0, 1]
        # the reversed order is the only other permutation and must fail
        reversed_plan = AssemblyPlan(tuple(reversed(assembly.commands)), assembly.target_hash)
        with pytest.raises(ReplayViolation) as err:
            replay(reversed_plan)
        assert err.value.index == 0
        assert any("floating" in str(v) for v in err.value.violations)

    def test_round_trip_and_prefix_validity(self, rng):
        for trial in range(50):
            target = random_structure(rng, rng.randint(1, 15))
            assembly = plan(target)
            assert len(assembly.commands) == len(target.bricks)
            partial = LegoStructure()
            for cmd in assembly.commands:
                partial = partial.with_brick(cmd.to_brick())
                assert validate(partial) == [], f"trial {trial}"
            assert equals(partial, target)

    def test_plan_deterministic(self, rng):
        target = random_structure(rng, 10)
        assert plan(target) == plan(target)

    def test_invalid_target_rejected(self):
        floated = LegoStructure.of(PlacedBrick(BrickSpec("red", (1, 1)), (0, 0), 1))
        with pytest.raises(InvalidTarget):
            plan(floated)

    def test_non_canonical_target_rejected(self, rng):
        target = random_structure(rng, 4)
        shifted = LegoStructure(tuple(b.translated(1, 0) for b in target.bricks))
        with pytest.raises(InvalidTarget):
            plan(shifted)


class TestReplay:
    def test_empty(self):
        assert replay(AssemblyPlan((), "x")) == LegoStructure()

    def test_unsupported_first_move(self):
        bad = AssemblyPlan((command("red", (1, 1), (0, 0), 1),), "x")
        with pytest.raises(ReplayViolation) as err:
            replay(bad)
        assert err.value.index == 0

    def test_plan_replays_to_target(self, rng):
        target = random_structure(rng, 12)
        assert equals(replay(plan(target)), target)


class TestGrammar:
    def test_serialize_exact_form(self):
        text = serialize_command(command("red", (1, 1), (2, 0), 1))
        assert text == "place the red 1x1 block at position (2, 0) in layer 1"

    def test_parse_ordinal_layer(self):
        parsed = parse_command("place the red 1×1 block at position (2, 0) in the second layer")
        assert parsed == command("red", (1, 1), (2, 0), 1)

    def test_parse_multiword_color(self):
        parsed = parse_command("place the light blue 2x4 block at position (0, 3) in layer 0")
        assert parsed.spec.color == "light_blue"
        assert parsed.spec.footprint == (2, 4)

    def test_parse_first_layer_is_ground(self):
        parsed = parse_command("place the gray 1x2 block at position (5, 5) in the first layer")
        assert parsed.layer == 0

    def test_grammar_errors_carry_column(self):
        with pytest.raises(GrammarError) as err:
            parse_command("put the red 1x1 block at position (2, 0) in layer 1")
        assert err.value.column == 1
        with pytest.raises(GrammarError) as err:
            parse_command("place the red 1x1 brick at position (2, 0) in layer 1")
        assert err.value.column == 19  # "brick" follows the 18-char prefix
        with pytest.raises(GrammarError):
            parse_command("place the red 1x1 block at position (2, 0) in layer 1 extra")
        with pytest.raises(GrammarError):
            parse_command("place the mauve 1x1 block at position (2, 0) in layer 1")

    def test_round_trip_of_plans(self, rng):
        for _ in range(100):
            cmd = command(
                rng.choice(tuple(PALETTE)),
                rng.choice(FOOTPRINT_PLACEMENTS),
                (rng.randint(0, 30), rng.randint(0, 30)),
                rng.randint(0, 19),
            )
            assert parse_command(serialize_command(cmd)) == cmd

    @given(st.sampled_from(sorted(PALETTE)), st.sampled_from(FOOTPRINT_PLACEMENTS),
           st.integers(0, 99), st.integers(0, 99), st.integers(0, 19))
    @settings(max_examples=100)
    def test_round_trip_property(self, color, footprint, x, y, layer):
        cmd = command(color, footprint, (x, y), layer)
        assert parse_command(serialize_command(cmd)) == cmd


class TestToActions:
    def test_empty(self):
        assert to_actions(AssemblyPlan((), "x")) == []

    def test_single_command_payload(self):
        cmd = command("red", (1, 1), (0, 0), 0)
        actions = to_actions(AssemblyPlan((cmd,), "x"))
        assert len(actions) == 1 and actions[0].command == cmd

    def test_full_plan_through_scene_dynamics(self, rng):
        target = random_structure(rng, 8)
        graph = SceneGraph.empty()
        for action in to_actions(plan(target)):
            graph = apply_action(graph, action)
        assert equals(from_graph(graph), target)
