# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2024 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""Test the actions.py module of the concept learner."""

import pytest

from packages.nscl.concept_learner.actions import (
    ACTION_SCHEMAS,
    APPLICABILITY_TOLERANCE,
    ActionSuiteResult,
    Goal,
    GroundedAction,
    Plan,
    Predicate,
    Semantics,
    TabletopState,
    applicable,
    apply_action,
    execute_plan,
    goal_holds,
    grounded_actions,
    object_name,
    parse_goal,
    plan,
    run_action_suite,
    verify_goal,
)
from packages.nscl.concept_learner.exceptions import (
    GoalSyntaxError,
    GroundingError,
    PreconditionError,
    RegistryError,
    UnknownWordError,
)
from packages.nscl.concept_learner.tests.helpers import make_object
from packages.nscl.concept_learner.worldgen import build_registry


REGISTRY = build_registry(dim=8)


def state_of(*positions: tuple, holding: int = None) -> TabletopState:  # type: ignore
    """Build a state of objects at (x, y) positions."""
    colors = ("red", "blue", "green", "gray")
    objects = tuple(make_object(color=colors[k], x=x, y=y) for k, (x, y) in enumerate(positions))
    return TabletopState(objects, holding)


def test_object_names() -> None:
    """Objects are named by letter."""
    assert [object_name(k) for k in range(3)] == ["a", "b", "c"]


class TestParseGoal:
    """Test `parse_goal`."""

    def test_relation_and_attribute(self) -> None:
        """Short relation words resolve through the lexicon."""
        goal = parse_goal("left(a,b) & red(a)", REGISTRY.lexicon)
        assert goal == Goal((Predicate("left-of", (0, 1)), Predicate("red", (0,))))
        assert str(goal) == "left-of(a,b) & red(a)"

    def test_symbolic_predicates(self) -> None:
        """The hand predicates need no concept."""
        goal = parse_goal("holding(c) & hand-empty()", REGISTRY.lexicon)
        assert goal.predicates == (Predicate("holding", (2,)), Predicate("hand-empty", ()))

    def test_spacing_and_case(self) -> None:
        """Whitespace and case do not matter."""
        goal = parse_goal(" Behind( b , a )  &cube(b)", REGISTRY.lexicon)
        assert goal.predicates == (Predicate("behind", (1, 0)), Predicate("cube", (1,)))

    @pytest.mark.parametrize("text", ["left(a,b", "left a b", "&", "left(1,2)", ""])
    def test_syntax_errors(self, text: str) -> None:
        """Malformed goals raise GoalSyntaxError."""
        with pytest.raises(GoalSyntaxError):
            parse_goal(text, REGISTRY.lexicon)

    def test_arity(self) -> None:
        """Relations take two objects, attributes one."""
        with pytest.raises(GoalSyntaxError, match="takes 2"):
            parse_goal("left(a)", REGISTRY.lexicon)
        with pytest.raises(GoalSyntaxError, match="takes 1"):
            parse_goal("red(a,b)", REGISTRY.lexicon)

    def test_attribute_name(self) -> None:
        """An attribute is not a predicate."""
        with pytest.raises(GoalSyntaxError, match="attribute"):
            parse_goal("color(a)", REGISTRY.lexicon)

    def test_unknown_word(self) -> None:
        """Unknown words raise UnknownWordError."""
        with pytest.raises(UnknownWordError):
            parse_goal("shiny(a)", REGISTRY.lexicon)


class TestActions:
    """Test grounding, applicability and controllers."""

    def test_schemas(self) -> None:
        """Pick and one put per relation."""
        assert set(ACTION_SCHEMAS) == {"pick", "put-left-of", "put-right-of", "put-front-of", "put-behind"}

    def test_grounded_actions(self) -> None:
        """Pick per object and put per ordered pair of distinct objects."""
        actions = list(grounded_actions(state_of((0.2, 0.2), (0.5, 0.5), (0.8, 0.8))))
        assert len(actions) == 3 + 4 * 6
        assert str(actions[0]) == "pick(a)"
        assert GroundedAction("put-left-of", (0, 1)) in actions

    def test_pick_then_put(self) -> None:
        """Picking fills the hand; putting places the object and empties it."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        held = apply_action(GroundedAction("pick", (0,)), state)
        assert held.holding == 0
        placed = apply_action(GroundedAction("put-left-of", (0, 1)), held, delta=0.1)
        assert placed.holding is None
        assert placed.objects[0].x == pytest.approx(0.4)
        assert placed.objects[0].y == pytest.approx(0.5)
        assert state.objects[0].x == pytest.approx(0.8)

    def test_controllers(self) -> None:
        """Each put action establishes its relation."""
        for relation in ("left-of", "right-of", "front-of", "behind"):
            state = state_of((0.5, 0.5), (0.5, 0.5), holding=0)
            placed = apply_action(GroundedAction(f"put-{relation}", (0, 1)), state)
            assert goal_holds(Goal((Predicate(relation, (0, 1)),)), placed)

    def test_controller_clamps(self) -> None:
        """Placements stay on the table."""
        state = state_of((0.5, 0.5), (0.95, 0.02), holding=0)
        placed = apply_action(GroundedAction("put-right-of", (0, 1)), state, delta=0.1)
        assert placed.objects[0].x == 1.0
        placed = apply_action(GroundedAction("put-behind", (0, 1)), state, delta=0.1)
        assert placed.objects[0].y == 0.0

    def test_precondition(self) -> None:
        """Putting with an empty hand, or picking with a full one, fails without side effects."""
        state = state_of((0.2, 0.5), (0.5, 0.5))
        with pytest.raises(PreconditionError):
            apply_action(GroundedAction("put-left-of", (0, 1)), state)
        full = TabletopState(state.objects, 1)
        with pytest.raises(PreconditionError):
            apply_action(GroundedAction("pick", (0,)), full)
        assert full.holding == 1

    @pytest.mark.parametrize(
        "action",
        [GroundedAction("pick", (5,)), GroundedAction("pick", (0, 1)), GroundedAction("put-behind", (0, 0))],
    )
    def test_grounding_errors(self, action: GroundedAction) -> None:
        """Bad groundings raise GroundingError."""
        with pytest.raises(GroundingError):
            applicable(action, state_of((0.2, 0.5), (0.5, 0.5)))

    def test_unknown_action(self) -> None:
        """Unknown schemas raise GroundingError."""
        with pytest.raises(GroundingError, match="unknown action"):
            applicable(GroundedAction("push", (0,)), state_of((0.2, 0.5)))

    def test_put_needs_relation_unmet(self) -> None:
        """Putting an object where it already stands is not applicable."""
        state = state_of((0.2, 0.5), (0.5, 0.5), holding=0)
        assert applicable(GroundedAction("put-left-of", (0, 1)), state) == 0.0
        assert applicable(GroundedAction("put-right-of", (0, 1)), state) == 1.0
        with pytest.raises(PreconditionError, match="not left-of"):
            apply_action(GroundedAction("put-left-of", (0, 1)), state)

    def test_learned_applicability_reads_relation_scores(self) -> None:
        """Learned applicability follows the relation concept, so it can disagree with ground truth."""
        state = state_of((0.2, 0.5), (0.5, 0.5), holding=0)
        action = GroundedAction("put-left-of", (0, 1))
        pair = state.scene().pair_features[0, 1]
        encoded = REGISTRY.feature_maps.pair_encoder @ pair
        agreeing = REGISTRY.copy()
        agreeing.concepts["left-of"].embedding = encoded.copy()
        disagreeing = REGISTRY.copy()
        disagreeing.concepts["left-of"].embedding = -encoded
        assert applicable(action, state) == 0.0
        assert applicable(action, state, agreeing, Semantics.LEARNED) < APPLICABILITY_TOLERANCE
        assert applicable(action, state, disagreeing, Semantics.LEARNED) > 1.0 - APPLICABILITY_TOLERANCE

    def test_learned_applicability_hand(self) -> None:
        """The hand is checked symbolically in learned mode too."""
        state = state_of((0.2, 0.5), (0.5, 0.5))
        assert applicable(GroundedAction("put-right-of", (0, 1)), state, REGISTRY, Semantics.LEARNED) == 0.0
        assert applicable(GroundedAction("pick", (1,)), state, REGISTRY, Semantics.LEARNED) == 1.0

    def test_learned_needs_action_concept(self) -> None:
        """Learned applicability looks the action up in the registry."""
        registry = REGISTRY.copy()
        del registry.concepts["pick"]
        with pytest.raises(RegistryError):
            applicable(GroundedAction("pick", (0,)), state_of((0.2, 0.5)), registry, Semantics.LEARNED)


class TestPlan:
    """Test `plan`."""

    def test_put_left_of(self) -> None:
        """Putting a right object left of another takes a pick and a put."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        goal = parse_goal("left(a,b)", REGISTRY.lexicon)
        found = plan(state, goal)
        assert found is not None
        assert found.lines() == ["pick(a)", "put-left-of(a,b)"]
        assert goal_holds(goal, execute_plan(found, state))

    def test_already_satisfied(self) -> None:
        """A satisfied goal needs no steps."""
        state = state_of((0.2, 0.5), (0.5, 0.5))
        assert plan(state, parse_goal("left(a,b)", REGISTRY.lexicon)) == Plan()

    def test_depth_cap(self) -> None:
        """No plan is returned when the cap is too short."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        assert plan(state, parse_goal("left(a,b)", REGISTRY.lexicon), depth_cap=1) is None

    def test_unreachable(self) -> None:
        """Attributes cannot be changed by acting."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        assert plan(state, parse_goal("blue(a)", REGISTRY.lexicon)) is None

    def test_hand_goal(self) -> None:
        """Holding goals are reached by picking."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        found = plan(state, parse_goal("holding(b)", REGISTRY.lexicon))
        assert found is not None and found.lines() == ["pick(b)"]

    def test_missing_object(self) -> None:
        """Goals about missing objects raise GroundingError."""
        with pytest.raises(GroundingError):
            plan(state_of((0.8, 0.5)), parse_goal("left(a,c)", REGISTRY.lexicon))

    def test_verify_goal_in_unit_interval(self) -> None:
        """Verification is a probability, and the symbolic part is exact."""
        state = state_of((0.8, 0.5), (0.5, 0.5))
        goal = parse_goal("left(a,b) & hand-empty()", REGISTRY.lexicon)
        found = plan(state, goal)
        assert found is not None
        probability = verify_goal(found, state, goal, REGISTRY)
        assert 0.0 <= probability <= 1.0
        assert verify_goal(found, state, parse_goal("holding(a)", REGISTRY.lexicon), REGISTRY) == 0.0


class TestActionSuite:
    """Test `run_action_suite`."""

    def test_sound_and_deterministic(self) -> None:
        """Every returned plan reaches its goal and repeated runs agree."""
        first = run_action_suite(REGISTRY, seed=1, n_goals=8)
        second = run_action_suite(REGISTRY, seed=1, n_goals=8)
        assert first == second
        assert first.goals == 8
        assert first.planned == 8
        assert first.soundness == 1.0
        assert first.applicability_checks > 0
        assert 0.0 <= first.applicability_agreement <= 1.0
        assert len(first.verification) == first.planned

    def test_empty_result(self) -> None:
        """Rates of an empty result are zero."""
        result = ActionSuiteResult()
        assert result.soundness == result.verification_rate == result.applicability_agreement == 0.0
