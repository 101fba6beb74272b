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

"""This module contains the tabletop action domain: schemas, a forward planner and goal checks."""

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.autodiff import Tape
from packages.nscl.concept_learner.concepts import (
    ConceptKind,
    ConceptRegistry,
    Lexicon,
    derive_seed,
)
from packages.nscl.concept_learner.exceptions import (
    GoalSyntaxError,
    GroundingError,
    PreconditionError,
)
from packages.nscl.concept_learner.worldgen import (
    ATTRIBUTES,
    BASE_COLORS,
    DEFAULT_MIXING_SEED,
    DEFAULT_NOISE,
    RELATION_CONCEPTS,
    ObjectSpec,
    SceneRecord,
    concept_holds,
    gen_scene,
    relation_holds,
    scene_from_objects,
)


_default_logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.1
DEFAULT_DEPTH_CAP = 3
HOLDING = "holding"
HAND_EMPTY = "hand-empty"
SYMBOLIC_ARITY = {HOLDING: 1, HAND_EMPTY: 0}
VERIFICATION_THRESHOLD = 0.9
APPLICABILITY_TOLERANCE = 0.1


class Semantics(Enum):
    """How predicates are decided."""

    GROUND_TRUTH = "gt"
    LEARNED = "learned"


def object_name(index: int) -> str:
    """Get the letter naming an object: a, b, c, ..."""
    return chr(ord("a") + index)


@dataclass(frozen=True)
class TabletopState:
    """Objects on the table and what the hand holds."""

    objects: Tuple[ObjectSpec, ...]
    holding: Optional[int] = None

    @classmethod
    def from_scene(cls, scene: SceneRecord) -> "TabletopState":
        """Start from a scene with an empty hand."""
        return cls(scene.objects)

    def with_object(self, index: int, obj: ObjectSpec, holding: Optional[int] = None) -> "TabletopState":
        """Get a copy with one object replaced and the hand set."""
        objects = list(self.objects)
        objects[index] = obj
        return TabletopState(tuple(objects), holding)

    def scene(
        self, seed: int = 0, mixing_seed: int = DEFAULT_MIXING_SEED, noise: float = DEFAULT_NOISE
    ) -> SceneRecord:
        """Synthesize the features of the state."""
        return scene_from_objects(self.objects, seed, f"state-{seed}", mixing_seed, noise)


@dataclass(frozen=True)
class Predicate:
    """A concept, `holding` or `hand-empty` applied to objects, possibly negated."""

    name: str
    args: Tuple[int, ...] = ()
    negated: bool = False

    def __str__(self) -> str:
        """Render in goal syntax."""
        atom = f"{self.name}({','.join(object_name(i) for i in self.args)})"
        return f"not {atom}" if self.negated else atom


@dataclass(frozen=True)
class Goal:
    """A conjunction of predicates."""

    predicates: Tuple[Predicate, ...]

    def __str__(self) -> str:
        """Render in goal syntax."""
        return " & ".join(str(p) for p in self.predicates)


# literals are (predicate, parameters, negated)
Formula = Tuple[Tuple[str, Tuple[str, ...], bool], ...]
Controller = Callable[[TabletopState, Tuple[int, ...], float], TabletopState]


@dataclass(frozen=True)
class ActionSchema:
    """An action concept: parameters, pre- and postcondition, and a controller."""

    name: str
    parameters: Tuple[str, ...]
    precondition: Formula
    postcondition: Formula
    controller: Controller = field(compare=False)

    def bind(self, formula: Formula, args: Tuple[int, ...]) -> Tuple[Predicate, ...]:
        """Substitute objects for the parameters of a formula."""
        binding = dict(zip(self.parameters, args))
        return tuple(
            Predicate(name, tuple(binding[p] for p in params), negated) for name, params, negated in formula
        )


@dataclass(frozen=True)
class GroundedAction:
    """An action schema applied to objects."""

    schema: str
    args: Tuple[int, ...]

    def __str__(self) -> str:
        """Render as `put-left-of(a,b)`."""
        return f"{self.schema}({','.join(object_name(i) for i in self.args)})"


@dataclass(frozen=True)
class Plan:
    """A sequence of grounded actions."""

    steps: Tuple[GroundedAction, ...] = ()

    def __len__(self) -> int:
        """Get the number of steps."""
        return len(self.steps)

    def lines(self) -> List[str]:
        """Get the plan dump, one action per line."""
        return [str(step) for step in self.steps]


def _pick(state: TabletopState, args: Tuple[int, ...], delta: float) -> TabletopState:
    # pylint: disable=unused-argument
    return TabletopState(state.objects, args[0])


def _placer(relation: str) -> Controller:
    def put(state: TabletopState, args: Tuple[int, ...], delta: float) -> TabletopState:
        x, y = args
        target = state.objects[y]
        obj = state.objects[x]
        if relation == "left-of":
            obj = obj.moved(x=float(np.clip(target.x - delta, 0.0, 1.0)))
        elif relation == "right-of":
            obj = obj.moved(x=float(np.clip(target.x + delta, 0.0, 1.0)))
        elif relation == "front-of":
            obj = obj.moved(y=float(np.clip(target.y + delta, 0.0, 1.0)))
        else:
            obj = obj.moved(y=float(np.clip(target.y - delta, 0.0, 1.0)))
        return state.with_object(x, obj, holding=None)

    return put


ACTION_SCHEMAS: Dict[str, ActionSchema] = {
    "pick": ActionSchema("pick", ("x",), ((HAND_EMPTY, (), False),), ((HOLDING, ("x",), False),), _pick),
    **{
        f"put-{relation}": ActionSchema(
            f"put-{relation}",
            ("x", "y"),
            ((HOLDING, ("x",), False), (relation, ("x", "y"), True)),
            ((relation, ("x", "y"), False), (HAND_EMPTY, (), False)),
            _placer(relation),
        )
        for relation in RELATION_CONCEPTS
    },
}


def schema(name: str) -> ActionSchema:
    """Get an action schema by name."""
    enforce(name in ACTION_SCHEMAS, f"unknown action '{name}'", GroundingError)
    return ACTION_SCHEMAS[name]


def _check_grounding(action: GroundedAction, state: TabletopState) -> ActionSchema:
    action_schema = schema(action.schema)
    enforce(
        len(action.args) == len(action_schema.parameters),
        f"{action.schema} takes {len(action_schema.parameters)} object(s), got {len(action.args)}",
        GroundingError,
    )
    enforce(
        all(0 <= i < len(state.objects) for i in action.args),
        f"{action} refers to a missing object; the state has {len(state.objects)}",
        GroundingError,
    )
    enforce(len(set(action.args)) == len(action.args), f"{action} repeats an object", GroundingError)
    return action_schema


def grounded_actions(state: TabletopState) -> Iterator[GroundedAction]:
    """Enumerate every grounding of every schema, in a fixed order."""
    n = len(state.objects)
    for name, action_schema in ACTION_SCHEMAS.items():
        if len(action_schema.parameters) == 1:
            for i in range(n):
                yield GroundedAction(name, (i,))
        else:
            for i in range(n):
                for j in range(n):
                    if i != j:
                        yield GroundedAction(name, (i, j))


# ---------------------------------------------------------------------------
# predicates


def predicate_holds(predicate: Predicate, state: TabletopState) -> bool:
    """Decide a predicate from ground truth."""
    return _atom_holds(predicate, state) != predicate.negated


def _atom_holds(predicate: Predicate, state: TabletopState) -> bool:
    if predicate.name == HOLDING:
        return state.holding == predicate.args[0]
    if predicate.name == HAND_EMPTY:
        return state.holding is None
    if len(predicate.args) == 2:
        i, j = predicate.args
        return i != j and relation_holds(predicate.name, state.objects[i], state.objects[j])
    return concept_holds(state.objects[predicate.args[0]], predicate.name)


def predicate_probability(
    predicate: Predicate, scene: SceneRecord, state: TabletopState, registry: ConceptRegistry, tape: Tape
) -> float:
    """Decide a predicate with learned concepts; the hand is checked symbolically."""
    if predicate.name in SYMBOLIC_ARITY:
        return float(predicate_holds(predicate, state))
    if len(predicate.args) == 2:
        i, j = predicate.args
        if i == j:
            return float(predicate.negated)
        node = registry.relation_score(tape, scene.pair_features[i, j], predicate.name)
    else:
        node = registry.object_score(tape, scene.features[predicate.args[0]], predicate.name)
    probability = float(tape.value(node)[0])
    return 1.0 - probability if predicate.negated else probability


def goal_holds(goal: Goal, state: TabletopState) -> bool:
    """Decide a goal from ground truth."""
    return all(predicate_holds(p, state) for p in goal.predicates)


def _check_goal(goal: Goal, state: TabletopState) -> None:
    for predicate in goal.predicates:
        enforce(
            all(0 <= i < len(state.objects) for i in predicate.args),
            f"goal predicate {predicate} refers to a missing object",
            GroundingError,
        )


def applicable(  # pylint: disable=too-many-arguments
    action: GroundedAction,
    state: TabletopState,
    registry: Optional[ConceptRegistry] = None,
    semantics: Semantics = Semantics.GROUND_TRUTH,
    seed: int = 0,
    mixing_seed: int = DEFAULT_MIXING_SEED,
    noise: float = DEFAULT_NOISE,
) -> float:
    """
    Get the probability that an action's precondition holds.

    :param action: the grounded action.
    :param state: the state.
    :param registry: the concept registry, for learned semantics.
    :param semantics: ground truth (0 or 1) or learned concepts.
    :param seed: seed of the feature noise of the state.
    :param mixing_seed: seed of the feature mixing.
    :param noise: feature noise level.
    :return: the product of the precondition's predicate probabilities.
    """
    action_schema = _check_grounding(action, state)
    predicates = action_schema.bind(action_schema.precondition, action.args)
    if semantics == Semantics.GROUND_TRUTH:
        return float(all(predicate_holds(p, state) for p in predicates))
    enforce(registry is not None, "learned applicability needs a registry", GroundingError)
    registry.entry(action.schema, ConceptKind.ACTION)  # type: ignore
    scene = state.scene(seed, mixing_seed, noise)
    tape = Tape()
    probability = 1.0
    for predicate in predicates:
        probability *= predicate_probability(predicate, scene, state, registry, tape)  # type: ignore
        if probability == 0.0:
            break
    return probability


def apply_action(action: GroundedAction, state: TabletopState, delta: float = DEFAULT_DELTA) -> TabletopState:
    """
    Run the controller of an action.

    :param action: the grounded action.
    :param state: the state; it is never modified.
    :param delta: placement offset of the put actions.
    :return: the next state.
    """
    action_schema = _check_grounding(action, state)
    if applicable(action, state) < 1.0:
        needs = " & ".join(str(p) for p in action_schema.bind(action_schema.precondition, action.args))
        raise PreconditionError(f"{action} is not applicable: needs {needs}")
    return action_schema.controller(state, action.args, delta)


def execute_plan(plan: Plan, state: TabletopState, delta: float = DEFAULT_DELTA) -> TabletopState:
    """Run every step of a plan."""
    for step in plan.steps:
        state = apply_action(step, state, delta)
    return state


def plan(
    state: TabletopState,
    goal: Goal,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    delta: float = DEFAULT_DELTA,
) -> Optional[Plan]:
    """
    Find a shortest plan reaching a goal by breadth-first forward search.

    :param state: the initial state.
    :param goal: the goal.
    :param depth_cap: maximum plan length.
    :param delta: placement offset of the put actions.
    :return: the plan, or None when no plan of at most `depth_cap` steps exists.
    """
    _check_goal(goal, state)
    if goal_holds(goal, state):
        return Plan()
    frontier: Deque[Tuple[TabletopState, Tuple[GroundedAction, ...]]] = deque([(state, ())])
    seen: Set[TabletopState] = {state}
    while frontier:
        current, steps = frontier.popleft()
        if len(steps) >= depth_cap:
            continue
        for action in grounded_actions(current):
            if applicable(action, current) < 1.0:
                continue
            successor = apply_action(action, current, delta)
            if successor in seen:
                continue
            path = steps + (action,)
            if goal_holds(goal, successor):
                _default_logger.debug(f"plan for {goal}: {[str(a) for a in path]}")
                return Plan(path)
            seen.add(successor)
            frontier.append((successor, path))
    _default_logger.debug(f"no plan of at most {depth_cap} steps for {goal}")
    return None


def verify_goal(  # pylint: disable=too-many-arguments
    steps: Plan,
    state: TabletopState,
    goal: Goal,
    registry: ConceptRegistry,
    delta: float = DEFAULT_DELTA,
    seed: int = 0,
    mixing_seed: int = DEFAULT_MIXING_SEED,
    noise: float = DEFAULT_NOISE,
) -> float:
    """
    Check with learned concepts that a plan achieves a goal.

    :param steps: the plan; it must be applicable from `state`.
    :param state: the initial state.
    :param goal: the goal.
    :param registry: the concept registry; it is only read.
    :param delta: placement offset of the put actions.
    :param seed: seed of the feature noise of the final state.
    :param mixing_seed: seed of the feature mixing.
    :param noise: feature noise level.
    :return: the product of the goal's predicate probabilities in the final state.
    """
    _check_goal(goal, state)
    final = execute_plan(steps, state, delta)
    scene = final.scene(seed, mixing_seed, noise)
    tape = Tape()
    probability = 1.0
    for predicate in goal.predicates:
        probability *= predicate_probability(predicate, scene, final, registry, tape)
    return probability


# ---------------------------------------------------------------------------
# goal syntax

_ATOM = re.compile(r"\s*([a-z][a-z-]*)\s*\(\s*((?:[a-z]\s*(?:,\s*[a-z]\s*)*)?)\)\s*")


def parse_goal(text: str, lexicon: Lexicon) -> Goal:
    """
    Parse a goal such as `left(a,b) & red(a)`.

    :param text: the goal text.
    :param lexicon: resolves predicate words to concepts.
    :return: the goal.
    """
    predicates = []
    for part in text.lower().split("&"):
        match = _ATOM.fullmatch(part)
        if match is None:
            raise GoalSyntaxError(f"cannot parse goal predicate '{part.strip()}'")
        word, arguments = match.groups()
        args = tuple(ord(a.strip()) - ord("a") for a in arguments.split(",") if a.strip())
        if word in SYMBOLIC_ARITY:
            name, arity = word, SYMBOLIC_ARITY[word]
        else:
            name = lexicon.resolve(word)
            enforce(name not in ATTRIBUTES, f"'{word}' names an attribute, not a concept", GoalSyntaxError)
            arity = 2 if name in RELATION_CONCEPTS else 1
        enforce(
            len(args) == arity,
            f"'{word}' takes {arity} object(s), got {len(args)}",
            GoalSyntaxError,
        )
        predicates.append(Predicate(name, args))
    return Goal(tuple(predicates))


# ---------------------------------------------------------------------------
# suite


@dataclass
class ActionSuiteResult:
    """Outcome of the action transfer suite."""

    goals: int = 0
    planned: int = 0
    sound: int = 0
    verified: int = 0
    applicability_checks: int = 0
    applicability_agreements: int = 0
    verification: List[float] = field(default_factory=list)

    @property
    def soundness(self) -> float:
        """Fraction of returned plans reaching their goal under ground truth."""
        return self.sound / self.planned if self.planned else 0.0

    @property
    def verification_rate(self) -> float:
        """Fraction of executed goals verified with probability at least 0.9."""
        return self.verified / self.planned if self.planned else 0.0

    @property
    def applicability_agreement(self) -> float:
        """Fraction of learned applicabilities within 0.1 of ground truth."""
        if not self.applicability_checks:
            return 0.0
        return self.applicability_agreements / self.applicability_checks


def random_goal(state: TabletopState, rng: np.random.Generator) -> Goal:
    """Draw a relational goal, sometimes conjoined with an attribute its subject has."""
    a, b = (int(k) for k in rng.choice(len(state.objects), size=2, replace=False))
    relation = str(rng.choice(list(RELATION_CONCEPTS)))
    predicates = [Predicate(relation, (a, b))]
    if rng.random() < 0.5:
        predicates.append(Predicate(str(rng.choice(state.objects[a].values())), (a,)))
    return Goal(tuple(predicates))


def run_action_suite(  # pylint: disable=too-many-arguments,too-many-locals
    registry: ConceptRegistry,
    seed: int = 0,
    n_goals: int = 100,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    delta: float = DEFAULT_DELTA,
    palette: Sequence[str] = BASE_COLORS,
    mixing_seed: int = DEFAULT_MIXING_SEED,
    noise: float = DEFAULT_NOISE,
) -> ActionSuiteResult:
    """
    Plan for random goals and check the outcomes with learned concepts.

    The registry is only read.

    :param registry: the QA-trained registry.
    :param seed: the suite seed.
    :param n_goals: the number of goals.
    :param depth_cap: maximum plan length.
    :param delta: placement offset of the put actions.
    :param palette: colours of the generated objects.
    :param mixing_seed: seed of the feature mixing.
    :param noise: feature noise level.
    :return: the suite outcome.
    """
    result = ActionSuiteResult()
    for k in range(n_goals):
        goal_seed = derive_seed(seed, "actions", k)
        rng = np.random.default_rng(goal_seed)
        scene = gen_scene(goal_seed, int(rng.integers(3, 5)), palette, mixing_seed, noise)
        state = TabletopState.from_scene(scene)
        goal = random_goal(state, rng)
        result.goals += 1
        for held in (None, int(rng.integers(len(state.objects)))):
            variant = TabletopState(state.objects, held)
            for action in grounded_actions(variant):
                gt = applicable(action, variant)
                learned = applicable(
                    action, variant, registry, Semantics.LEARNED, goal_seed, mixing_seed, noise
                )
                result.applicability_checks += 1
                result.applicability_agreements += int(abs(gt - learned) <= APPLICABILITY_TOLERANCE)
        found = plan(state, goal, depth_cap, delta)
        if found is None:
            _default_logger.warning(f"no plan for goal {goal} within {depth_cap} steps")
            continue
        result.planned += 1
        result.sound += int(goal_holds(goal, execute_plan(found, state, delta)))
        probability = verify_goal(found, state, goal, registry, delta, goal_seed, mixing_seed, noise)
        result.verification.append(probability)
        result.verified += int(probability >= VERIFICATION_THRESHOLD)
    _default_logger.info(
        f"action suite: {result.planned}/{result.goals} planned, soundness {result.soundness:.3f}, "
        f"verification rate {result.verification_rate:.3f}"
    )
    return result
