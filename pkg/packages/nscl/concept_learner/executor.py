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

"""This module contains the differentiable program executor."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.autodiff import Primitive, Tape
from packages.nscl.concept_learner.concepts import ConceptRegistry
from packages.nscl.concept_learner.dsl import (
    OBJECT_REF,
    OBJECT_SET,
    AttrEqual,
    Comparison,
    Count,
    CountCompare,
    Exist,
    ExistPair,
    Filter,
    Intersect,
    Path,
    Program,
    ProgramNode,
    Query,
    Relate,
    RelateAttrEqual,
    Scene,
    TypedProgram,
    Union as UnionNode,
    Unique,
    type_check_strict,
)
from packages.nscl.concept_learner.exceptions import AnswerError, ExecutionError
from packages.nscl.concept_learner.worldgen import (
    NO,
    YES,
    SceneRecord,
    compounds_of,
    concept_holds,
)


_default_logger = logging.getLogger(__name__)

BOOLEAN_SUPPORT = (YES, NO)
PROBABILITY_FLOOR = 1e-9


class Mode(Enum):
    """Execution modes."""

    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class ExecutorSettings:
    """Constants of the soft semantics."""

    n_max: int = 10
    count_sigma: float = 0.25
    unique_epsilon: float = 1e-6
    compare_margin: float = 0.5


@dataclass(frozen=True)
class SoftSet:
    """Per-object membership probabilities."""

    mask: int


@dataclass(frozen=True)
class ObjDist:
    """A distribution over the objects of a scene."""

    dist: int


@dataclass(frozen=True)
class AnswerDistribution:
    """A distribution over answer tokens."""

    support: Tuple[str, ...]
    probs: int

    def probabilities(self, tape: Tape) -> Dict[str, float]:
        """Get the probability of each token."""
        return dict(zip(self.support, (float(p) for p in tape.value(self.probs))))

    def argmax(self, tape: Tape) -> str:
        """Get the most probable token; ties go to the earliest in the support."""
        return self.support[int(np.argmax(tape.value(self.probs)))]

    def probability(self, tape: Tape, token: str) -> float:
        """Get the probability of a token, 0 outside the support."""
        return self.probabilities(tape).get(token, 0.0)


Value = Union[SoftSet, ObjDist, AnswerDistribution]


@dataclass(frozen=True)
class TraceRecord:
    """The result of one program node."""

    index: int
    path: Path
    op: str
    value: Value


@dataclass
class ExecTrace:
    """Per-node results in evaluation order."""

    records: List[TraceRecord] = field(default_factory=list)

    def record(self, path: Path, op: str, value: Value) -> None:
        """Append the result of a node."""
        self.records.append(TraceRecord(len(self.records), path, op, value))

    def lines(self, tape: Tape) -> List[str]:
        """
        Render the trace as `index op summary` lines.

        :param tape: the tape holding the values.
        :return: one line per node.
        """
        rendered = []
        for record in self.records:
            value = record.value
            if isinstance(value, SoftSet):
                summary = "mask=" + _vector(tape.value(value.mask))
            elif isinstance(value, ObjDist):
                summary = "dist=" + _vector(tape.value(value.dist))
            else:
                probabilities = value.probabilities(tape)
                best = value.argmax(tape)
                summary = f"answer={best} p={probabilities[best]:.3f}"
            rendered.append(f"{record.index} {record.op} {summary}")
        return rendered


def _vector(values: np.ndarray) -> str:
    return "[" + " ".join(f"{v:.3f}" for v in values) + "]"


class Executor:  # pylint: disable=too-many-public-methods
    """Evaluates the operations of the language over one scene."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        scene: SceneRecord,
        registry: ConceptRegistry,
        tape: Tape,
        mode: Mode = Mode.SOFT,
        settings: ExecutorSettings = ExecutorSettings(),
    ) -> None:
        """
        Initialize the executor.

        :param scene: the scene, with features.
        :param registry: the concept registry.
        :param tape: the tape receiving every operation.
        :param mode: soft scores, or ground-truth indicators.
        :param settings: the constants of the soft semantics.
        """
        enforce(scene.n_objects > 0, f"scene {scene.scene_id} has no objects", ExecutionError)
        self.scene = scene
        self.registry = registry
        self.tape = tape
        self.mode = mode
        self.settings = settings
        self.n = scene.n_objects
        self._compounds = compounds_of(registry)

    # scores

    def _object_score(self, i: int, concept: str) -> int:
        if self.mode == Mode.HARD:
            holds = concept_holds(self.scene.objects[i], concept, self._compounds)
            return self.tape.scalar(float(holds))
        return self.registry.object_score(self.tape, self.scene.features[i], concept)

    def _relation_score(self, i: int, j: int, relation: str) -> int:
        if i == j:
            return self.tape.scalar(0.0)
        if self.mode == Mode.HARD:
            return self.tape.scalar(float(self.scene.relation(relation, i, j)))
        return self.registry.relation_score(self.tape, self.scene.pair_features[i, j], relation)

    def _attribute_distribution(self, i: int, attribute: str) -> int:
        if self.mode == Mode.HARD:
            value = self.scene.objects[i].attribute(attribute)
            members = self.registry.namespace(attribute).members
            return self.tape.constant([float(member == value) for member in members])
        return self.registry.query_distribution(self.tape, self.scene.features[i], attribute)

    def _stack(self, nodes: Sequence[int]) -> int:
        return self.tape.apply(Primitive.CONCAT, *nodes)

    def _complement(self, p: int) -> int:
        return self.tape.apply(Primitive.SUB, self.tape.scalar(1.0), p)

    def _boolean(self, p: int) -> AnswerDistribution:
        return AnswerDistribution(BOOLEAN_SUPPORT, self._stack([p, self._complement(p)]))

    # sets

    def exec_scene(self) -> SoftSet:
        """All objects, with certainty."""
        return SoftSet(self.tape.constant(np.ones(self.n)))

    def exec_filter(self, objects: SoftSet, concept: str) -> SoftSet:
        """
        Keep the objects carrying a concept.

        :param objects: the input set.
        :param concept: an object or compound concept.
        :return: the set with mask_i times the score of object i.
        """
        scores = self._stack([self._object_score(i, concept) for i in range(self.n)])
        return SoftSet(self.tape.apply(Primitive.MUL, objects.mask, scores))

    def exec_relate(self, relation: str, ref: ObjDist) -> SoftSet:
        """
        Get the objects in a relation to a referenced object.

        :param relation: a relation concept.
        :param ref: the referenced object.
        :return: the set with mask_i = sum_j dist_j r(i, j), self pairs excluded.
        """
        rows = [
            self.tape.apply(
                Primitive.DOT,
                self._stack([self._relation_score(i, j, relation) for j in range(self.n)]),
                ref.dist,
            )
            for i in range(self.n)
        ]
        return SoftSet(self._stack(rows))

    def exec_relate_same(self, attribute: str, ref: ObjDist) -> SoftSet:
        """
        Get the other objects sharing an attribute value with a referenced object.

        :param attribute: the attribute.
        :param ref: the referenced object.
        :return: the set with mask_i = sum_{j != i} dist_j <q_i, q_j>.
        """
        distributions = [self._attribute_distribution(i, attribute) for i in range(self.n)]
        rows = []
        for i in range(self.n):
            similarities = [
                self.tape.scalar(0.0)
                if i == j
                else self.tape.apply(Primitive.DOT, distributions[i], distributions[j])
                for j in range(self.n)
            ]
            rows.append(self.tape.apply(Primitive.DOT, self._stack(similarities), ref.dist))
        return SoftSet(self._stack(rows))

    def exec_intersect(self, a: SoftSet, b: SoftSet) -> SoftSet:
        """Elementwise product of two sets."""
        return SoftSet(self.tape.apply(Primitive.MUL, a.mask, b.mask))

    def exec_union(self, a: SoftSet, b: SoftSet) -> SoftSet:
        """Probabilistic or of two sets."""
        both = self.tape.apply(Primitive.MUL, a.mask, b.mask)
        either = self.tape.apply(Primitive.ADD, a.mask, b.mask)
        return SoftSet(self.tape.apply(Primitive.SUB, either, both))

    def exec_unique(self, objects: SoftSet) -> ObjDist:
        """
        Select the single object of a set.

        :param objects: the set.
        :return: dist_i = (mask_i + eps) / sum_j (mask_j + eps).
        """
        shifted = self.tape.apply(
            Primitive.ADD, objects.mask, self.tape.constant(np.full(self.n, self.settings.unique_epsilon))
        )
        total = self.tape.apply(Primitive.SUM, shifted)
        spread = self.tape.apply(Primitive.MATVEC, self.tape.constant(np.ones((self.n, 1))), total)
        return ObjDist(self.tape.apply(Primitive.DIV, shifted, spread))

    # answers

    def _count(self, objects: SoftSet) -> int:
        return self.tape.apply(Primitive.SUM, objects.mask)

    def exec_count(self, objects: SoftSet) -> AnswerDistribution:
        """
        Count a set.

        :param objects: the set.
        :return: a discretized Gaussian around the soft count over 0..n_max.
        """
        support = np.arange(self.settings.n_max + 1, dtype=np.float64)
        spread = self.tape.apply(
            Primitive.MATVEC, self.tape.constant(np.ones((len(support), 1))), self._count(objects)
        )
        offsets = self.tape.apply(Primitive.SUB, spread, self.tape.constant(support))
        squared = self.tape.apply(Primitive.MUL, offsets, offsets)
        logits = self.tape.apply(
            Primitive.SCALE, squared, self.tape.scalar(-1.0 / (2.0 * self.settings.count_sigma**2))
        )
        probs = self.tape.apply(Primitive.SOFTMAX, logits)
        return AnswerDistribution(tuple(str(int(k)) for k in support), probs)

    def exec_exist(self, objects: SoftSet) -> AnswerDistribution:
        """Whether a set is non-empty: P(yes) = max_i mask_i."""
        return self._boolean(self.tape.apply(Primitive.MAX, objects.mask))

    def exec_aggregate(self, kind: str, objects: SoftSet) -> AnswerDistribution:
        """
        Aggregate a set into an answer.

        :param kind: `count` or `exist`.
        :param objects: the set.
        :return: the answer distribution.
        """
        enforce(kind in ("count", "exist"), f"unknown aggregate '{kind}'", ExecutionError)
        return self.exec_count(objects) if kind == "count" else self.exec_exist(objects)

    def _marginal(self, attribute: str, ref: ObjDist) -> int:
        terms = [
            self.tape.apply(
                Primitive.SCALE,
                self._attribute_distribution(i, attribute),
                self.tape.apply(Primitive.INDEX, ref.dist, position=i),
            )
            for i in range(self.n)
        ]
        total = terms[0]
        for term in terms[1:]:
            total = self.tape.apply(Primitive.ADD, total, term)
        return total

    def exec_query(self, attribute: str, ref: ObjDist) -> AnswerDistribution:
        """
        Query an attribute of a referenced object.

        :param attribute: the attribute.
        :param ref: the referenced object.
        :return: sum_i dist_i q_i over the attribute's concepts.
        """
        members = tuple(self.registry.namespace(attribute).members)
        return AnswerDistribution(members, self._marginal(attribute, ref))

    def exec_attr_equal(self, attribute: str, a: ObjDist, b: ObjDist) -> AnswerDistribution:
        """Whether two referenced objects share an attribute: P(yes) = <q_a, q_b>."""
        same = self.tape.apply(Primitive.DOT, self._marginal(attribute, a), self._marginal(attribute, b))
        return self._boolean(same)

    def exec_count_compare(self, cmp: Comparison, a: SoftSet, b: SoftSet) -> AnswerDistribution:
        """
        Compare the sizes of two sets.

        :param cmp: greater, less or equal.
        :param a: the first set.
        :param b: the second set.
        :return: sigmoid((s (c_a - c_b) - m) / tau) for greater and less, a Gaussian bump for equal.
        """
        difference = self.tape.apply(Primitive.SUB, self._count(a), self._count(b))
        if cmp == Comparison.EQUAL:
            squared = self.tape.apply(Primitive.MUL, difference, difference)
            exponent = self.tape.apply(
                Primitive.SCALE, squared, self.tape.scalar(-1.0 / (2.0 * self.settings.count_sigma**2))
            )
            return self._boolean(self.tape.apply(Primitive.EXP, exponent))
        sign = 1.0 if cmp == Comparison.GREATER else -1.0
        signed = self.tape.apply(Primitive.SCALE, difference, self.tape.scalar(sign))
        shifted = self.tape.apply(Primitive.SUB, signed, self.tape.scalar(self.settings.compare_margin))
        scaled = self.tape.apply(Primitive.SCALE, shifted, self.tape.scalar(1.0 / self.registry.tau))
        return self._boolean(self.tape.apply(Primitive.SIGMOID, scaled))

    def exec_exist_pair(self, concept_a: str, concept_b: str, relation: str) -> AnswerDistribution:
        """
        Whether some object of one concept is in a relation with another object of a second concept.

        :param concept_a: the first object concept.
        :param concept_b: the second object concept.
        :param relation: the relation.
        :return: P(yes) = max_{i != j} p_a(i) p_b(j) r(i, j).
        """
        if self.n < 2:
            return self._boolean(self.tape.scalar(0.0))
        products = []
        for i in range(self.n):
            for j in range(self.n):
                if i == j:
                    continue
                pair = self.tape.apply(
                    Primitive.MUL, self._object_score(i, concept_a), self._object_score(j, concept_b)
                )
                products.append(self.tape.apply(Primitive.MUL, pair, self._relation_score(i, j, relation)))
        return self._boolean(self.tape.apply(Primitive.MAX, *products))

    def exec_compare(self, node: ProgramNode, *operands: SoftSet) -> AnswerDistribution:
        """
        Dispatch a comparison node.

        :param node: a count-compare or exist-pair node.
        :param operands: the two sets of a count comparison.
        :return: the answer distribution.
        """
        if isinstance(node, CountCompare):
            return self.exec_count_compare(node.cmp, *operands)
        enforce(isinstance(node, ExistPair), f"{node.head} is not a comparison", ExecutionError)
        return self.exec_exist_pair(node.concept_a, node.concept_b, node.relation)  # type: ignore

    # programs

    def run(self, node: ProgramNode, path: Path, trace: ExecTrace) -> Value:
        """
        Evaluate a node and its children, recording each result.

        :param node: the node.
        :param path: the node's path in the program.
        :param trace: the trace receiving the records.
        :return: the node's value.
        """
        inputs = [self.run(child, path + (k,), trace) for k, child in enumerate(node.children())]
        value = self._step(node, inputs)
        trace.record(path, node.head, value)
        return value

    def _step(self, node: ProgramNode, inputs: List[Any]) -> Value:
        # pylint: disable=too-many-return-statements
        if isinstance(node, Scene):
            return self.exec_scene()
        if isinstance(node, Filter):
            return self.exec_filter(inputs[0], node.concept)
        if isinstance(node, Relate):
            return self.exec_relate(node.concept, inputs[0])
        if isinstance(node, RelateAttrEqual):
            return self.exec_relate_same(node.attribute, inputs[0])
        if isinstance(node, Intersect):
            return self.exec_intersect(*inputs)
        if isinstance(node, UnionNode):
            return self.exec_union(*inputs)
        if isinstance(node, Unique):
            return self.exec_unique(inputs[0])
        if isinstance(node, Count):
            return self.exec_aggregate("count", inputs[0])
        if isinstance(node, Exist):
            return self.exec_aggregate("exist", inputs[0])
        if isinstance(node, Query):
            return self.exec_query(node.attribute, inputs[0])
        if isinstance(node, AttrEqual):
            return self.exec_attr_equal(node.attribute, *inputs)
        if isinstance(node, (CountCompare, ExistPair)):
            return self.exec_compare(node, *inputs)
        raise ExecutionError(f"cannot execute {type(node).__name__}")


def _typed(program: Union[Program, TypedProgram], registry: ConceptRegistry) -> TypedProgram:
    if isinstance(program, TypedProgram):
        return program
    return type_check_strict(program, registry)


def execute(  # pylint: disable=too-many-arguments
    program: Union[Program, TypedProgram],
    scene: SceneRecord,
    registry: ConceptRegistry,
    tape: Tape,
    mode: Mode = Mode.SOFT,
    settings: ExecutorSettings = ExecutorSettings(),
) -> Tuple[AnswerDistribution, ExecTrace]:
    """
    Execute a program over a scene.

    :param program: a typed program; plain programs are type checked first.
    :param scene: the scene, with features.
    :param registry: the concept registry.
    :param tape: the tape receiving every operation.
    :param mode: soft scores, or ground-truth indicators.
    :param settings: the constants of the soft semantics.
    :return: the answer distribution and the trace.
    """
    typed = _typed(program, registry)
    enforce(
        typed.result_type not in (OBJECT_SET, OBJECT_REF),
        f"program of type {typed.result_type} has no answer; use resolve_reference",
        ExecutionError,
    )
    trace = ExecTrace()
    result = Executor(scene, registry, tape, mode, settings).run(typed.root, (), trace)
    return result, trace  # type: ignore


def resolve_reference(  # pylint: disable=too-many-arguments
    program: Union[Program, TypedProgram],
    scene: SceneRecord,
    registry: ConceptRegistry,
    tape: Tape,
    mode: Mode = Mode.SOFT,
    settings: ExecutorSettings = ExecutorSettings(),
) -> Tuple[np.ndarray, int]:
    """
    Resolve a referring expression to an object.

    :param program: a program of type ObjectRef.
    :param scene: the scene, with features.
    :param registry: the concept registry.
    :param tape: the tape receiving every operation.
    :param mode: soft scores, or ground-truth indicators.
    :param settings: the constants of the soft semantics.
    :return: the distribution over objects and its most probable index.
    """
    typed = _typed(program, registry)
    enforce(
        typed.result_type == OBJECT_REF,
        f"a referring expression has type ObjectRef, got {typed.result_type}",
        ExecutionError,
    )
    value = Executor(scene, registry, tape, mode, settings).run(typed.root, (), ExecTrace())
    dist = tape.value(value.dist)  # type: ignore
    return dist, int(np.argmax(dist))


def answer_loss(tape: Tape, result: AnswerDistribution, gold: str) -> int:
    """
    Record the negative log probability of the gold answer.

    :param tape: the tape holding the answer distribution.
    :param result: the answer distribution.
    :param gold: the gold answer token.
    :return: a length-1 node; probabilities are floored at 1e-9.
    """
    enforce(
        gold in result.support,
        f"answer '{gold}' is not in the support {list(result.support)}",
        AnswerError,
    )
    p = tape.apply(Primitive.INDEX, result.probs, position=result.support.index(gold))
    floored = tape.apply(Primitive.MAX, p, tape.scalar(PROBABILITY_FLOOR))
    return tape.apply(Primitive.SCALE, tape.apply(Primitive.LOG, floored), tape.scalar(-1.0))


def predict(  # pylint: disable=too-many-arguments
    program: Union[Program, TypedProgram],
    scene: SceneRecord,
    registry: ConceptRegistry,
    mode: Mode = Mode.SOFT,
    settings: ExecutorSettings = ExecutorSettings(),
    tape: Optional[Tape] = None,
) -> str:
    """Get the most probable answer of a program on a scene."""
    tape = tape if tape is not None else Tape()
    result, _ = execute(program, scene, registry, tape, mode, settings)
    return result.argmax(tape)
