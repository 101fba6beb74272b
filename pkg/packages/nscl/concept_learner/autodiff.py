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

"""
This module contains a minimal reverse-mode automatic differentiation engine.

Values are 64-bit float vectors (and matrices for the left operand of `matvec`).
Every forward step appends a node to a `Tape`; `backward` walks the tape in
reverse and accumulates vector-Jacobian products into a `GradientMap`.
"""

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum
from typing import (
    Any,
    Callable,
    Dict,
    Hashable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.exceptions import (
    DomainError,
    GradientError,
    NonFiniteValueError,
    ShapeError,
)


_default_logger = logging.getLogger(__name__)

COSINE_NORM_GUARD = 1e-12


class Primitive(Enum):
    """Operation kinds recorded on a tape."""

    CONSTANT = "constant"
    PARAMETER = "parameter"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALE = "scale"
    DOT = "dot"
    SUM = "sum"
    MAX = "max"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOG = "log"
    DIV = "div"
    SOFTMAX = "softmax"
    MATVEC = "matvec"
    COSINE_SIMILARITY = "cosine_similarity"
    CONCAT = "concat"
    INDEX = "index"


LEAF_PRIMITIVES = frozenset({Primitive.CONSTANT, Primitive.PARAMETER})


@dataclass(frozen=True)
class Node:
    """A recorded value on a tape."""

    id: int
    value: np.ndarray
    primitive: Primitive
    inputs: Tuple[int, ...] = ()
    attrs: Tuple[Tuple[str, Any], ...] = ()

    def attr(self, key: str) -> Any:
        """Get a static attribute of the node."""
        return dict(self.attrs)[key]

    def describe(self) -> str:
        """Short human readable description, used in diagnostics."""
        return f"#{self.id} {self.primitive.value} shape={self.value.shape}"


def _frozen(value: np.ndarray) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


class Tape:
    """
    Append-only record of a forward computation.

    A tape is single-writer. Parameters are leaves registered by name; asking for
    the same name twice returns the same node, so a parameter used in several
    places accumulates all of its gradient contributions.
    """

    def __init__(self) -> None:
        """Initialize an empty tape."""
        self.nodes: List[Node] = []
        self.parameters: Dict[int, str] = {}
        self._parameter_ids: Dict[str, int] = {}
        self._memo: Dict[Hashable, int] = {}
        self._sealed = False

    def __len__(self) -> int:
        """Get the number of recorded nodes."""
        return len(self.nodes)

    def _append(
        self,
        value: np.ndarray,
        primitive: Primitive,
        inputs: Sequence[int] = (),
        attrs: Optional[Dict[str, Any]] = None,
    ) -> int:
        enforce(not self._sealed, "tape is sealed during backward", ShapeError)
        node_id = len(self.nodes)
        frozen = _frozen(value)
        enforce(
            bool(np.all(np.isfinite(frozen))),
            f"{primitive.value} produced a non-finite value at node #{node_id}",
            NonFiniteValueError,
        )
        self.nodes.append(
            Node(
                id=node_id,
                value=frozen,
                primitive=primitive,
                inputs=tuple(inputs),
                attrs=tuple(sorted((attrs or {}).items())),
            )
        )
        return node_id

    def constant(self, value: Any) -> int:
        """
        Record a constant leaf.

        :param value: a scalar, vector or matrix.
        :return: the node id.
        """
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        return self._append(array, Primitive.CONSTANT)

    def scalar(self, value: float) -> int:
        """Record a length-1 constant."""
        return self.constant(np.array([value], dtype=np.float64))

    def parameter(self, name: str, value: np.ndarray) -> int:
        """
        Record a trainable leaf, or return the existing node of that name.

        :param name: the parameter name.
        :param value: the current parameter value, copied onto the tape.
        :return: the node id.
        """
        if name in self._parameter_ids:
            return self._parameter_ids[name]
        array = np.asarray(value, dtype=np.float64)
        enforce(array.ndim in (1, 2), f"parameter {name} must be 1-D or 2-D", ShapeError)
        node_id = self._append(array, Primitive.PARAMETER, attrs={"name": name})
        self.parameters[node_id] = name
        self._parameter_ids[name] = node_id
        return node_id

    def value(self, node_id: int) -> np.ndarray:
        """Get the forward value of a node."""
        return self.nodes[node_id].value

    def memoize(self, key: Hashable, build: Callable[[], int]) -> int:
        """
        Return the node cached under `key`, building it on first use.

        :param key: a hashable cache key.
        :param build: builder recording the node on this tape.
        :return: the node id.
        """
        if key not in self._memo:
            self._memo[key] = build()
        return self._memo[key]

    def apply(self, kind: Primitive, *operands: int, **attrs: Any) -> int:
        """Shorthand for `apply_primitive(self, kind, operands, **attrs)`."""
        return apply_primitive(self, kind, list(operands), **attrs)


# ---------------------------------------------------------------------------
# forward rules


def _shapes(values: Sequence[np.ndarray]) -> str:
    return ", ".join(str(v.shape) for v in values)


def _require(condition: bool, kind: Primitive, values: Sequence[np.ndarray], why: str) -> None:
    enforce(
        condition,
        f"{kind.value}: {why}; got shapes [{_shapes(values)}]",
        ShapeError,
    )


def _is_vector(value: np.ndarray) -> bool:
    return value.ndim == 1 and value.size >= 1


def _check_arity(kind: Primitive, values: Sequence[np.ndarray], arity: int) -> None:
    _require(len(values) == arity, kind, values, f"expects {arity} operand(s)")


def _check_same_vectors(kind: Primitive, values: Sequence[np.ndarray]) -> None:
    _check_arity(kind, values, 2)
    a, b = values
    _require(
        _is_vector(a) and _is_vector(b) and a.shape == b.shape,
        kind,
        values,
        "operands must be vectors of equal length",
    )


def _check_single_vector(kind: Primitive, values: Sequence[np.ndarray]) -> None:
    _check_arity(kind, values, 1)
    _require(_is_vector(values[0]), kind, values, "operand must be a vector")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / np.sum(shifted)


def _cosine(a: np.ndarray, b: np.ndarray) -> Tuple[float, float, float]:
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < COSINE_NORM_GUARD or norm_b < COSINE_NORM_GUARD:
        return 0.0, norm_a, norm_b
    return float(np.dot(a, b)) / (norm_a * norm_b), norm_a, norm_b


def _forward(kind: Primitive, values: List[np.ndarray], attrs: Dict[str, Any]) -> np.ndarray:
    # pylint: disable=too-many-return-statements,too-many-branches
    if kind in (Primitive.ADD, Primitive.SUB, Primitive.MUL):
        _check_same_vectors(kind, values)
        a, b = values
        if kind == Primitive.ADD:
            return a + b
        if kind == Primitive.SUB:
            return a - b
        return a * b
    if kind == Primitive.DIV:
        _check_same_vectors(kind, values)
        a, b = values
        enforce(
            bool(np.all(b != 0.0)),
            f"div: zero denominator in {b.tolist()}",
            DomainError,
        )
        return a / b
    if kind == Primitive.SCALE:
        _check_arity(kind, values, 2)
        x, s = values
        _require(
            _is_vector(x) and s.shape == (1,),
            kind,
            values,
            "expects a vector and a length-1 factor",
        )
        return x * s[0]
    if kind == Primitive.DOT:
        _check_same_vectors(kind, values)
        return np.array([np.dot(values[0], values[1])])
    if kind == Primitive.SUM:
        _check_single_vector(kind, values)
        return np.array([np.sum(values[0])])
    if kind == Primitive.MAX:
        _require(
            len(values) >= 1 and all(_is_vector(v) for v in values),
            kind,
            values,
            "expects one or more vectors",
        )
        return np.array([np.max(np.concatenate(values))])
    if kind == Primitive.SIGMOID:
        _check_single_vector(kind, values)
        return _sigmoid(values[0])
    if kind == Primitive.EXP:
        _check_single_vector(kind, values)
        return np.exp(values[0])
    if kind == Primitive.LOG:
        _check_single_vector(kind, values)
        enforce(
            bool(np.all(values[0] > 0.0)),
            f"log: non-positive operand {values[0].tolist()}",
            DomainError,
        )
        return np.log(values[0])
    if kind == Primitive.SOFTMAX:
        _check_single_vector(kind, values)
        return _softmax(values[0])
    if kind == Primitive.MATVEC:
        _check_arity(kind, values, 2)
        matrix, vector = values
        _require(
            matrix.ndim == 2 and _is_vector(vector) and matrix.shape[1] == vector.shape[0],
            kind,
            values,
            "expects an (m, n) matrix and a length-n vector",
        )
        return matrix @ vector
    if kind == Primitive.COSINE_SIMILARITY:
        _check_same_vectors(kind, values)
        cosine, _, _ = _cosine(values[0], values[1])
        return np.array([cosine])
    if kind == Primitive.CONCAT:
        _require(
            len(values) >= 1 and all(_is_vector(v) for v in values),
            kind,
            values,
            "expects one or more vectors",
        )
        return np.concatenate(values)
    if kind == Primitive.INDEX:
        _check_single_vector(kind, values)
        position = attrs.get("position")
        _require(
            isinstance(position, int) and 0 <= position < values[0].shape[0],
            kind,
            values,
            f"position {position} out of range",
        )
        return values[0][position : position + 1].copy()
    raise ShapeError(f"{kind.value} is not an applicable primitive")


def apply_primitive(
    tape: Tape, kind: Primitive, operands: Sequence[int], **attrs: Any
) -> int:
    """
    Append a primitive operation to the tape.

    :param tape: the tape to record on.
    :param kind: the primitive kind.
    :param operands: ids of the operand nodes, already on the tape.
    :param attrs: static attributes (`position` for `index`).
    :return: the id of the new node.
    """
    enforce(kind not in LEAF_PRIMITIVES, f"{kind.value} is a leaf kind", ShapeError)
    enforce(
        all(0 <= o < len(tape.nodes) for o in operands),
        f"{kind.value}: operand ids {list(operands)} are not on the tape",
        ShapeError,
    )
    values = [tape.nodes[o].value for o in operands]
    out = _forward(kind, values, attrs)
    return tape._append(out, kind, operands, attrs)  # pylint: disable=protected-access


# ---------------------------------------------------------------------------
# backward rules


def _vjp(node: Node, values: List[np.ndarray], g: np.ndarray) -> List[np.ndarray]:
    # pylint: disable=too-many-return-statements,too-many-locals,too-many-branches
    kind = node.primitive
    y = node.value
    if kind == Primitive.ADD:
        return [g, g]
    if kind == Primitive.SUB:
        return [g, -g]
    if kind == Primitive.MUL:
        a, b = values
        return [g * b, g * a]
    if kind == Primitive.DIV:
        a, b = values
        return [g / b, -g * a / (b * b)]
    if kind == Primitive.SCALE:
        x, s = values
        return [g * s[0], np.array([np.dot(g, x)])]
    if kind == Primitive.DOT:
        a, b = values
        return [g[0] * b, g[0] * a]
    if kind == Primitive.SUM:
        return [np.full_like(values[0], g[0])]
    if kind == Primitive.MAX:
        # the whole gradient goes to the first maximal entry
        flat = np.concatenate(values)
        winner = int(np.argmax(flat))
        grads = [np.zeros_like(v) for v in values]
        offset = 0
        for grad in grads:
            if offset <= winner < offset + grad.shape[0]:
                grad[winner - offset] = g[0]
                break
            offset += grad.shape[0]
        return grads
    if kind == Primitive.SIGMOID:
        return [g * y * (1.0 - y)]
    if kind == Primitive.EXP:
        return [g * y]
    if kind == Primitive.LOG:
        return [g / values[0]]
    if kind == Primitive.SOFTMAX:
        return [y * (g - np.dot(g, y))]
    if kind == Primitive.MATVEC:
        matrix, vector = values
        return [np.outer(g, vector), matrix.T @ g]
    if kind == Primitive.COSINE_SIMILARITY:
        a, b = values
        cosine, norm_a, norm_b = _cosine(a, b)
        if norm_a < COSINE_NORM_GUARD or norm_b < COSINE_NORM_GUARD:
            return [np.zeros_like(a), np.zeros_like(b)]
        grad_a = b / (norm_a * norm_b) - cosine * a / (norm_a * norm_a)
        grad_b = a / (norm_a * norm_b) - cosine * b / (norm_b * norm_b)
        return [g[0] * grad_a, g[0] * grad_b]
    if kind == Primitive.CONCAT:
        grads = []
        offset = 0
        for value in values:
            grads.append(g[offset : offset + value.shape[0]])
            offset += value.shape[0]
        return grads
    if kind == Primitive.INDEX:
        grad = np.zeros_like(values[0])
        grad[node.attr("position")] = g[0]
        return [grad]
    raise GradientError(f"no backward rule for {kind.value}")  # pragma: nocover


class GradientMap(Mapping):
    """Gradients of a scalar root with respect to every parameter of a tape."""

    def __init__(self, gradients: Dict[int, np.ndarray], names: Dict[int, str]) -> None:
        """
        Initialize the map.

        :param gradients: node id to gradient.
        :param names: node id to parameter name.
        """
        self._gradients = gradients
        self._names = dict(names)

    def __getitem__(self, node_id: int) -> np.ndarray:
        """Get the gradient of a parameter node."""
        return self._gradients[node_id]

    def __iter__(self) -> Iterator[int]:
        """Iterate over parameter node ids."""
        return iter(self._gradients)

    def __len__(self) -> int:
        """Get the number of parameters."""
        return len(self._gradients)

    def by_name(self) -> Dict[str, np.ndarray]:
        """Get the gradients keyed by parameter name."""
        return {self._names[node_id]: grad for node_id, grad in self._gradients.items()}


def backward(tape: Tape, root: int) -> GradientMap:
    """
    Compute the gradient of a scalar node with respect to all parameters.

    :param tape: the tape holding the forward computation.
    :param root: id of a length-1 node.
    :return: the gradient map; unreached parameters get zero gradients.
    """
    root_value = tape.value(root)
    enforce(
        root_value.shape == (1,),
        f"backward root must be a length-1 node, got shape {root_value.shape}",
        GradientError,
    )
    adjoints: Dict[int, np.ndarray] = {root: np.ones(1)}
    gradients: Dict[int, np.ndarray] = {}
    tape._sealed = True  # pylint: disable=protected-access
    try:
        for node in reversed(tape.nodes[: root + 1]):
            g = adjoints.pop(node.id, None)
            if g is None:
                continue
            if node.primitive == Primitive.PARAMETER:
                gradients[node.id] = g
                continue
            if node.primitive == Primitive.CONSTANT:
                continue
            values = [tape.nodes[i].value for i in node.inputs]
            for input_id, grad in zip(node.inputs, _vjp(node, values, g)):
                if input_id in adjoints:
                    adjoints[input_id] = adjoints[input_id] + grad
                else:
                    adjoints[input_id] = np.array(grad, dtype=np.float64)
    finally:
        tape._sealed = False  # pylint: disable=protected-access
    for node_id in tape.parameters:
        if node_id not in gradients:
            gradients[node_id] = np.zeros_like(tape.value(node_id))
    return GradientMap(gradients, tape.parameters)


def grad_check(
    function: Callable[[Tape, int], int],
    point: np.ndarray,
    step: float = 1e-5,
) -> float:
    """
    Compare analytic and central-difference gradients of a scalar function.

    :param function: records `f(x)` on a tape, given the tape and the node of `x`.
    :param point: where to evaluate the gradient.
    :param step: finite-difference step.
    :return: max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    point = np.asarray(point, dtype=np.float64)

    def evaluate(x: np.ndarray) -> float:
        tape = Tape()
        root = function(tape, tape.parameter("x", x))
        return float(tape.value(root)[0])

    tape = Tape()
    x_id = tape.parameter("x", point)
    root = function(tape, x_id)
    analytic = backward(tape, root)[x_id]

    worst = 0.0
    for index in np.ndindex(*point.shape):
        shifted = point.copy()
        shifted[index] += step
        upper = evaluate(shifted)
        shifted[index] -= 2 * step
        lower = evaluate(shifted)
        numeric = (upper - lower) / (2 * step)
        error = abs(analytic[index] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, error)
    _default_logger.debug(f"grad_check at {point.shape}: max relative error {worst:.3e}")
    return worst


def grad_check_parameters(
    record: Callable[[Tape], int],
    parameters: Dict[str, np.ndarray],
    step: float = 1e-5,
    coordinates: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare analytic and central-difference gradients with respect to named parameters.

    The arrays are perturbed in place and restored; `record` must read them afresh on
    every call.

    :param record: records a scalar on a fresh tape and returns its node.
    :param parameters: the live parameter arrays, by name.
    :param step: finite-difference step.
    :param coordinates: when given, check this many random coordinates per parameter.
    :param seed: seed of the coordinate sample.
    :return: max over checked coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    tape = Tape()
    root = record(tape)
    analytic = backward(tape, root).by_name()
    rng = np.random.default_rng(seed)

    def evaluate() -> float:
        fresh = Tape()
        return float(fresh.value(record(fresh))[0])

    worst = 0.0
    for name, array in parameters.items():
        gradient = analytic.get(name, np.zeros_like(array))
        indices = list(np.ndindex(*array.shape))
        if coordinates is not None and coordinates < len(indices):
            chosen = rng.choice(len(indices), size=coordinates, replace=False)
            indices = [indices[int(i)] for i in chosen]
        for index in indices:
            original = array[index]
            array[index] = original + step
            upper = evaluate()
            array[index] = original - step
            lower = evaluate()
            array[index] = original
            numeric = (upper - lower) / (2 * step)
            worst = max(worst, abs(gradient[index] - numeric) / max(1.0, abs(numeric)))
    _default_logger.debug(f"grad_check over {len(parameters)} parameters: max relative error {worst:.3e}")
    return worst
