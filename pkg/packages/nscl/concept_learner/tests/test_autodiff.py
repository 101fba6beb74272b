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

"""Test the autodiff.py module of the concept learner."""

from typing import Callable, Dict, List

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packages.nscl.concept_learner.autodiff import (
    Primitive,
    Tape,
    apply_primitive,
    backward,
    grad_check,
)
from packages.nscl.concept_learner.exceptions import (
    DomainError,
    GradientError,
    NonFiniteValueError,
    ShapeError,
)


GRAD_TOLERANCE = 1e-4
N_POINTS = 100


def _seeded_points(seed: int, size: int, low: float = -1.0, high: float = 1.0) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.uniform(low, high, size=size) for _ in range(N_POINTS)]


def _const(tape: Tape, seed: int, size: int) -> int:
    return tape.constant(np.random.default_rng(seed).uniform(-1.0, 1.0, size=size))


# each case maps x (length 4) to a scalar through one primitive
PRIMITIVE_CASES: Dict[str, Callable[[Tape, int], int]] = {
    "add": lambda t, x: t.apply(Primitive.DOT, t.apply(Primitive.ADD, x, x), _const(t, 1, 4)),
    "sub": lambda t, x: t.apply(
        Primitive.DOT, t.apply(Primitive.SUB, x, _const(t, 2, 4)), _const(t, 3, 4)
    ),
    "mul": lambda t, x: t.apply(Primitive.SUM, t.apply(Primitive.MUL, x, x)),
    "scale": lambda t, x: t.apply(
        Primitive.SUM,
        t.apply(Primitive.SCALE, _const(t, 4, 4), t.apply(Primitive.INDEX, x, position=1)),
    ),
    "dot": lambda t, x: t.apply(Primitive.DOT, x, _const(t, 5, 4)),
    "sum": lambda t, x: t.apply(Primitive.SUM, x),
    "max": lambda t, x: t.apply(Primitive.MAX, t.apply(Primitive.MUL, x, _const(t, 6, 4))),
    "sigmoid": lambda t, x: t.apply(Primitive.SUM, t.apply(Primitive.SIGMOID, x)),
    "exp": lambda t, x: t.apply(Primitive.SUM, t.apply(Primitive.EXP, x)),
    "log": lambda t, x: t.apply(
        Primitive.SUM, t.apply(Primitive.LOG, t.apply(Primitive.EXP, x))
    ),
    "div": lambda t, x: t.apply(
        Primitive.SUM,
        t.apply(Primitive.DIV, _const(t, 7, 4), t.apply(Primitive.EXP, x)),
    ),
    "softmax": lambda t, x: t.apply(
        Primitive.DOT, t.apply(Primitive.SOFTMAX, x), _const(t, 8, 4)
    ),
    "matvec": lambda t, x: t.apply(
        Primitive.SUM,
        t.apply(
            Primitive.MATVEC,
            t.constant(np.random.default_rng(9).uniform(-1, 1, size=(3, 4))),
            x,
        ),
    ),
    "cosine_similarity": lambda t, x: t.apply(
        Primitive.COSINE_SIMILARITY, x, _const(t, 10, 4)
    ),
    "concat": lambda t, x: t.apply(
        Primitive.DOT, t.apply(Primitive.CONCAT, x, _const(t, 11, 2)), _const(t, 12, 6)
    ),
    "index": lambda t, x: t.apply(Primitive.INDEX, x, position=2),
}


class TestForward:
    """Test forward values of primitives."""

    def test_dot_orthogonal(self) -> None:
        """Orthogonal vectors have a zero dot product."""
        tape = Tape()
        out = tape.apply(Primitive.DOT, tape.constant([1.0, 0.0]), tape.constant([0.0, 1.0]))
        assert tape.value(out).tolist() == [0.0]

    def test_sigmoid_midpoint(self) -> None:
        """Sigmoid of zero is one half."""
        tape = Tape()
        out = tape.apply(Primitive.SIGMOID, tape.scalar(0.0))
        assert tape.value(out)[0] == 0.5

    def test_sigmoid_is_stable_at_extremes(self) -> None:
        """Sigmoid stays finite and inside [0, 1] for large inputs."""
        tape = Tape()
        out = tape.apply(Primitive.SIGMOID, tape.constant([-800.0, 800.0]))
        value = tape.value(out)
        assert 0.0 <= value[0] < 1e-300
        assert value[1] == 1.0

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_cosine_self_similarity(self, vector: List[float]) -> None:
        """Any non-zero vector has cosine one with itself."""
        tape = Tape()
        x = tape.constant(vector)
        out = tape.apply(Primitive.COSINE_SIMILARITY, x, x)
        assert tape.value(out)[0] == pytest.approx(1.0, abs=1e-12)

    def test_cosine_degenerate_norm(self) -> None:
        """A near-zero vector has cosine zero and zero gradient."""
        tape = Tape()
        x = tape.parameter("x", np.zeros(3))
        out = tape.apply(Primitive.COSINE_SIMILARITY, x, tape.constant([1.0, 2.0, 3.0]))
        assert tape.value(out)[0] == 0.0
        assert backward(tape, out)[x].tolist() == [0.0, 0.0, 0.0]

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
    def test_softmax_is_a_distribution(self, logits: List[float]) -> None:
        """Softmax outputs sum to one and lie in the open unit interval."""
        tape = Tape()
        out = tape.apply(Primitive.SOFTMAX, tape.constant(logits))
        value = tape.value(out)
        assert abs(value.sum() - 1.0) < 1e-12
        if len(logits) > 1 and max(logits) - min(logits) < 30:
            assert np.all(value > 0.0) and np.all(value < 1.0)

    def test_forward_is_deterministic(self) -> None:
        """Identical tapes produce bit-identical values."""
        point = np.random.default_rng(0).uniform(-1, 1, size=4)
        values = []
        for _ in range(2):
            tape = Tape()
            root = PRIMITIVE_CASES["softmax"](tape, tape.parameter("x", point))
            values.append(tape.value(root).tobytes())
        assert values[0] == values[1]

    def test_values_are_read_only(self) -> None:
        """Recorded values cannot be mutated in place."""
        tape = Tape()
        node = tape.constant([1.0, 2.0])
        with pytest.raises(ValueError):
            tape.value(node)[0] = 3.0

    def test_parameter_is_deduplicated_by_name(self) -> None:
        """The same parameter name maps to a single node."""
        tape = Tape()
        first = tape.parameter("w", np.ones(2))
        second = tape.parameter("w", np.zeros(2))
        assert first == second
        assert tape.parameters == {first: "w"}

    def test_memoize_builds_once(self) -> None:
        """A memoized builder runs once per key."""
        tape = Tape()
        calls = []

        def build() -> int:
            calls.append(1)
            return tape.scalar(1.0)

        assert tape.memoize("k", build) == tape.memoize("k", build)
        assert len(calls) == 1


class TestErrors:
    """Test error paths of primitives and backward."""

    def test_shape_mismatch_names_kind_and_shapes(self) -> None:
        """Mismatched operands raise a shape error naming the primitive."""
        tape = Tape()
        with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
            tape.apply(Primitive.ADD, tape.constant([1.0, 2.0]), tape.constant([1.0, 2.0, 3.0]))

    def test_no_broadcasting_for_scale(self) -> None:
        """Scale requires a length-1 factor."""
        tape = Tape()
        with pytest.raises(ShapeError, match="scale"):
            tape.apply(Primitive.SCALE, tape.constant([1.0, 2.0]), tape.constant([1.0, 2.0]))

    def test_matvec_shape(self) -> None:
        """Matvec rejects incompatible inner dimensions."""
        tape = Tape()
        with pytest.raises(ShapeError, match="matvec"):
            tape.apply(Primitive.MATVEC, tape.constant(np.ones((2, 3))), tape.constant([1.0, 2.0]))

    def test_log_domain(self) -> None:
        """Log of a non-positive entry raises a domain error."""
        tape = Tape()
        with pytest.raises(DomainError, match="log"):
            tape.apply(Primitive.LOG, tape.constant([1.0, 0.0]))

    def test_div_domain(self) -> None:
        """Division by zero raises a domain error."""
        tape = Tape()
        with pytest.raises(DomainError, match="div"):
            tape.apply(Primitive.DIV, tape.constant([1.0]), tape.constant([0.0]))

    def test_non_finite_result(self) -> None:
        """Overflowing forward values are rejected."""
        tape = Tape()
        with pytest.raises(NonFiniteValueError):
            tape.apply(Primitive.EXP, tape.constant([1000.0]))

    def test_unknown_operand(self) -> None:
        """Operands must already be on the tape."""
        tape = Tape()
        with pytest.raises(ShapeError):
            apply_primitive(tape, Primitive.SUM, [3])

    def test_leaf_kinds_are_not_applicable(self) -> None:
        """Leaf kinds are created through the tape, not applied."""
        tape = Tape()
        with pytest.raises(ShapeError):
            apply_primitive(tape, Primitive.CONSTANT, [])

    def test_backward_requires_scalar_root(self) -> None:
        """Backward from a vector node fails."""
        tape = Tape()
        x = tape.parameter("x", np.ones(3))
        with pytest.raises(GradientError):
            backward(tape, tape.apply(Primitive.SIGMOID, x))


class TestBackward:
    """Test reverse-mode gradients."""

    def test_dot_with_constant(self) -> None:
        """The gradient of dot(p, c) with respect to p is c."""
        tape = Tape()
        c = np.array([0.5, -1.0, 2.0])
        p = tape.parameter("p", np.array([1.0, 1.0, 1.0]))
        root = tape.apply(Primitive.DOT, p, tape.constant(c))
        assert backward(tape, root)[p].tolist() == c.tolist()

    def test_sum(self) -> None:
        """The gradient of sum(p) is all ones."""
        tape = Tape()
        p = tape.parameter("p", np.arange(5.0))
        root = tape.apply(Primitive.SUM, p)
        assert backward(tape, root)[p].tolist() == [1.0] * 5

    def test_sigmoid_of_dot_matches_finite_differences(self) -> None:
        """The sigmoid of a bilinear form passes a gradient check."""
        rng = np.random.default_rng(42)
        c = rng.uniform(-1, 1, size=8)

        def function(tape: Tape, x: int) -> int:
            return tape.apply(Primitive.SIGMOID, tape.apply(Primitive.DOT, x, tape.constant(c)))

        assert grad_check(function, rng.uniform(-1, 1, size=8)) < GRAD_TOLERANCE

    def test_unreached_parameters_get_zero(self) -> None:
        """Every parameter appears in the gradient map."""
        tape = Tape()
        used = tape.parameter("used", np.ones(2))
        unused = tape.parameter("unused", np.ones(3))
        gradients = backward(tape, tape.apply(Primitive.SUM, used))
        assert set(gradients) == {used, unused}
        assert gradients[unused].tolist() == [0.0, 0.0, 0.0]
        assert set(gradients.by_name()) == {"used", "unused"}

    def test_shared_parameter_accumulates(self) -> None:
        """A parameter used twice receives both contributions."""
        tape = Tape()
        p = tape.parameter("p", np.array([3.0]))
        root = tape.apply(Primitive.MUL, p, p)
        assert backward(tape, root)[p].tolist() == [6.0]

    def test_matrix_parameter(self) -> None:
        """Matvec routes an outer product to its matrix operand."""
        tape = Tape()
        m = tape.parameter("m", np.ones((2, 3)))
        v = np.array([1.0, 2.0, 3.0])
        root = tape.apply(Primitive.SUM, tape.apply(Primitive.MATVEC, m, tape.constant(v)))
        assert backward(tape, root)[m].tolist() == [v.tolist(), v.tolist()]

    def test_max_tie_routes_to_first(self) -> None:
        """A two-way tie sends the whole gradient to the first maximal entry."""
        tape = Tape()
        p = tape.parameter("p", np.array([0.2, 0.7, 0.7]))
        root = tape.apply(Primitive.MAX, p)
        assert backward(tape, root)[p].tolist() == [0.0, 1.0, 0.0]

    def test_max_tie_across_operands(self) -> None:
        """Ties across operands favour the earlier operand."""
        tape = Tape()
        a = tape.parameter("a", np.array([0.5]))
        b = tape.parameter("b", np.array([0.5]))
        gradients = backward(tape, tape.apply(Primitive.MAX, a, b))
        assert gradients[a].tolist() == [1.0]
        assert gradients[b].tolist() == [0.0]

    def test_tape_is_unchanged_by_backward(self) -> None:
        """Backward does not append nodes."""
        tape = Tape()
        p = tape.parameter("p", np.ones(2))
        root = tape.apply(Primitive.SUM, tape.apply(Primitive.EXP, p))
        size = len(tape)
        backward(tape, root)
        assert len(tape) == size


class TestGradCheck:
    """Test the finite-difference gradient check."""

    @pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
    def test_every_primitive(self, name: str) -> None:
        """Every primitive passes a gradient check at seeded random points."""
        function = PRIMITIVE_CASES[name]
        points = _seeded_points(sorted(PRIMITIVE_CASES).index(name), 4)
        worst = max(grad_check(function, point) for point in points)
        assert worst < GRAD_TOLERANCE

    def test_softmax_then_log(self) -> None:
        """The log of the first softmax component passes a gradient check."""

        def function(tape: Tape, x: int) -> int:
            return tape.apply(
                Primitive.LOG,
                tape.apply(Primitive.INDEX, tape.apply(Primitive.SOFTMAX, x), position=0),
            )

        point = np.random.default_rng(3).uniform(-2, 2, size=5)
        assert grad_check(function, point) < GRAD_TOLERANCE

    def test_constant_function(self) -> None:
        """A constant function has exactly zero gradient and error."""

        def function(tape: Tape, _x: int) -> int:
            return tape.scalar(4.0)

        assert grad_check(function, np.array([0.3, -0.1])) == 0.0

    def test_cosine_scale_invariance(self) -> None:
        """The cosine gradient vanishes when x is a multiple of c."""
        c = np.array([0.3, -0.2, 0.9])
        tape = Tape()
        x = tape.parameter("x", 2 * c)
        root = tape.apply(Primitive.COSINE_SIMILARITY, x, tape.constant(c))
        assert np.max(np.abs(backward(tape, root)[x])) < 1e-10

    def test_matrix_point(self) -> None:
        """Gradient checks accept matrix-valued points."""
        v = np.array([0.5, -1.0])

        def function(tape: Tape, x: int) -> int:
            return tape.apply(
                Primitive.SUM,
                tape.apply(Primitive.SIGMOID, tape.apply(Primitive.MATVEC, x, tape.constant(v))),
            )

        point = np.random.default_rng(5).uniform(-1, 1, size=(3, 2))
        assert grad_check(function, point) < GRAD_TOLERANCE
