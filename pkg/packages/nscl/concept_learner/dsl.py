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
This module contains the typed reasoning language: its AST, s-expression syntax and type rules.

Programs are written as s-expressions, for example `(count (filter scene red))`.
Heads are matched case-insensitively and identifiers follow `[a-z][a-z0-9-]*`.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import (
    Any,
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    Union as TypingUnion,
)

import numpy as np

from packages.nscl.concept_learner.exceptions import DslParseError, TypeCheckError


IDENTIFIER = re.compile(r"[a-z][a-z0-9-]*")
TOKEN = re.compile(r"\s*(?:(?P<open>\()|(?P<close>\))|(?P<atom>[^\s()]+))")

Path = Tuple[int, ...]


class TypeKind(Enum):
    """Primitive value types."""

    OBJECT_SET = "ObjectSet"
    OBJECT_REF = "ObjectRef"
    BOOL = "Bool"
    INT = "Int"
    CONCEPT_NAME = "ConceptName"
    ACTION_FORMULA = "ActionFormula"


@dataclass(frozen=True)
class ValueType:
    """A value type; concept names carry the attribute they range over."""

    kind: TypeKind
    attribute: Optional[str] = None

    def __str__(self) -> str:
        """Get the printed type."""
        if self.kind == TypeKind.CONCEPT_NAME:
            return f"{self.kind.value}({self.attribute})"
        return self.kind.value

    @classmethod
    def concept_name(cls, attribute: str) -> "ValueType":
        """Build the type of answers over an attribute namespace."""
        return cls(TypeKind.CONCEPT_NAME, attribute)


OBJECT_SET = ValueType(TypeKind.OBJECT_SET)
OBJECT_REF = ValueType(TypeKind.OBJECT_REF)
BOOL = ValueType(TypeKind.BOOL)
INT = ValueType(TypeKind.INT)


class Comparison(Enum):
    """Count comparison operators."""

    GREATER = "greater"
    LESS = "less"
    EQUAL = "equal"


class ProgramNode:
    """Base class of AST nodes."""

    head: str = ""

    def children(self) -> Tuple["ProgramNode", ...]:
        """Get the program children, in argument order."""
        return ()

    def arguments(self) -> Tuple[TypingUnion["ProgramNode", str], ...]:
        """Get all arguments, in concrete-syntax order."""
        raise NotImplementedError  # pragma: nocover


@dataclass(frozen=True)
class Scene(ProgramNode):
    """All objects of the scene."""

    head = "scene"

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return ()


@dataclass(frozen=True)
class Filter(ProgramNode):
    """Objects of a set that carry a concept."""

    child: ProgramNode
    concept: str
    head = "filter"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.child,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.child, self.concept)


@dataclass(frozen=True)
class Relate(ProgramNode):
    """Objects standing in a relation to a referenced object."""

    concept: str
    ref: ProgramNode
    head = "relate"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.ref,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.concept, self.ref)


@dataclass(frozen=True)
class RelateAttrEqual(ProgramNode):
    """Other objects sharing an attribute value with a referenced object."""

    attribute: str
    ref: ProgramNode
    head = "relate-same"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.ref,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.attribute, self.ref)


@dataclass(frozen=True)
class Intersect(ProgramNode):
    """Objects in both sets."""

    a: ProgramNode
    b: ProgramNode
    head = "intersect"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.a, self.b)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.a, self.b)


@dataclass(frozen=True)
class Union(ProgramNode):
    """Objects in either set."""

    a: ProgramNode
    b: ProgramNode
    head = "union"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.a, self.b)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.a, self.b)


@dataclass(frozen=True)
class Unique(ProgramNode):
    """The single object of a set."""

    child: ProgramNode
    head = "unique"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.child,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.child,)


@dataclass(frozen=True)
class Count(ProgramNode):
    """Number of objects in a set."""

    child: ProgramNode
    head = "count"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.child,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.child,)


@dataclass(frozen=True)
class Exist(ProgramNode):
    """Whether a set is non-empty."""

    child: ProgramNode
    head = "exist"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.child,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.child,)


@dataclass(frozen=True)
class Query(ProgramNode):
    """The value of an attribute of a referenced object."""

    attribute: str
    ref: ProgramNode
    head = "query"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.ref,)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.attribute, self.ref)


@dataclass(frozen=True)
class AttrEqual(ProgramNode):
    """Whether two referenced objects share an attribute value."""

    attribute: str
    a: ProgramNode
    b: ProgramNode
    head = "attr-equal"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.a, self.b)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.attribute, self.a, self.b)


@dataclass(frozen=True)
class CountCompare(ProgramNode):
    """Comparison of the sizes of two sets."""

    cmp: Comparison
    a: ProgramNode
    b: ProgramNode
    head = "count-compare"

    def children(self) -> Tuple[ProgramNode, ...]:
        """Get the program children."""
        return (self.a, self.b)

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.cmp.value, self.a, self.b)


@dataclass(frozen=True)
class ExistPair(ProgramNode):
    """Whether some object of concept A is in a relation with some other object of concept B."""

    concept_a: str
    concept_b: str
    relation: str
    head = "exist-pair"

    def arguments(self) -> Tuple[TypingUnion[ProgramNode, str], ...]:
        """Get all arguments."""
        return (self.concept_a, self.concept_b, self.relation)


@dataclass(frozen=True)
class Program:
    """A program rooted at a node."""

    root: ProgramNode

    def __str__(self) -> str:
        """Get the concrete syntax."""
        return print_program(self)

    @property
    def depth(self) -> int:
        """Depth of the program; `scene` has depth 0."""
        return node_depth(self.root)

    def walk(self) -> Iterator[Tuple[Path, ProgramNode]]:
        """Iterate over (path, node) in post-order, i.e. evaluation order."""
        yield from _walk(self.root, ())

    def concepts(self) -> List[str]:
        """Get the concept identifiers mentioned by the program, in order of first use."""
        seen: List[str] = []
        for _, node in self.walk():
            names: Sequence[str] = ()
            if isinstance(node, Filter):
                names = (node.concept,)
            elif isinstance(node, Relate):
                names = (node.concept,)
            elif isinstance(node, ExistPair):
                names = (node.concept_a, node.concept_b, node.relation)
            seen.extend(name for name in names if name not in seen)
        return seen


def _walk(node: ProgramNode, path: Path) -> Iterator[Tuple[Path, ProgramNode]]:
    for index, child in enumerate(node.children()):
        yield from _walk(child, path + (index,))
    yield path, node


def node_depth(node: ProgramNode) -> int:
    """
    Get the depth of a node.

    :param node: the node.
    :return: 0 for a node without program children, else 1 + the deepest child.
    """
    children = node.children()
    if not children:
        return 0 if isinstance(node, Scene) else 1
    return 1 + max(node_depth(child) for child in children)


def node_at(program: Program, path: Path) -> ProgramNode:
    """Get the node addressed by a path of child indices."""
    node = program.root
    for index in path:
        node = node.children()[index]
    return node


# ---------------------------------------------------------------------------
# concrete syntax

PROGRAM_ARG = "program"
IDENTIFIER_ARG = "identifier"

GRAMMAR: Dict[str, Tuple[Callable[..., ProgramNode], Tuple[str, ...]]] = {
    "scene": (Scene, ()),
    "filter": (Filter, (PROGRAM_ARG, IDENTIFIER_ARG)),
    "relate": (Relate, (IDENTIFIER_ARG, PROGRAM_ARG)),
    "relate-same": (RelateAttrEqual, (IDENTIFIER_ARG, PROGRAM_ARG)),
    "intersect": (Intersect, (PROGRAM_ARG, PROGRAM_ARG)),
    "union": (Union, (PROGRAM_ARG, PROGRAM_ARG)),
    "unique": (Unique, (PROGRAM_ARG,)),
    "count": (Count, (PROGRAM_ARG,)),
    "exist": (Exist, (PROGRAM_ARG,)),
    "query": (Query, (IDENTIFIER_ARG, PROGRAM_ARG)),
    "attr-equal": (AttrEqual, (IDENTIFIER_ARG, PROGRAM_ARG, PROGRAM_ARG)),
    "count-compare": (CountCompare, (IDENTIFIER_ARG, PROGRAM_ARG, PROGRAM_ARG)),
    "exist-pair": (ExistPair, (IDENTIFIER_ARG, IDENTIFIER_ARG, IDENTIFIER_ARG)),
}


@dataclass
class _Expr:
    position: int
    atom: Optional[str] = None
    items: List["_Expr"] = field(default_factory=list)


def _read(text: str) -> _Expr:
    stack: List[_Expr] = [_Expr(position=0)]
    position = 0
    while position < len(text):
        match = TOKEN.match(text, position)
        if match is None:
            break
        if match.group("open") is not None:
            stack.append(_Expr(position=match.start("open")))
        elif match.group("close") is not None:
            if len(stack) == 1:
                raise DslParseError("unbalanced ')'", match.start("close"))
            closed = stack.pop()
            stack[-1].items.append(closed)
        else:
            atom = match.group("atom")
            stack[-1].items.append(_Expr(position=match.start("atom"), atom=atom.lower()))
        position = match.end()
    if len(stack) > 1:
        raise DslParseError("unbalanced '('", stack[-1].position)
    top = stack[0].items
    if not top:
        raise DslParseError("empty program", len(text))
    if len(top) > 1:
        raise DslParseError("trailing input after program", top[1].position)
    return top[0]


def _identifier(expr: _Expr, head: str) -> str:
    if expr.atom is None:
        raise DslParseError(f"{head} expects an identifier, found a list", expr.position)
    if IDENTIFIER.fullmatch(expr.atom) is None:
        raise DslParseError(f"invalid identifier '{expr.atom}'", expr.position)
    return expr.atom


def _build(expr: _Expr) -> ProgramNode:
    if expr.atom is not None:
        if expr.atom == "scene":
            return Scene()
        raise DslParseError(f"expected a program, found '{expr.atom}'", expr.position)
    if not expr.items or expr.items[0].atom is None:
        raise DslParseError("expected a head", expr.position)
    head = expr.items[0].atom
    if head not in GRAMMAR:
        raise DslParseError(f"unknown head '{head}'", expr.items[0].position)
    constructor, signature = GRAMMAR[head]
    arguments = expr.items[1:]
    if len(arguments) != len(signature):
        raise DslParseError(
            f"{head} expects {len(signature)} argument(s), got {len(arguments)}",
            expr.position,
        )
    values: List[Any] = []
    for kind, argument in zip(signature, arguments):
        if kind == PROGRAM_ARG:
            values.append(_build(argument))
        else:
            values.append(_identifier(argument, head))
    if constructor is CountCompare:
        try:
            values[0] = Comparison(values[0])
        except ValueError:
            raise DslParseError(
                f"unknown comparison '{values[0]}'", arguments[0].position
            ) from None
    return constructor(*values)


def parse_program(text: str) -> Program:
    """
    Parse program text.

    :param text: an s-expression.
    :return: the program.
    """
    return Program(_build(_read(text)))


def _print(node: ProgramNode) -> str:
    if isinstance(node, Scene):
        return "scene"
    parts = [node.head]
    for argument in node.arguments():
        parts.append(argument if isinstance(argument, str) else _print(argument))
    return "(" + " ".join(parts) + ")"


def print_program(program: Program) -> str:
    """
    Print a program in canonical concrete syntax.

    :param program: the program.
    :return: the s-expression text; parsing it gives back an equal program.
    """
    return _print(program.root)


# ---------------------------------------------------------------------------
# type rules


class RegistryView(Protocol):
    """What the type checker and sampler need to know about concepts."""

    def object_concepts(self) -> List[str]:
        """Get concepts usable in filter and exist-pair, compounds included."""

    def relation_concepts(self) -> List[str]:
        """Get relation concepts."""

    def attribute_names(self) -> List[str]:
        """Get non-empty attribute namespaces."""


@dataclass(frozen=True)
class TypeErrorReport:
    """Why a program is not type-correct."""

    path: Path
    expected: str
    found: str
    message: str

    def __str__(self) -> str:
        """Get a one-line description."""
        where = "/".join(str(i) for i in self.path) or "root"
        return f"type error at {where}: {self.message} (expected {self.expected}, found {self.found})"


@dataclass(frozen=True)
class TypedProgram:
    """A type-correct program with the type of every node."""

    program: Program
    annotations: Dict[Path, ValueType]

    @property
    def result_type(self) -> ValueType:
        """Get the type of the root node."""
        return self.annotations[()]

    @property
    def root(self) -> ProgramNode:
        """Get the root node."""
        return self.program.root

    def type_of(self, path: Path) -> ValueType:
        """Get the type of the node at a path."""
        return self.annotations[path]


class _Failure(Exception):
    def __init__(self, report: TypeErrorReport) -> None:
        super().__init__(str(report))
        self.report = report


class _Checker:
    def __init__(self, registry: RegistryView) -> None:
        self.objects = set(registry.object_concepts())
        self.relations = set(registry.relation_concepts())
        self.attributes = set(registry.attribute_names())
        self.annotations: Dict[Path, ValueType] = {}

    def _fail(self, path: Path, expected: str, found: str, message: str) -> None:
        raise _Failure(TypeErrorReport(path, expected, found, message))

    def _concept(self, path: Path, name: str, known: set, what: str) -> None:
        if name not in known:
            kind = "unresolved" if not self._anywhere(name) else "wrong kind of"
            self._fail(path, what, name, f"{kind} concept '{name}'")

    def _anywhere(self, name: str) -> bool:
        return name in self.objects or name in self.relations or name in self.attributes

    def _child(self, path: Path, node: ProgramNode, index: int, expected: ValueType) -> None:
        child_path = path + (index,)
        found = self.check(node.children()[index], child_path)
        if found != expected:
            self._fail(
                child_path,
                str(expected),
                str(found),
                f"{node.head} expects {expected} as argument, found {found}",
            )

    def check(self, node: ProgramNode, path: Path) -> ValueType:
        # pylint: disable=too-many-branches
        result: ValueType
        if isinstance(node, Scene):
            result = OBJECT_SET
        elif isinstance(node, Filter):
            self._child(path, node, 0, OBJECT_SET)
            self._concept(path, node.concept, self.objects, "object concept")
            result = OBJECT_SET
        elif isinstance(node, Relate):
            self._concept(path, node.concept, self.relations, "relation concept")
            self._child(path, node, 0, OBJECT_REF)
            result = OBJECT_SET
        elif isinstance(node, RelateAttrEqual):
            self._concept(path, node.attribute, self.attributes, "attribute")
            self._child(path, node, 0, OBJECT_REF)
            result = OBJECT_SET
        elif isinstance(node, (Intersect, Union)):
            self._child(path, node, 0, OBJECT_SET)
            self._child(path, node, 1, OBJECT_SET)
            result = OBJECT_SET
        elif isinstance(node, Unique):
            self._child(path, node, 0, OBJECT_SET)
            result = OBJECT_REF
        elif isinstance(node, Count):
            self._child(path, node, 0, OBJECT_SET)
            result = INT
        elif isinstance(node, Exist):
            self._child(path, node, 0, OBJECT_SET)
            result = BOOL
        elif isinstance(node, Query):
            self._concept(path, node.attribute, self.attributes, "attribute")
            self._child(path, node, 0, OBJECT_REF)
            result = ValueType.concept_name(node.attribute)
        elif isinstance(node, AttrEqual):
            self._concept(path, node.attribute, self.attributes, "attribute")
            self._child(path, node, 0, OBJECT_REF)
            self._child(path, node, 1, OBJECT_REF)
            result = BOOL
        elif isinstance(node, CountCompare):
            self._child(path, node, 0, OBJECT_SET)
            self._child(path, node, 1, OBJECT_SET)
            result = BOOL
        elif isinstance(node, ExistPair):
            self._concept(path, node.concept_a, self.objects, "object concept")
            self._concept(path, node.concept_b, self.objects, "object concept")
            self._concept(path, node.relation, self.relations, "relation concept")
            result = BOOL
        else:
            self._fail(path, "program node", type(node).__name__, "not a program node")
        self.annotations[path] = result
        return result


def type_check(
    program: Program, registry: RegistryView
) -> TypingUnion[TypedProgram, TypeErrorReport]:
    """
    Annotate every node of a program with its type.

    :param program: the program.
    :param registry: the concepts, relations and attributes in scope.
    :return: the typed program, or a report locating the first error.
    """
    checker = _Checker(registry)
    try:
        checker.check(program.root, ())
    except _Failure as failure:
        return failure.report
    return TypedProgram(program, dict(checker.annotations))


def type_check_strict(program: Program, registry: RegistryView) -> TypedProgram:
    """Type check a program, raising `TypeCheckError` on failure."""
    result = type_check(program, registry)
    if isinstance(result, TypeErrorReport):
        raise TypeCheckError(result)
    return result


# ---------------------------------------------------------------------------
# sampling

_MIN_DEPTH = {
    TypeKind.OBJECT_SET: 0,
    TypeKind.OBJECT_REF: 1,
    TypeKind.INT: 1,
    TypeKind.BOOL: 1,
    TypeKind.CONCEPT_NAME: 2,
}


class _Sampler:
    def __init__(self, registry: RegistryView, rng: np.random.Generator) -> None:
        self.objects = sorted(registry.object_concepts())
        self.relations = sorted(registry.relation_concepts())
        self.attributes = sorted(registry.attribute_names())
        self.rng = rng

    def _pick(self, names: Sequence[str]) -> str:
        return names[int(self.rng.integers(len(names)))]

    def _productions(self, kind: TypeKind, budget: int) -> List[Callable[[], ProgramNode]]:
        # every production listed here fits in `budget`
        below = budget - 1
        sets = below >= _MIN_DEPTH[TypeKind.OBJECT_SET]
        refs = below >= _MIN_DEPTH[TypeKind.OBJECT_REF]
        options: List[Callable[[], ProgramNode]] = []
        if kind == TypeKind.OBJECT_SET:
            options.append(Scene)
            if sets and self.objects:
                options.append(lambda: Filter(self.sample(OBJECT_SET, below), self._pick(self.objects)))
            if refs and self.relations:
                options.append(lambda: Relate(self._pick(self.relations), self.sample(OBJECT_REF, below)))
            if refs and self.attributes:
                options.append(
                    lambda: RelateAttrEqual(self._pick(self.attributes), self.sample(OBJECT_REF, below))
                )
            if sets:
                options.append(lambda: Intersect(self.sample(OBJECT_SET, below), self.sample(OBJECT_SET, below)))
                options.append(lambda: Union(self.sample(OBJECT_SET, below), self.sample(OBJECT_SET, below)))
        elif kind == TypeKind.OBJECT_REF and sets:
            options.append(lambda: Unique(self.sample(OBJECT_SET, below)))
        elif kind == TypeKind.INT and sets:
            options.append(lambda: Count(self.sample(OBJECT_SET, below)))
        elif kind == TypeKind.BOOL:
            if sets:
                options.append(lambda: Exist(self.sample(OBJECT_SET, below)))
                options.append(
                    lambda: CountCompare(
                        Comparison(self._pick([c.value for c in Comparison])),
                        self.sample(OBJECT_SET, below),
                        self.sample(OBJECT_SET, below),
                    )
                )
            if refs and self.attributes:
                options.append(
                    lambda: AttrEqual(
                        self._pick(self.attributes),
                        self.sample(OBJECT_REF, below),
                        self.sample(OBJECT_REF, below),
                    )
                )
            if budget >= 1 and self.objects and self.relations:
                options.append(
                    lambda: ExistPair(
                        self._pick(self.objects), self._pick(self.objects), self._pick(self.relations)
                    )
                )
        return options

    def sample(self, value_type: ValueType, budget: int) -> ProgramNode:
        if value_type.kind == TypeKind.CONCEPT_NAME:
            return Query(str(value_type.attribute), self.sample(OBJECT_REF, budget - 1))
        options = self._productions(value_type.kind, budget)
        return options[int(self.rng.integers(len(options)))]()

    def answer_types(self, max_depth: int) -> List[ValueType]:
        candidates = [INT, BOOL] + [ValueType.concept_name(a) for a in self.attributes]
        return [t for t in candidates if self.feasible(t, max_depth)]

    def feasible(self, value_type: ValueType, budget: int) -> bool:
        if value_type.kind == TypeKind.ACTION_FORMULA:
            return False
        if value_type.kind == TypeKind.CONCEPT_NAME:
            return value_type.attribute in self.attributes and budget >= 2
        return budget >= _MIN_DEPTH[value_type.kind]


def enumerate_programs(
    max_depth: int,
    registry: RegistryView,
    result_type: Optional[ValueType] = None,
    seed: int = 0,
) -> Iterator[Program]:
    """
    Sample type-correct programs forever.

    Each node is drawn uniformly among the productions of the required type that
    still fit in the remaining depth.

    :param max_depth: the maximum program depth, at least 1.
    :param registry: the concepts in scope.
    :param result_type: the root type; a random answer type when omitted.
    :param seed: the sampler seed.
    :yield: programs, deterministically per seed.
    """
    if max_depth < 1:
        raise ValueError(f"max_depth must be at least 1, got {max_depth}")
    sampler = _Sampler(registry, np.random.default_rng(seed))
    if result_type is not None and not sampler.feasible(result_type, max_depth):
        raise ValueError(f"no program of type {result_type} fits in depth {max_depth}")
    while True:
        target = result_type
        if target is None:
            options = sampler.answer_types(max_depth)
            target = options[int(sampler.rng.integers(len(options)))]
        yield Program(sampler.sample(target, max_depth))
