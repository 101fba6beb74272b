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
This module contains the synthetic world: scenes, features, questions, captions and the symbolic oracle.

Scenes stand in for perception. Every object carries ground-truth attributes and a
position, and continuous features are synthesized from them by fixed orthogonal
mixings plus noise. Questions and captions are produced from a fixed template
inventory and parsed back by inverting the same templates.
"""

import dataclasses
import functools
import hashlib
import itertools
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.concepts import (
    ConceptKind,
    ConceptRegistry,
    Lexicon,
    derive_seed,
)
from packages.nscl.concept_learner.dsl import (
    AttrEqual,
    Comparison,
    Count,
    CountCompare,
    Exist,
    ExistPair,
    Filter,
    Intersect,
    Program,
    ProgramNode,
    Query,
    Relate,
    RelateAttrEqual,
    Scene,
    Union,
    Unique,
    parse_program,
)
from packages.nscl.concept_learner.exceptions import (
    GenerationError,
    TemplateMatchError,
)


_default_logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

COLORS = ("gray", "red", "blue", "green", "brown", "purple", "yellow", "teal")
BASE_COLORS = COLORS[:7]
NOVEL_COLOR = "teal"
SHAPES = ("cube", "sphere", "cylinder")
SIZES = ("small", "large")
MATERIALS = ("rubber", "metal")
ATTRIBUTES: Dict[str, Tuple[str, ...]] = {
    "size": SIZES,
    "color": COLORS,
    "material": MATERIALS,
    "shape": SHAPES,
}
# surface order of adjectives; the shape is the noun
ADJECTIVE_ORDER = ("size", "color", "material")

RELATION_CONCEPTS: Dict[str, str] = {
    "left-of": "left",
    "right-of": "right",
    "front-of": "front",
    "behind": "behind",
}
RELATION_PHRASES: Dict[str, str] = {
    "left-of": "left of",
    "right-of": "right of",
    "front-of": "in front of",
    "behind": "behind",
}
ACTION_CONCEPTS = ("pick", "put-left-of", "put-right-of", "put-front-of", "put-behind")

MIXING_BLOCK = 8
RAW_OBJECT_DIM = MIXING_BLOCK * len(ATTRIBUTES) + 2
RAW_PAIR_DIM = 4
MIN_SEPARATION = 0.05
MAX_PLACEMENT_ATTEMPTS = 10_000
MAX_OBJECTS = 10
DEFAULT_MIXING_SEED = 1234
DEFAULT_NOISE = 0.05
STAGE_MAX_OBJECTS = {1: 3, 2: 6, 3: 10}
YES = "yes"
NO = "no"
NOUNS = {"object", "objects", "thing", "things"}
CUBE_SYNONYMS = ("box", "block")


@dataclass(frozen=True)
class ObjectSpec:
    """Ground truth of one object."""

    color: str
    shape: str
    size: str
    material: str
    x: float
    y: float

    def attribute(self, name: str) -> str:
        """Get the value of an attribute."""
        return str(getattr(self, name))

    def values(self) -> Tuple[str, ...]:
        """Get the attribute values, in attribute order."""
        return tuple(self.attribute(name) for name in ATTRIBUTES)

    def moved(self, x: Optional[float] = None, y: Optional[float] = None) -> "ObjectSpec":
        """Get a copy at another position."""
        return dataclasses.replace(
            self, x=self.x if x is None else x, y=self.y if y is None else y
        )

    def to_json(self) -> Dict[str, Any]:
        """Get the JSON representation."""
        return dataclasses.asdict(self)


def relation_holds(relation: str, a: ObjectSpec, b: ObjectSpec) -> bool:
    """
    Decide a spatial relation from coordinates.

    :param relation: a relation concept or its short name (`left`, `front`, ...).
    :param a: the first object.
    :param b: the second object.
    :return: whether `relation(a, b)` holds.
    """
    name = RELATION_CONCEPTS.get(relation, relation)
    if name == "left":
        return a.x < b.x
    if name == "right":
        return a.x > b.x
    if name == "front":
        return a.y > b.y
    if name == "behind":
        return a.y < b.y
    raise ValueError(f"unknown relation '{relation}'")


@dataclass(frozen=True)
class SceneRecord:  # pylint: disable=too-many-instance-attributes
    """A scene with ground truth and synthesized features."""

    scene_id: str
    seed: int
    objects: Tuple[ObjectSpec, ...]
    mixing_seed: int = DEFAULT_MIXING_SEED
    noise: float = DEFAULT_NOISE
    features: np.ndarray = field(default_factory=lambda: np.zeros((0, RAW_OBJECT_DIM)), compare=False)
    pair_features: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 0, RAW_PAIR_DIM)), compare=False
    )
    relations: Dict[str, np.ndarray] = field(default_factory=dict, compare=False)

    @property
    def n_objects(self) -> int:
        """Get the number of objects."""
        return len(self.objects)

    def relation(self, relation: str, i: int, j: int) -> bool:
        """Get the ground truth of `relation(i, j)`; self pairs never hold."""
        return bool(self.relations[RELATION_CONCEPTS.get(relation, relation)][i, j])

    def permuted(self, order: Sequence[int]) -> "SceneRecord":
        """
        Reorder the objects, carrying features and relations along.

        :param order: new position k holds old object `order[k]`.
        :return: the permuted scene.
        """
        index = np.asarray(order, dtype=int)
        return dataclasses.replace(
            self,
            objects=tuple(self.objects[i] for i in index),
            features=self.features[index],
            pair_features=self.pair_features[np.ix_(index, index)],
            relations={k: v[np.ix_(index, index)] for k, v in self.relations.items()},
        )

    def features_equal(self, other: "SceneRecord") -> bool:
        """Check bit-identity of features with another scene."""
        return (
            self.features.tobytes() == other.features.tobytes()
            and self.pair_features.tobytes() == other.pair_features.tobytes()
        )


# ---------------------------------------------------------------------------
# features


@functools.lru_cache(maxsize=16)
def mixing_matrices(mixing_seed: int) -> Tuple[np.ndarray, ...]:
    """
    Get the fixed orthogonal mixing of each attribute block.

    :param mixing_seed: the mixing seed.
    :return: one orthogonal 8x8 matrix per attribute, in attribute order.
    """
    rng = np.random.default_rng(mixing_seed)
    matrices = []
    for _ in ATTRIBUTES:
        q, r = np.linalg.qr(rng.normal(size=(MIXING_BLOCK, MIXING_BLOCK)))
        q = q * np.sign(np.diag(r))
        q.setflags(write=False)
        matrices.append(q)
    return tuple(matrices)


def _one_hot(values: Sequence[str], value: str) -> np.ndarray:
    vector = np.zeros(MIXING_BLOCK)
    vector[values.index(value)] = 1.0
    return vector


def synth_features(scene: SceneRecord, mixing_seed: int, noise: float) -> SceneRecord:
    """
    Synthesize raw object and pair features and ground-truth relations.

    :param scene: the scene; its seed drives the noise.
    :param mixing_seed: seed of the orthogonal attribute mixings.
    :param noise: standard deviation of the feature noise.
    :return: the scene with features filled in.
    """
    enforce(noise >= 0.0, f"feature noise must be non-negative, got {noise}", GenerationError)
    matrices = mixing_matrices(mixing_seed)
    rng = np.random.default_rng(derive_seed(scene.seed, "features"))
    n = scene.n_objects
    features = np.zeros((n, RAW_OBJECT_DIM))
    for i, obj in enumerate(scene.objects):
        blocks = [
            matrix @ _one_hot(values, obj.attribute(name))
            for matrix, (name, values) in zip(matrices, ATTRIBUTES.items())
        ]
        attribute_part = np.concatenate(blocks)
        attribute_part = attribute_part + rng.normal(0.0, 1.0, size=attribute_part.shape) * noise
        features[i] = np.concatenate([attribute_part, [obj.x, obj.y]])
    pair_features = np.zeros((n, n, RAW_PAIR_DIM))
    relations = {name: np.zeros((n, n), dtype=bool) for name in RELATION_CONCEPTS.values()}
    for i, j in itertools.permutations(range(n), 2):
        a, b = scene.objects[i], scene.objects[j]
        dx, dy = a.x - b.x, a.y - b.y
        base = np.array([dx, dy, np.hypot(dx, dy), 1.0])
        pair_features[i, j] = base + rng.normal(0.0, 1.0, size=RAW_PAIR_DIM) * noise
        for name in relations:
            relations[name][i, j] = relation_holds(name, a, b)
    for array in [features, pair_features, *relations.values()]:
        array.setflags(write=False)
    return dataclasses.replace(
        scene,
        mixing_seed=mixing_seed,
        noise=noise,
        features=features,
        pair_features=pair_features,
        relations=relations,
    )


def scene_from_objects(
    objects: Sequence[ObjectSpec],
    seed: int,
    scene_id: Optional[str] = None,
    mixing_seed: int = DEFAULT_MIXING_SEED,
    noise: float = DEFAULT_NOISE,
) -> SceneRecord:
    """Build a scene with features from explicit objects."""
    scene = SceneRecord(scene_id=scene_id or f"scene-{seed}", seed=seed, objects=tuple(objects))
    return synth_features(scene, mixing_seed, noise)


def gen_scene(  # pylint: disable=too-many-arguments
    seed: int,
    n_objects: int,
    palette: Sequence[str] = BASE_COLORS,
    mixing_seed: int = DEFAULT_MIXING_SEED,
    noise: float = DEFAULT_NOISE,
    scene_id: Optional[str] = None,
) -> SceneRecord:
    """
    Generate a scene.

    :param seed: the scene seed.
    :param n_objects: number of objects, between 1 and 10.
    :param palette: colours to draw from.
    :param mixing_seed: seed of the feature mixings.
    :param noise: feature noise level.
    :param scene_id: identifier, derived from the seed when omitted.
    :return: the scene with features.
    """
    enforce(
        1 <= n_objects <= MAX_OBJECTS,
        f"n_objects must be between 1 and {MAX_OBJECTS}, got {n_objects}",
        GenerationError,
    )
    rng = np.random.default_rng(derive_seed(seed, "scene"))
    positions: List[Tuple[float, float]] = []
    attempts = 0
    while len(positions) < n_objects:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise GenerationError(
                f"could not place {n_objects} objects with separation {MIN_SEPARATION} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        x, y = (float(v) for v in rng.uniform(0.0, 1.0, size=2))
        if all(abs(x - px) >= MIN_SEPARATION and abs(y - py) >= MIN_SEPARATION for px, py in positions):
            positions.append((x, y))
    objects = [
        ObjectSpec(
            color=str(rng.choice(list(palette))),
            shape=str(rng.choice(SHAPES)),
            size=str(rng.choice(SIZES)),
            material=str(rng.choice(MATERIALS)),
            x=x,
            y=y,
        )
        for x, y in positions
    ]
    return scene_from_objects(objects, seed, scene_id, mixing_seed, noise)


# ---------------------------------------------------------------------------
# symbolic oracle


class _Invalid(Exception):
    pass


def concept_holds(obj: ObjectSpec, concept: str, compounds: Optional[Mapping[str, Sequence[str]]] = None) -> bool:
    """
    Decide an object concept from ground truth.

    :param obj: the object.
    :param concept: an attribute value or a compound concept.
    :param compounds: compound concepts and their members.
    :return: whether the object carries the concept.
    """
    if compounds and concept in compounds:
        return all(concept_holds(obj, member, compounds) for member in compounds[concept])
    return concept in obj.values()


def compounds_of(registry: Optional[ConceptRegistry]) -> Dict[str, Tuple[str, ...]]:
    """Get the compound concepts of a registry and their members."""
    if registry is None:
        return {}
    return {
        name: entry.members
        for name, entry in registry.concepts.items()
        if entry.kind == ConceptKind.COMPOUND
    }


class _Oracle:
    def __init__(self, scene: SceneRecord, compounds: Mapping[str, Sequence[str]]) -> None:
        self.scene = scene
        self.compounds = compounds
        self.everything = frozenset(range(scene.n_objects))

    def members(self, concept: str) -> FrozenSet[int]:
        return frozenset(
            i for i, obj in enumerate(self.scene.objects) if concept_holds(obj, concept, self.compounds)
        )

    def related(self, relation: str, ref: int) -> FrozenSet[int]:
        return frozenset(i for i in self.everything if i != ref and self.scene.relation(relation, i, ref))

    def run(self, node: ProgramNode) -> Any:  # pylint: disable=too-many-return-statements
        objects = self.scene.objects
        if isinstance(node, Scene):
            return self.everything
        if isinstance(node, Filter):
            return self.run(node.child) & self.members(node.concept)
        if isinstance(node, Relate):
            return self.related(node.concept, self.run(node.ref))
        if isinstance(node, RelateAttrEqual):
            ref = self.run(node.ref)
            value = objects[ref].attribute(node.attribute)
            return frozenset(
                i for i in self.everything if i != ref and objects[i].attribute(node.attribute) == value
            )
        if isinstance(node, Intersect):
            return self.run(node.a) & self.run(node.b)
        if isinstance(node, Union):
            return self.run(node.a) | self.run(node.b)
        if isinstance(node, Unique):
            members = self.run(node.child)
            if len(members) != 1:
                raise _Invalid(f"unique over {len(members)} objects")
            return next(iter(members))
        if isinstance(node, Count):
            return str(len(self.run(node.child)))
        if isinstance(node, Exist):
            return YES if self.run(node.child) else NO
        if isinstance(node, Query):
            return objects[self.run(node.ref)].attribute(node.attribute)
        if isinstance(node, AttrEqual):
            a, b = objects[self.run(node.a)], objects[self.run(node.b)]
            return YES if a.attribute(node.attribute) == b.attribute(node.attribute) else NO
        if isinstance(node, CountCompare):
            a, b = len(self.run(node.a)), len(self.run(node.b))
            outcome = {
                Comparison.GREATER: a > b,
                Comparison.LESS: a < b,
                Comparison.EQUAL: a == b,
            }[node.cmp]
            return YES if outcome else NO
        if isinstance(node, ExistPair):
            first, second = self.members(node.concept_a), self.members(node.concept_b)
            found = any(
                i != j and self.scene.relation(node.relation, i, j) for i in first for j in second
            )
            return YES if found else NO
        raise _Invalid(f"unsupported node {type(node).__name__}")


def oracle_evaluate(
    program: Any, scene: SceneRecord, registry: Optional[ConceptRegistry] = None
) -> Any:
    """
    Evaluate a program exactly, returning intermediate values as well as answers.

    :param program: a program or typed program.
    :param scene: the scene.
    :param registry: source of compound concepts, if any.
    :return: a set of indices, an index, an answer token, or None when invalid.
    """
    root = program.root
    try:
        return _Oracle(scene, compounds_of(registry)).run(root)
    except _Invalid:
        return None


def oracle_execute(
    program: Any, scene: SceneRecord, registry: Optional[ConceptRegistry] = None
) -> Optional[str]:
    """
    Answer a program exactly from ground truth.

    :param program: a type-correct program or typed program.
    :param scene: the scene.
    :param registry: source of compound concepts, if any.
    :return: the answer token, or None when the program is invalid on the scene.
    """
    value = oracle_evaluate(program, scene, registry)
    return value if isinstance(value, str) else None


# ---------------------------------------------------------------------------
# noun phrases

NounPhrase = Tuple[Tuple[str, str], ...]


def np_concepts(phrase: NounPhrase) -> List[str]:
    """Get the concepts of a noun phrase in filter order: noun first, then adjectives inward out."""
    by_attribute = dict(phrase)
    ordered = [by_attribute["shape"]] if "shape" in by_attribute else []
    ordered.extend(by_attribute[a] for a in reversed(ADJECTIVE_ORDER) if a in by_attribute)
    return ordered


def filter_chain(concepts: Sequence[str], base: Optional[ProgramNode] = None) -> ProgramNode:
    """Apply filters in order to a base set, `scene` by default."""
    node: ProgramNode = base if base is not None else Scene()
    for concept in concepts:
        node = Filter(node, concept)
    return node


def realize_np(phrase: NounPhrase, plural: bool, rng: Optional[np.random.Generator] = None) -> str:
    """
    Realize a noun phrase as text.

    :param phrase: (attribute, value) pairs.
    :param plural: whether to pluralize the noun.
    :param rng: when given, cubes are sometimes called boxes or blocks.
    :return: the text, adjectives in size, colour, material order.
    """
    by_attribute = dict(phrase)
    words = [by_attribute[a] for a in ADJECTIVE_ORDER if a in by_attribute]
    noun = by_attribute.get("shape", "object")
    if noun == "cube" and rng is not None and rng.random() < 0.2:
        noun = CUBE_SYNONYMS[int(rng.integers(len(CUBE_SYNONYMS)))]
    if plural:
        noun = noun + ("es" if noun.endswith("x") else "s")
    return " ".join(words + [noun])


def _article(text: str) -> str:
    return "an" if text[0] in "aeiou" else "a"


def parse_np(text: str, lexicon: Lexicon) -> List[str]:
    """
    Parse a noun phrase into concepts in filter order.

    :param text: the noun phrase.
    :param lexicon: the word bindings.
    :return: the concepts.
    """
    words = text.split()
    if not words:
        raise TemplateMatchError("empty noun phrase")
    *adjectives, noun = words
    concepts = [] if noun in NOUNS else [lexicon.resolve(noun)]
    concepts.extend(lexicon.resolve(word) for word in reversed(adjectives))
    return concepts


@dataclass
class _SceneIndex:
    """Noun phrases of a scene and the objects they denote."""

    scene: SceneRecord
    palette: Sequence[str]
    max_concepts: int
    phrases: Dict[NounPhrase, FrozenSet[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = dict(ATTRIBUTES, color=tuple(self.palette))
        names = list(ATTRIBUTES)
        for size in range(self.max_concepts + 1):
            for chosen in itertools.combinations(names, size):
                for combo in itertools.product(*(values[a] for a in chosen)):
                    phrase = tuple(zip(chosen, combo))
                    self.phrases[phrase] = frozenset(
                        i
                        for i, obj in enumerate(self.scene.objects)
                        if all(obj.attribute(a) == v for a, v in phrase)
                    )

    def select(self, predicate: Callable[[NounPhrase, FrozenSet[int]], bool]) -> List[NounPhrase]:
        return [p for p, members in self.phrases.items() if predicate(p, members)]

    def unique(self, max_concepts: int, exclude: Optional[str] = None) -> List[NounPhrase]:
        return self.select(
            lambda p, m: len(m) == 1
            and len(p) <= max_concepts
            and all(a != exclude for a, _ in p)
        )


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class QAExample:
    """A question with its program and answer."""

    question: str
    program: Program
    answer: str
    stage: int
    scene_id: str
    template: str

    def to_json(self) -> Dict[str, Any]:
        """Get the JSON representation."""
        return {
            "schema_version": SCHEMA_VERSION,
            "question": self.question,
            "program": str(self.program),
            "answer": self.answer,
            "stage": self.stage,
            "scene_id": self.scene_id,
            "template": self.template,
        }


@dataclass(frozen=True)
class CaptionExample:
    """A relational caption with its truth on a scene."""

    caption: str
    triple: Tuple[str, str, str]
    label: bool
    scene_id: str

    @property
    def program(self) -> Program:
        """Get the pair-existence program of the caption."""
        concept_a, relation, concept_b = self.triple
        return Program(ExistPair(concept_a, concept_b, relation))

    def to_json(self) -> Dict[str, Any]:
        """Get the JSON representation."""
        return {
            "schema_version": SCHEMA_VERSION,
            "caption": self.caption,
            "triple": list(self.triple),
            "label": self.label,
            "scene_id": self.scene_id,
        }


Draft = Tuple[str, ProgramNode]
_REL = r"(?P<{}>left of|right of|in front of|behind)"
_NP = r"(?P<{}>[a-z][a-z ]*?)"
_A = r"an? "
PHRASE_RELATIONS = {phrase: concept for concept, phrase in RELATION_PHRASES.items()}


@dataclass(frozen=True)
class Template:
    """A question template: how to generate it and how to read it back."""

    name: str
    stage: int
    pattern: str
    min_depth: int
    read: Callable[[Dict[str, str], Lexicon], ProgramNode]

    @property
    def regex(self) -> "re.Pattern[str]":
        """Get the compiled pattern."""
        return _compiled(self.pattern)


@functools.lru_cache(maxsize=None)
def _compiled(pattern: str) -> "re.Pattern[str]":
    return re.compile(pattern)


def _p(*parts: str) -> str:
    return "^" + "".join(parts) + "$"


def _ref(groups: Dict[str, str], key: str, lexicon: Lexicon) -> ProgramNode:
    return Unique(filter_chain(parse_np(groups[key], lexicon)))


def _attribute(groups: Dict[str, str], lexicon: Lexicon) -> str:
    return lexicon.resolve(groups["attr"])


def _relation(groups: Dict[str, str], key: str = "rel") -> str:
    return PHRASE_RELATIONS[groups[key]]


def _single(groups: Dict[str, str], key: str, lexicon: Lexicon) -> str:
    concepts = parse_np(groups[key], lexicon)
    if len(concepts) != 1:
        raise TemplateMatchError(f"'{groups[key]}' does not name a single concept")
    return concepts[0]


TEMPLATES: Tuple[Template, ...] = (
    Template(
        "exist-pair", 2,
        _p("is there ", _A, _NP.format("a"), " ", _REL.format("rel"), " ", _A, _NP.format("b"), r"\?"),
        1,
        lambda g, lx: ExistPair(_single(g, "a", lx), _single(g, "b", lx), _relation(g)),
    ),
    Template(
        "relate-exist", 2,
        _p("is there ", _A, _NP.format("np"), " ", _REL.format("rel"), " the ", _NP.format("ref"), r"\?"),
        4,
        lambda g, lx: Exist(
            filter_chain(parse_np(g["np"], lx), Relate(_relation(g), _ref(g, "ref", lx)))
        ),
    ),
    Template(
        "exist", 1,
        _p("is there ", _A, _NP.format("np"), r"\?"),
        2,
        lambda g, lx: Exist(filter_chain(parse_np(g["np"], lx))),
    ),
    Template(
        "intersect-count", 3,
        _p(
            "how many ", _NP.format("np"), " are ", _REL.format("rel"), " the ", _NP.format("ref"),
            " and ", _REL.format("rel2"), " the ", _NP.format("ref2"), r"\?",
        ),
        5,
        lambda g, lx: Count(
            filter_chain(
                parse_np(g["np"], lx),
                Intersect(
                    Relate(_relation(g), _ref(g, "ref", lx)),
                    Relate(_relation(g, "rel2"), _ref(g, "ref2", lx)),
                ),
            )
        ),
    ),
    Template(
        "relate-count", 2,
        _p("how many ", _NP.format("np"), " are ", _REL.format("rel"), " the ", _NP.format("ref"), r"\?"),
        4,
        lambda g, lx: Count(
            filter_chain(parse_np(g["np"], lx), Relate(_relation(g), _ref(g, "ref", lx)))
        ),
    ),
    Template(
        "same-count", 2,
        _p(
            "how many other ", _NP.format("np"), " have the same (?P<attr>[a-z]+) as the ",
            _NP.format("ref"), r"\?",
        ),
        4,
        lambda g, lx: Count(
            filter_chain(
                parse_np(g["np"], lx), RelateAttrEqual(_attribute(g, lx), _ref(g, "ref", lx))
            )
        ),
    ),
    Template(
        "count", 1,
        _p("how many ", _NP.format("np"), r" are there\?"),
        1,
        lambda g, lx: Count(filter_chain(parse_np(g["np"], lx))),
    ),
    Template(
        "attr-equal", 2,
        _p("does the ", _NP.format("a"), " have the same (?P<attr>[a-z]+) as the ", _NP.format("b"), r"\?"),
        3,
        lambda g, lx: AttrEqual(_attribute(g, lx), _ref(g, "a", lx), _ref(g, "b", lx)),
    ),
    Template(
        "relate-query", 3,
        _p(
            "what is the (?P<attr>[a-z]+) of the ", _NP.format("np"), " ", _REL.format("rel"),
            " the ", _NP.format("ref"), r"\?",
        ),
        5,
        lambda g, lx: Query(
            _attribute(g, lx),
            Unique(filter_chain(parse_np(g["np"], lx), Relate(_relation(g), _ref(g, "ref", lx)))),
        ),
    ),
    Template(
        "query", 1,
        _p("what is the (?P<attr>[a-z]+) of the ", _NP.format("np"), r"\?"),
        2,
        lambda g, lx: Query(_attribute(g, lx), _ref(g, "np", lx)),
    ),
    Template(
        "compare", 3,
        _p("are there (?P<cmp>more|fewer) ", _NP.format("a"), " than ", _NP.format("b"), r"\?"),
        2,
        lambda g, lx: CountCompare(
            Comparison.GREATER if g["cmp"] == "more" else Comparison.LESS,
            filter_chain(parse_np(g["a"], lx)),
            filter_chain(parse_np(g["b"], lx)),
        ),
    ),
    Template(
        "same-number", 3,
        _p("are there the same number of ", _NP.format("a"), " and ", _NP.format("b"), r"\?"),
        2,
        lambda g, lx: CountCompare(
            Comparison.EQUAL, filter_chain(parse_np(g["a"], lx)), filter_chain(parse_np(g["b"], lx))
        ),
    ),
)
TEMPLATES_BY_NAME = {template.name: template for template in TEMPLATES}
CAPTION_PATTERN = _p("there is ", _A, _NP.format("a"), " ", _REL.format("rel"), " ", _A, _NP.format("b"), r"\.?")


def _normalize(text: str) -> str:
    return " ".join(text.strip().lower().split())


def parse_question(text: str, lexicon: Lexicon) -> Program:
    """
    Parse a generated question or caption back into its program.

    :param text: the question or caption.
    :param lexicon: the word bindings.
    :return: the program.
    """
    normalized = _normalize(text)
    caption = re.match(CAPTION_PATTERN, normalized)
    if caption is not None:
        groups = caption.groupdict()
        return Program(
            ExistPair(_single(groups, "a", lexicon), _single(groups, "b", lexicon), _relation(groups))
        )
    for template in TEMPLATES:
        match = template.regex.match(normalized)
        if match is None:
            continue
        try:
            return Program(template.read(match.groupdict(), lexicon))
        except TemplateMatchError:
            continue
    raise TemplateMatchError(f"no template matches '{text}'")


class _Writer:  # pylint: disable=too-many-instance-attributes
    """Draws template instantiations on one scene."""

    def __init__(self, rng: np.random.Generator, scene: SceneRecord, palette: Sequence[str], mention: Optional[str]) -> None:
        self.rng = rng
        self.scene = scene
        self.mention = mention
        self.index = _SceneIndex(scene, palette, max_concepts=2)
        self.everything = frozenset(range(scene.n_objects))

    def choice(self, items: Sequence[Any]) -> Any:
        if not items:
            raise GenerationError("nothing to choose from")
        return items[int(self.rng.integers(len(items)))]

    def np_text(self, phrase: NounPhrase, plural: bool = False) -> str:
        return realize_np(phrase, plural, self.rng)

    def mentions(self, *phrases: NounPhrase) -> bool:
        return self.mention is None or any(v == self.mention for p in phrases for _, v in p)

    def phrases(self, max_concepts: int, min_concepts: int = 0) -> List[NounPhrase]:
        return self.index.select(lambda p, _: min_concepts <= len(p) <= max_concepts)

    def related(self, relation: str, ref: int) -> FrozenSet[int]:
        return frozenset(
            i for i in self.everything if i != ref and self.scene.relation(relation, i, ref)
        )

    def ref(self, max_concepts: int, exclude: Optional[str] = None) -> Tuple[NounPhrase, int]:
        phrase = self.choice(self.index.unique(max_concepts, exclude))
        return phrase, next(iter(self.index.phrases[phrase]))

    # stage 1, target-first

    def exist(self) -> Draft:
        target = bool(self.rng.random() < 0.5)
        candidates = self.index.select(
            lambda p, m: 1 <= len(p) and bool(m) == target and self.mentions(p)
        )
        if not candidates:
            candidates = self.index.select(lambda p, m: 1 <= len(p) and self.mentions(p))
        phrase = self.choice(candidates)
        text = self.np_text(phrase)
        return f"is there {_article(text)} {text}?", Exist(filter_chain(np_concepts(phrase)))

    def count(self) -> Draft:
        by_count: Dict[int, List[NounPhrase]] = {}
        for phrase, members in self.index.phrases.items():
            if self.mentions(phrase):
                by_count.setdefault(len(members), []).append(phrase)
        targets = [k for k in range(self.scene.n_objects + 1) if k in by_count]
        phrase = self.choice(by_count[self.choice(targets)])
        return (
            f"how many {self.np_text(phrase, plural=True)} are there?",
            Count(filter_chain(np_concepts(phrase))),
        )

    def query(self) -> Draft:
        attributes = list(ATTRIBUTES)
        order = [attributes[i] for i in self.rng.permutation(len(attributes))]
        for attribute in order:
            candidates = [
                p
                for p in self.index.unique(1, exclude=attribute)
                if self.mention is None
                or self.mentions(p)
                or self.scene.objects[next(iter(self.index.phrases[p]))].attribute(attribute) == self.mention
            ]
            if candidates:
                phrase = self.choice(candidates)
                return (
                    f"what is the {attribute} of the {self.np_text(phrase)}?",
                    Query(attribute, Unique(filter_chain(np_concepts(phrase)))),
                )
        raise GenerationError("no uniquely describable object")

    # stage 2

    def _single_phrases(self) -> List[NounPhrase]:
        return self.phrases(1, min_concepts=1)

    def exist_pair(self) -> Draft:
        a, b = self.choice(self._single_phrases()), self.choice(self._single_phrases())
        relation = self.choice(list(RELATION_PHRASES))
        text_a, text_b = self.np_text(a), self.np_text(b)
        return (
            f"is there {_article(text_a)} {text_a} {RELATION_PHRASES[relation]} {_article(text_b)} {text_b}?",
            ExistPair(np_concepts(a)[0], np_concepts(b)[0], relation),
        )

    def relate_exist(self) -> Draft:
        ref, _ = self.ref(2)
        subject = self.choice(self.phrases(1))
        relation = self.choice(list(RELATION_PHRASES))
        text = self.np_text(subject)
        return (
            f"is there {_article(text)} {text} {RELATION_PHRASES[relation]} the {self.np_text(ref)}?",
            Exist(filter_chain(np_concepts(subject), Relate(relation, Unique(filter_chain(np_concepts(ref)))))),
        )

    def relate_count(self) -> Draft:
        ref, _ = self.ref(2)
        subject = self.choice(self.phrases(1))
        relation = self.choice(list(RELATION_PHRASES))
        return (
            f"how many {self.np_text(subject, True)} are {RELATION_PHRASES[relation]} the {self.np_text(ref)}?",
            Count(filter_chain(np_concepts(subject), Relate(relation, Unique(filter_chain(np_concepts(ref)))))),
        )

    def same_count(self) -> Draft:
        attribute = self.choice(list(ATTRIBUTES))
        ref, _ = self.ref(2, exclude=attribute)
        subject = self.choice([p for p in self.phrases(1) if all(a != attribute for a, _ in p)])
        return (
            f"how many other {self.np_text(subject, True)} have the same {attribute} as the {self.np_text(ref)}?",
            Count(
                filter_chain(
                    np_concepts(subject),
                    RelateAttrEqual(attribute, Unique(filter_chain(np_concepts(ref)))),
                )
            ),
        )

    def attr_equal(self) -> Draft:
        attribute = self.choice(list(ATTRIBUTES))
        a, i = self.ref(2, exclude=attribute)
        others = [p for p in self.index.unique(2, exclude=attribute) if next(iter(self.index.phrases[p])) != i]
        b = self.choice(others)
        return (
            f"does the {self.np_text(a)} have the same {attribute} as the {self.np_text(b)}?",
            AttrEqual(
                attribute,
                Unique(filter_chain(np_concepts(a))),
                Unique(filter_chain(np_concepts(b))),
            ),
        )

    # stage 3

    def relate_query(self) -> Draft:
        attribute = self.choice(list(ATTRIBUTES))
        ref, ref_index = self.ref(1)
        relation = self.choice(list(RELATION_PHRASES))
        related = self.related(relation, ref_index)
        candidates = [
            p
            for p in self.phrases(1)
            if all(a != attribute for a, _ in p) and len(self.index.phrases[p] & related) == 1
        ]
        subject = self.choice(candidates)
        return (
            f"what is the {attribute} of the {self.np_text(subject)} {RELATION_PHRASES[relation]} the {self.np_text(ref)}?",
            Query(
                attribute,
                Unique(
                    filter_chain(
                        np_concepts(subject),
                        Relate(relation, Unique(filter_chain(np_concepts(ref)))),
                    )
                ),
            ),
        )

    def compare(self) -> Draft:
        a, b = self.choice(self.phrases(2, 1)), self.choice(self.phrases(2, 1))
        more = bool(self.rng.random() < 0.5)
        return (
            f"are there {'more' if more else 'fewer'} {self.np_text(a, True)} than {self.np_text(b, True)}?",
            CountCompare(
                Comparison.GREATER if more else Comparison.LESS,
                filter_chain(np_concepts(a)),
                filter_chain(np_concepts(b)),
            ),
        )

    def same_number(self) -> Draft:
        a, b = self.choice(self.phrases(2, 1)), self.choice(self.phrases(2, 1))
        return (
            f"are there the same number of {self.np_text(a, True)} and {self.np_text(b, True)}?",
            CountCompare(Comparison.EQUAL, filter_chain(np_concepts(a)), filter_chain(np_concepts(b))),
        )

    def intersect_count(self) -> Draft:
        (ref, _), (ref2, _) = self.ref(1), self.ref(1)
        subject = self.choice(self.phrases(1))
        relation, relation2 = self.choice(list(RELATION_PHRASES)), self.choice(list(RELATION_PHRASES))
        text = (
            f"how many {self.np_text(subject, True)} are {RELATION_PHRASES[relation]} the {self.np_text(ref)}"
            f" and {RELATION_PHRASES[relation2]} the {self.np_text(ref2)}?"
        )
        program = Count(
            filter_chain(
                np_concepts(subject),
                Intersect(
                    Relate(relation, Unique(filter_chain(np_concepts(ref)))),
                    Relate(relation2, Unique(filter_chain(np_concepts(ref2)))),
                ),
            )
        )
        return text, program

    def draft(self, template: str) -> Draft:
        return getattr(self, template.replace("-", "_"))()


BALANCED_BOOLEAN = {"exist-pair", "relate-exist", "attr-equal", "compare", "same-number"}
MAX_QUESTION_ATTEMPTS = 200


def gen_question(  # pylint: disable=too-many-arguments,too-many-locals
    seed: int,
    stage: int,
    scene: SceneRecord,
    palette: Sequence[str] = BASE_COLORS,
    max_depth: int = 6,
    min_depth: int = 0,
    mention: Optional[str] = None,
    templates: Optional[Sequence[str]] = None,
) -> QAExample:
    """
    Generate a question about a scene.

    :param seed: the question seed.
    :param stage: curriculum stage 1, 2 or 3.
    :param scene: the scene; its size must suit the stage.
    :param palette: colours that questions may mention.
    :param max_depth: maximum program depth.
    :param min_depth: minimum program depth.
    :param mention: when given, the question must mention (or answer with) this concept.
    :param templates: draw from these templates instead of the stage's own.
    :return: the example; its answer is the oracle answer.
    """
    enforce(stage in STAGE_MAX_OBJECTS, f"unknown stage {stage}", GenerationError)
    enforce(
        scene.n_objects <= STAGE_MAX_OBJECTS[stage],
        f"stage {stage} needs at most {STAGE_MAX_OBJECTS[stage]} objects, scene has {scene.n_objects}",
        GenerationError,
    )
    names = [
        t.name
        for t in TEMPLATES
        if (t.stage == stage if templates is None else t.name in templates)
        and t.min_depth <= max_depth
    ]
    enforce(bool(names), f"no stage {stage} template fits depth {min_depth}..{max_depth}", GenerationError)
    rng = np.random.default_rng(derive_seed(seed, "question", scene.scene_id))
    writer = _Writer(rng, scene, palette, mention)
    wants_yes = bool(rng.random() < 0.5)
    fallback: Optional[QAExample] = None
    for _ in range(MAX_QUESTION_ATTEMPTS):
        name = writer.choice(names)
        try:
            text, root = writer.draft(name)
        except GenerationError:
            continue
        program = Program(root)
        answer = oracle_execute(program, scene)
        if answer is None or not min_depth <= program.depth <= max_depth:
            continue
        if mention is not None and mention not in program.concepts() and answer != mention:
            continue
        example = QAExample(text, program, answer, stage, scene.scene_id, name)
        if name in BALANCED_BOOLEAN and (answer == YES) != wants_yes:
            fallback = fallback or example
            continue
        return example
    if fallback is not None:
        return fallback
    raise GenerationError(f"no valid stage {stage} question on scene {scene.scene_id}")


def gen_caption(
    seed: int,
    scene: SceneRecord,
    positive_fraction: float,
    palette: Sequence[str] = BASE_COLORS,
) -> CaptionExample:
    """
    Generate a relational caption and its truth on a scene.

    Negatives are positives with one slot changed until the caption no longer holds.

    :param seed: the caption seed.
    :param scene: the scene.
    :param positive_fraction: probability of drawing a true caption.
    :param palette: colours that captions may mention.
    :return: the caption example.
    """
    enforce(0.0 <= positive_fraction <= 1.0, "positive_fraction must be in [0, 1]", GenerationError)
    rng = np.random.default_rng(derive_seed(seed, "caption", scene.scene_id))
    writer = _Writer(rng, scene, palette, None)
    singles = writer._single_phrases()  # pylint: disable=protected-access
    relations = list(RELATION_PHRASES)
    positive = bool(rng.random() < positive_fraction)

    def truth(a: NounPhrase, relation: str, b: NounPhrase) -> bool:
        program = Program(ExistPair(np_concepts(a)[0], np_concepts(b)[0], relation))
        return oracle_execute(program, scene) == YES

    for _ in range(MAX_QUESTION_ATTEMPTS):
        if scene.n_objects < 2:
            if positive:
                break
            triple = (writer.choice(singles), writer.choice(relations), writer.choice(singles))
        else:
            i, j = (int(k) for k in rng.choice(scene.n_objects, size=2, replace=False))
            relation = writer.choice([r for r in relations if scene.relation(r, i, j)])
            a = writer.choice([p for p in singles if writer.index.phrases[p] >= {i}])
            b = writer.choice([p for p in singles if writer.index.phrases[p] >= {j}])
            triple = (a, relation, b)
            if not positive:
                slot = int(rng.integers(3))
                for _ in range(20):
                    replacement = writer.choice(relations if slot == 1 else singles)
                    candidate = tuple(replacement if k == slot else v for k, v in enumerate(triple))
                    if not truth(*candidate):  # type: ignore
                        triple = candidate  # type: ignore
                        break
        if truth(*triple) != positive:  # type: ignore
            continue
        a, relation, b = triple  # type: ignore
        text_a, text_b = writer.np_text(a), writer.np_text(b)
        caption = (
            f"There is {_article(text_a)} {text_a} {RELATION_PHRASES[relation]} "
            f"{_article(text_b)} {text_b}."
        )
        return CaptionExample(
            caption, (np_concepts(a)[0], relation, np_concepts(b)[0]), positive, scene.scene_id
        )
    raise GenerationError(f"cannot realize a {'true' if positive else 'false'} caption on {scene.scene_id}")


# ---------------------------------------------------------------------------
# vocabulary


def plural(word: str) -> str:
    """Pluralize a noun of the template vocabulary."""
    return word + ("es" if word.endswith("x") else "s")


def bind_vocabulary(lexicon: Lexicon, palette: Sequence[str]) -> None:
    """Bind the template vocabulary of a palette."""
    for attribute, values in dict(ATTRIBUTES, color=tuple(palette)).items():
        lexicon.bind(attribute, attribute)
        for value in values:
            lexicon.bind(value, value)
    lexicon.bind("colour", "color")
    for shape in SHAPES:
        lexicon.bind(plural(shape), shape)
    for synonym in CUBE_SYNONYMS:
        lexicon.bind(synonym, "cube")
        lexicon.bind(plural(synonym), "cube")
    for concept, short in RELATION_CONCEPTS.items():
        lexicon.bind(concept, concept)
        lexicon.bind(short, concept)


def build_registry(  # pylint: disable=too-many-arguments
    seed: int = 0,
    dim: int = 64,
    gamma: float = 0.2,
    tau: float = 0.25,
    tau_query: float = 0.25,
    palette: Sequence[str] = BASE_COLORS,
) -> ConceptRegistry:
    """
    Build a registry over the synthetic world's vocabulary.

    :param seed: initialization seed.
    :param dim: embedding dimension.
    :param gamma: score offset.
    :param tau: score temperature.
    :param tau_query: query temperature.
    :param palette: colours to register.
    :return: the registry with attribute, relation and action concepts and a bound lexicon.
    """
    registry = ConceptRegistry(
        dim=dim,
        gamma=gamma,
        tau=tau,
        tau_query=tau_query,
        seed=seed,
        raw_object_dim=RAW_OBJECT_DIM,
        raw_pair_dim=RAW_PAIR_DIM,
    )
    for attribute, values in dict(ATTRIBUTES, color=tuple(palette)).items():
        for value in values:
            registry.register_concept(
                value, ConceptKind.OBJECT_ATTRIBUTE, attribute, seed=derive_seed(seed, "embedding", value)
            )
    for relation in RELATION_CONCEPTS:
        registry.register_concept(relation, ConceptKind.RELATION, seed=derive_seed(seed, "embedding", relation))
    for action in ACTION_CONCEPTS:
        registry.register_concept(
            action,
            ConceptKind.ACTION,
            seed=derive_seed(seed, "embedding", action),
            parameters=("x",) if action == "pick" else ("x", "y"),
        )
    bind_vocabulary(registry.lexicon, palette)
    _default_logger.info(
        f"built registry with {len(registry.concepts)} concepts over {len(registry.namespaces)} attributes"
    )
    return registry


# ---------------------------------------------------------------------------
# persistence


def scene_to_json(scene: SceneRecord, embed_features: bool = False) -> Dict[str, Any]:
    """Get the JSON representation of a scene; features are recomputable and elided by default."""
    record: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "mixing_seed": scene.mixing_seed,
        "noise": scene.noise,
        "objects": [obj.to_json() for obj in scene.objects],
    }
    if embed_features:
        record["features"] = scene.features.tolist()
        record["pair_features"] = scene.pair_features.tolist()
    return record


def scene_from_json(record: Mapping[str, Any]) -> SceneRecord:
    """Rebuild a scene from its JSON representation."""
    enforce(isinstance(record, Mapping), "a scene record must be a JSON object", GenerationError)
    enforce(
        record.get("schema_version") == SCHEMA_VERSION,
        f"unsupported scene schema {record.get('schema_version')}",
        GenerationError,
    )
    try:
        objects = [ObjectSpec(**obj) for obj in record["objects"]]
        scene = scene_from_objects(
            objects, int(record["seed"]), str(record["scene_id"]), int(record["mixing_seed"]), float(record["noise"])
        )
        if "features" in record:
            features = np.asarray(record["features"], dtype=np.float64).reshape(scene.features.shape)
            pair_features = np.asarray(record["pair_features"], dtype=np.float64).reshape(scene.pair_features.shape)
            scene = dataclasses.replace(scene, features=features, pair_features=pair_features)
    except KeyError as e:
        raise GenerationError(f"scene record is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise GenerationError(f"malformed scene record: {e}") from e
    return scene


def qa_from_json(record: Mapping[str, Any]) -> QAExample:
    """Rebuild a question example from its JSON representation."""
    return QAExample(
        question=record["question"],
        program=parse_program(record["program"]),
        answer=str(record["answer"]),
        stage=int(record["stage"]),
        scene_id=str(record["scene_id"]),
        template=str(record["template"]),
    )


def caption_from_json(record: Mapping[str, Any]) -> CaptionExample:
    """Rebuild a caption example from its JSON representation."""
    a, relation, b = record["triple"]
    return CaptionExample(record["caption"], (a, relation, b), bool(record["label"]), str(record["scene_id"]))


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]]) -> int:
    """
    Write one JSON object per line.

    :param path: the output file.
    :param records: the records.
    :return: the number of records written.
    """
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as stream:
        for record in records:
            stream.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    """Read one JSON object per line, skipping blank lines."""
    try:
        with open(path, encoding="utf-8") as stream:
            for number, line in enumerate(stream, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except ValueError as e:
                    raise GenerationError(f"{path}:{number}: invalid JSON: {e}") from e
                enforce(isinstance(record, dict), f"{path}:{number}: expected a JSON object", GenerationError)
                yield record
    except OSError as e:
        raise GenerationError(f"cannot read {path}: {e}") from e


# ---------------------------------------------------------------------------
# datasets

SCENES_FILE = "scenes.jsonl"
QA_FILE = "qa.jsonl"
CAPTIONS_FILE = "captions.jsonl"
DEFAULT_STAGE_SCENE_SIZES: Dict[int, Tuple[int, int]] = {1: (1, 3), 2: (3, 6), 3: (5, 10)}


@dataclass(frozen=True)
class GenerationSettings:  # pylint: disable=too-many-instance-attributes
    """What to generate and from which seed."""

    seed: int = 0
    palette: Tuple[str, ...] = BASE_COLORS
    mixing_seed: int = DEFAULT_MIXING_SEED
    feature_noise: float = DEFAULT_NOISE
    max_depth: int = 6
    stage_scene_sizes: Mapping[int, Tuple[int, int]] = field(
        default_factory=lambda: dict(DEFAULT_STAGE_SCENE_SIZES)
    )
    questions_per_scene: int = 4
    n_questions: int = 5000
    n_captions: int = 500
    test_questions: int = 1000
    jobs: int = 1


@dataclass
class Dataset:
    """Scenes with the questions and captions asked about them."""

    scenes: Dict[str, SceneRecord] = field(default_factory=dict)
    train: List[QAExample] = field(default_factory=list)
    test: List[QAExample] = field(default_factory=list)
    captions: List[CaptionExample] = field(default_factory=list)

    def add_scenes(self, scenes: Iterable[SceneRecord]) -> None:
        """Index scenes by identifier."""
        for scene in scenes:
            self.scenes[scene.scene_id] = scene

    def stage(self, stage: int) -> List[QAExample]:
        """Get the training questions of a stage."""
        return [example for example in self.train if example.stage == stage]

    def _records(self) -> Dict[str, List[Dict[str, Any]]]:
        questions = [dict(e.to_json(), split="train") for e in self.train]
        questions += [dict(e.to_json(), split="test") for e in self.test]
        return {
            SCENES_FILE: [scene_to_json(s) for s in self.scenes.values()],
            QA_FILE: questions,
            CAPTIONS_FILE: [c.to_json() for c in self.captions],
        }

    def save(self, directory: Path) -> Dict[str, str]:
        """
        Write the dataset as JSONL files.

        :param directory: the output directory, created if missing.
        :return: sha256 of each written file, by file name.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, records in self._records().items():
            write_jsonl(directory / name, records)
        return content_hashes(directory)

    @classmethod
    def load(cls, directory: Path) -> "Dataset":
        """Read a dataset written by `save`."""
        directory = Path(directory)
        for name in (SCENES_FILE, QA_FILE):
            enforce((directory / name).is_file(), f"{directory} holds no {name}", GenerationError)
        dataset = cls()
        dataset.add_scenes(scene_from_json(r) for r in read_jsonl(directory / SCENES_FILE))
        try:
            for record in read_jsonl(directory / QA_FILE):
                target = dataset.test if record.get("split") == "test" else dataset.train
                target.append(qa_from_json(record))
            if (directory / CAPTIONS_FILE).exists():
                dataset.captions = [caption_from_json(r) for r in read_jsonl(directory / CAPTIONS_FILE)]
        except KeyError as e:
            raise GenerationError(f"dataset record in {directory} is missing field {e}") from e
        except (TypeError, ValueError) as e:
            raise GenerationError(f"malformed dataset record in {directory}: {e}") from e
        _default_logger.info(
            f"loaded {len(dataset.scenes)} scenes, {len(dataset.train)} training and "
            f"{len(dataset.test)} test questions, {len(dataset.captions)} captions from {directory}"
        )
        return dataset


def content_hashes(directory: Path) -> Dict[str, str]:
    """Get the sha256 of the dataset files present in a directory."""
    hashes = {}
    for name in (SCENES_FILE, QA_FILE, CAPTIONS_FILE):
        path = Path(directory) / name
        if path.exists():
            hashes[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def _scene_questions(  # pylint: disable=too-many-arguments
    settings: GenerationSettings,
    prefix: str,
    stage: int,
    index: int,
    sizes: Tuple[int, int],
    min_depth: int,
    templates: Optional[Sequence[str]],
) -> Tuple[SceneRecord, List[QAExample]]:
    scene_seed = derive_seed(settings.seed, prefix, stage, index)
    low, high = sizes
    n_objects = int(np.random.default_rng(scene_seed).integers(low, high + 1))
    scene = gen_scene(
        scene_seed,
        n_objects,
        settings.palette,
        settings.mixing_seed,
        settings.feature_noise,
        scene_id=f"{prefix}-{stage}-{index:05d}",
    )
    examples = []
    for k in range(settings.questions_per_scene):
        try:
            examples.append(
                gen_question(
                    derive_seed(scene_seed, k),
                    stage,
                    scene,
                    settings.palette,
                    settings.max_depth,
                    min_depth,
                    templates=templates,
                )
            )
        except GenerationError as e:
            _default_logger.debug(f"skipped a question on {scene.scene_id}: {e}")
    return scene, examples


def gen_questions(  # pylint: disable=too-many-arguments
    settings: GenerationSettings,
    stage: int,
    count: int,
    prefix: str,
    sizes: Optional[Tuple[int, int]] = None,
    min_depth: int = 0,
    templates: Optional[Sequence[str]] = None,
) -> Tuple[List[SceneRecord], List[QAExample]]:
    """
    Generate questions of a stage over freshly drawn scenes.

    Scenes are drawn in order of their index and, with `jobs > 1`, generated on a
    thread pool; the output does not depend on the number of jobs.

    :param settings: the generation settings.
    :param stage: the curriculum stage.
    :param count: the number of questions.
    :param prefix: distinguishes the random streams and scene ids of different splits.
    :param sizes: the range of scene sizes; the stage's range by default.
    :param min_depth: minimum program depth.
    :param templates: draw from these templates instead of the stage's own.
    :return: the scenes and the questions.
    """
    sizes = sizes or tuple(settings.stage_scene_sizes[stage])  # type: ignore
    scenes: List[SceneRecord] = []
    examples: List[QAExample] = []
    index = 0
    with ThreadPoolExecutor(max_workers=max(1, settings.jobs)) as pool:
        while len(examples) < count:
            batch = range(index, index + -(-(count - len(examples)) // settings.questions_per_scene))
            index = batch.stop
            results = pool.map(
                lambda i: _scene_questions(settings, prefix, stage, i, sizes, min_depth, templates),  # type: ignore
                batch,
            )
            for scene, drawn in results:
                if drawn and len(examples) < count:
                    scenes.append(scene)
                    examples.extend(drawn[: count - len(examples)])
            enforce(
                index < 100 * (count + 1),
                f"cannot generate {count} stage {stage} questions",
                GenerationError,
            )
    return scenes, examples


def gen_captions(
    settings: GenerationSettings, count: int, prefix: str = "caption", positive_fraction: float = 0.5
) -> Tuple[List[SceneRecord], List[CaptionExample]]:
    """
    Generate captions, one per scene, over scenes sized like stage 2.

    :param settings: the generation settings.
    :param count: the number of captions.
    :param prefix: distinguishes the random stream and scene ids.
    :param positive_fraction: probability of a true caption.
    :return: the scenes and the captions.
    """
    low, high = settings.stage_scene_sizes[2]
    low = max(low, 2)

    def draw(index: int) -> Tuple[SceneRecord, CaptionExample]:
        seed = derive_seed(settings.seed, prefix, index)
        n_objects = int(np.random.default_rng(seed).integers(low, high + 1))
        scene = gen_scene(
            seed, n_objects, settings.palette, settings.mixing_seed, settings.feature_noise,
            scene_id=f"{prefix}-{index:05d}",
        )
        return scene, gen_caption(seed, scene, positive_fraction, settings.palette)

    with ThreadPoolExecutor(max_workers=max(1, settings.jobs)) as pool:
        pairs = list(pool.map(draw, range(count)))
    return [scene for scene, _ in pairs], [caption for _, caption in pairs]


def gen_dataset(settings: GenerationSettings) -> Dataset:
    """
    Generate the staged training questions, the test questions and the captions.

    :param settings: the generation settings.
    :return: the dataset.
    """
    dataset = Dataset()
    stages = sorted(settings.stage_scene_sizes)
    for position, stage in enumerate(stages):
        share = settings.n_questions // len(stages) + (position < settings.n_questions % len(stages))
        scenes, examples = gen_questions(settings, stage, share, "train")
        dataset.add_scenes(scenes)
        dataset.train.extend(examples)
        share = settings.test_questions // len(stages) + (position < settings.test_questions % len(stages))
        scenes, examples = gen_questions(settings, stage, share, "test")
        dataset.add_scenes(scenes)
        dataset.test.extend(examples)
    scenes, captions = gen_captions(settings, settings.n_captions)
    dataset.add_scenes(scenes)
    dataset.captions = captions
    _default_logger.info(
        f"generated {len(dataset.train)} training and {len(dataset.test)} test questions "
        f"and {len(dataset.captions)} captions over {len(dataset.scenes)} scenes"
    )
    return dataset
