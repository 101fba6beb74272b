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

"""This module contains the concept registry and the concept grounding scores."""

import base64
import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.autodiff import Primitive, Tape
from packages.nscl.concept_learner.exceptions import (
    CheckpointError,
    RegistryError,
    UnknownWordError,
)


_default_logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nscl-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_DIM = 64
DEFAULT_GAMMA = 0.2
DEFAULT_TAU = 0.25
DEFAULT_TAU_QUERY = 0.25
RAW_OBJECT_DIM = 34
RAW_PAIR_DIM = 4
EMBEDDING_INIT_SCALE = 0.1

OBJECT_ENCODER = "encoder/object"
PAIR_ENCODER = "encoder/pair"


def derive_seed(*parts: Any) -> int:
    """
    Derive a 32-bit seed from a tuple of values.

    :param parts: ints or strings identifying a random stream.
    :return: the derived seed.
    """
    entropy = [
        int.from_bytes(hashlib.sha256(str(part).encode("utf-8")).digest()[:8], "little")
        for part in parts
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


class ConceptKind(Enum):
    """Concept kinds."""

    OBJECT_ATTRIBUTE = "object-attribute"
    RELATION = "relation"
    ACTION = "action"
    COMPOUND = "compound"


class Selector(Enum):
    """Which parameters `set_trainable` addresses."""

    ALL = "all"
    ONLY = "only"
    ALL_EXCEPT = "all-except"


class Direction(Enum):
    """Checkpoint direction."""

    SAVE = "save"
    LOAD = "load"


@dataclass
class ConceptEntry:  # pylint: disable=too-many-instance-attributes
    """A concept: typing, program template and grounding embedding."""

    name: str
    kind: ConceptKind
    namespace: Optional[str]
    parameters: Tuple[str, ...]
    program_template: str
    embedding: np.ndarray
    trainable: bool = True
    members: Tuple[str, ...] = ()

    @property
    def parameter_name(self) -> str:
        """Name of the embedding parameter."""
        return f"embedding/{self.name}"


@dataclass
class AttributeNamespace:
    """A mutually exclusive family of object concepts with its projection."""

    name: str
    members: List[str]
    projection: np.ndarray
    trainable: bool = True

    @property
    def parameter_name(self) -> str:
        """Name of the projection parameter."""
        return f"projection/{self.name}"


@dataclass
class FeatureMaps:
    """Learned encoders from raw object and pair features."""

    object_encoder: np.ndarray
    pair_encoder: np.ndarray
    object_trainable: bool = True
    pair_trainable: bool = True


@dataclass
class Lexicon:
    """Surface words bound to concept or attribute identifiers."""

    words: Dict[str, str] = field(default_factory=dict)

    def bind(self, word: str, target: str) -> None:
        """
        Bind a word.

        :param word: the surface word.
        :param target: a concept or attribute identifier.
        """
        enforce(
            self.words.get(word, target) == target,
            f"word '{word}' is already bound to '{self.words.get(word)}'",
            RegistryError,
        )
        self.words[word] = target

    def resolve(self, word: str) -> str:
        """
        Resolve a word.

        :param word: the surface word.
        :return: the bound identifier.
        """
        if word not in self.words:
            raise UnknownWordError(word)
        return self.words[word]

    def is_bound(self, word: str) -> bool:
        """Check whether a word is bound."""
        return word in self.words

    def words_for(self, target: str) -> List[str]:
        """Get the words bound to an identifier, sorted."""
        return sorted(word for word, bound in self.words.items() if bound == target)


class ConceptRegistry:
    """
    The concept registry.

    Parameters are named `embedding/<concept>`, `projection/<attribute>`,
    `encoder/object` and `encoder/pair`. Optimizers update the arrays in place.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        dim: int = DEFAULT_DIM,
        gamma: float = DEFAULT_GAMMA,
        tau: float = DEFAULT_TAU,
        tau_query: float = DEFAULT_TAU_QUERY,
        seed: int = 0,
        raw_object_dim: int = RAW_OBJECT_DIM,
        raw_pair_dim: int = RAW_PAIR_DIM,
    ) -> None:
        """
        Initialize an empty registry with freshly initialized encoders.

        :param dim: the embedding dimension.
        :param gamma: the score offset.
        :param tau: the score temperature.
        :param tau_query: the query softmax temperature.
        :param seed: seed of the encoder and projection initialization.
        :param raw_object_dim: dimension of raw object features.
        :param raw_pair_dim: dimension of raw pair features.
        """
        enforce(dim > 0 and tau > 0 and tau_query > 0, "dim and temperatures must be positive", RegistryError)
        self.dim = dim
        self.gamma = gamma
        self.tau = tau
        self.tau_query = tau_query
        self.seed = seed
        self.raw_object_dim = raw_object_dim
        self.raw_pair_dim = raw_pair_dim
        self.concepts: Dict[str, ConceptEntry] = {}
        self.namespaces: Dict[str, AttributeNamespace] = {}
        self.lexicon = Lexicon()
        object_rng = np.random.default_rng(derive_seed(seed, OBJECT_ENCODER))
        pair_rng = np.random.default_rng(derive_seed(seed, PAIR_ENCODER))
        self.feature_maps = FeatureMaps(
            object_encoder=object_rng.normal(0.0, 1.0 / np.sqrt(raw_object_dim), size=(dim, raw_object_dim)),
            pair_encoder=pair_rng.normal(0.0, 1.0 / np.sqrt(raw_pair_dim), size=(dim, raw_pair_dim)),
        )

    # ------------------------------------------------------------------
    # registration

    def _namespace(self, name: str) -> AttributeNamespace:
        if name not in self.namespaces:
            rng = np.random.default_rng(derive_seed(self.seed, "projection", name))
            projection = np.eye(self.dim) + rng.normal(0.0, 0.01, size=(self.dim, self.dim))
            self.namespaces[name] = AttributeNamespace(name, [], projection)
            _default_logger.debug(f"created attribute namespace {name}")
        return self.namespaces[name]

    def register_concept(  # pylint: disable=too-many-arguments
        self,
        name: str,
        kind: ConceptKind,
        namespace: Optional[str] = None,
        seed: int = 0,
        parameters: Optional[Sequence[str]] = None,
        program_template: Optional[str] = None,
    ) -> ConceptEntry:
        """
        Register a concept.

        :param name: the concept identifier.
        :param kind: object-attribute, relation or action.
        :param namespace: the attribute namespace, required for object attributes only.
        :param seed: seed of the embedding initialization.
        :param parameters: typed parameter names; defaults by kind.
        :param program_template: program fragment or action schema reference.
        :return: the new entry.
        """
        enforce(name not in self.concepts, f"concept '{name}' is already registered", RegistryError)
        enforce(kind != ConceptKind.COMPOUND, "use register_compound for compound concepts", RegistryError)
        if kind == ConceptKind.OBJECT_ATTRIBUTE:
            enforce(namespace is not None, f"object concept '{name}' needs a namespace", RegistryError)
        else:
            enforce(namespace is None, f"{kind.value} concept '{name}' cannot have a namespace", RegistryError)
        defaults = {
            ConceptKind.OBJECT_ATTRIBUTE: (("x",), f"(filter x {name})"),
            ConceptKind.RELATION: (("x", "y"), f"(relate {name} y)"),
            ConceptKind.ACTION: (("x", "y"), f"action:{name}"),
        }
        default_parameters, default_template = defaults[kind]
        embedding = np.random.default_rng(seed).uniform(
            -EMBEDDING_INIT_SCALE, EMBEDDING_INIT_SCALE, size=self.dim
        )
        entry = ConceptEntry(
            name=name,
            kind=kind,
            namespace=namespace,
            parameters=tuple(parameters) if parameters is not None else default_parameters,
            program_template=program_template or default_template,
            embedding=embedding,
        )
        if namespace is not None:
            self._namespace(namespace).members.append(name)
        self.concepts[name] = entry
        _default_logger.debug(f"registered {kind.value} concept {name}")
        return entry

    def register_compound(self, name: str, members: Sequence[str]) -> ConceptEntry:
        """
        Register the conjunction of object concepts as a concept of its own.

        :param name: the compound identifier.
        :param members: at least two object-attribute concepts.
        :return: the new entry; it has no embedding of its own.
        """
        enforce(name not in self.concepts, f"concept '{name}' is already registered", RegistryError)
        enforce(len(members) >= 2, "a compound needs at least two members", RegistryError)
        for member in members:
            self.entry(member, ConceptKind.OBJECT_ATTRIBUTE)
        template = "(filter " * len(members) + "x " + ") ".join(members) + ")"
        entry = ConceptEntry(
            name=name,
            kind=ConceptKind.COMPOUND,
            namespace=None,
            parameters=("x",),
            program_template=template,
            embedding=np.zeros(0),
            trainable=False,
            members=tuple(members),
        )
        self.concepts[name] = entry
        return entry

    def entry(self, name: str, kind: Optional[ConceptKind] = None) -> ConceptEntry:
        """
        Get a concept entry.

        :param name: the concept identifier.
        :param kind: the required kind, if any.
        :return: the entry.
        """
        enforce(name in self.concepts, f"unknown concept '{name}'", RegistryError)
        entry = self.concepts[name]
        if kind is not None:
            enforce(
                entry.kind == kind,
                f"concept '{name}' is a {entry.kind.value} concept, expected {kind.value}",
                RegistryError,
            )
        return entry

    def namespace(self, name: str) -> AttributeNamespace:
        """Get an attribute namespace."""
        enforce(name in self.namespaces, f"unknown attribute '{name}'", RegistryError)
        return self.namespaces[name]

    def namespace_of(self, concept: str) -> str:
        """Get the namespace of an object-attribute concept."""
        return str(self.entry(concept, ConceptKind.OBJECT_ATTRIBUTE).namespace)

    # ------------------------------------------------------------------
    # registry view used by the type checker

    def object_concepts(self) -> List[str]:
        """Get concepts usable to filter objects."""
        kinds = (ConceptKind.OBJECT_ATTRIBUTE, ConceptKind.COMPOUND)
        return [name for name, entry in self.concepts.items() if entry.kind in kinds]

    def relation_concepts(self) -> List[str]:
        """Get relation concepts."""
        return [name for name, entry in self.concepts.items() if entry.kind == ConceptKind.RELATION]

    def attribute_names(self) -> List[str]:
        """Get the non-empty attribute namespaces."""
        return [name for name, namespace in self.namespaces.items() if namespace.members]

    def action_concepts(self) -> List[str]:
        """Get action concepts."""
        return [name for name, entry in self.concepts.items() if entry.kind == ConceptKind.ACTION]

    # ------------------------------------------------------------------
    # parameters

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Get every parameter array by name, in a fixed order."""
        parameters: Dict[str, np.ndarray] = {
            OBJECT_ENCODER: self.feature_maps.object_encoder,
            PAIR_ENCODER: self.feature_maps.pair_encoder,
        }
        for namespace in self.namespaces.values():
            parameters[namespace.parameter_name] = namespace.projection
        for entry in self.concepts.values():
            if entry.kind != ConceptKind.COMPOUND:
                parameters[entry.parameter_name] = entry.embedding
        return parameters

    def trainable_names(self) -> List[str]:
        """Get the names of trainable parameters."""
        names = []
        if self.feature_maps.object_trainable:
            names.append(OBJECT_ENCODER)
        if self.feature_maps.pair_trainable:
            names.append(PAIR_ENCODER)
        names.extend(ns.parameter_name for ns in self.namespaces.values() if ns.trainable)
        names.extend(
            entry.parameter_name
            for entry in self.concepts.values()
            if entry.trainable and entry.kind != ConceptKind.COMPOUND
        )
        return names

    def snapshot(self) -> Dict[str, bytes]:
        """Get the raw bytes of every parameter, for bit-identity checks."""
        return {name: value.tobytes() for name, value in self.named_parameters().items()}

    def set_trainable(self, selector: Selector, flag: bool, concept: Optional[str] = None) -> None:
        """
        Set trainable flags.

        `ALL` sets every parameter to `flag`. `ONLY` sets the embedding of `concept`
        to `flag` and every other parameter to the opposite. `ALL_EXCEPT` does the
        reverse.

        :param selector: which parameters to address.
        :param flag: the flag.
        :param concept: the concept, for `ONLY` and `ALL_EXCEPT`.
        """
        if selector == Selector.ALL:
            rest, chosen = flag, flag
        else:
            enforce(concept is not None, f"{selector.value} needs a concept", RegistryError)
            enforce(concept in self.concepts, f"unknown concept '{concept}'", RegistryError)
            chosen = flag if selector == Selector.ONLY else not flag
            rest = not chosen
        self.feature_maps.object_trainable = rest
        self.feature_maps.pair_trainable = rest
        for namespace in self.namespaces.values():
            namespace.trainable = rest
        for name, entry in self.concepts.items():
            if entry.kind != ConceptKind.COMPOUND:
                entry.trainable = chosen if name == concept else rest
        _default_logger.debug(f"set_trainable {selector.value} {concept} -> {flag}")

    def copy(self) -> "ConceptRegistry":
        """Get an independent copy of the registry."""
        return copy.deepcopy(self)

    # ------------------------------------------------------------------
    # scoring

    def _feature(self, tape: Tape, feature: np.ndarray) -> Tuple[bytes, int]:
        key = np.asarray(feature, dtype=np.float64).tobytes()
        return key, tape.memoize(("feature", key), lambda: tape.constant(feature))

    def _encoded(self, tape: Tape, feature: np.ndarray) -> Tuple[bytes, int]:
        key, feature_id = self._feature(tape, feature)
        encoded = tape.memoize(
            ("encoded", key),
            lambda: tape.apply(
                Primitive.MATVEC,
                tape.parameter(OBJECT_ENCODER, self.feature_maps.object_encoder),
                feature_id,
            ),
        )
        return key, encoded

    def _projected(self, tape: Tape, feature: np.ndarray, attribute: str) -> Tuple[bytes, int]:
        key, encoded = self._encoded(tape, feature)
        namespace = self.namespace(attribute)
        projected = tape.memoize(
            ("projected", attribute, key),
            lambda: tape.apply(
                Primitive.MATVEC,
                tape.parameter(namespace.parameter_name, namespace.projection),
                encoded,
            ),
        )
        return key, projected

    def _embedding(self, tape: Tape, entry: ConceptEntry) -> int:
        return tape.parameter(entry.parameter_name, entry.embedding)

    def _calibrated(self, tape: Tape, cosine: int) -> int:
        shifted = tape.apply(Primitive.SUB, cosine, tape.scalar(self.gamma))
        scaled = tape.apply(Primitive.SCALE, shifted, tape.scalar(1.0 / self.tau))
        return tape.apply(Primitive.SIGMOID, scaled)

    def _cosine(self, tape: Tape, feature: np.ndarray, entry: ConceptEntry) -> int:
        key, projected = self._projected(tape, feature, str(entry.namespace))
        return tape.memoize(
            ("cosine", entry.name, key),
            lambda: tape.apply(Primitive.COSINE_SIMILARITY, projected, self._embedding(tape, entry)),
        )

    def object_score(self, tape: Tape, feature: np.ndarray, concept: str) -> int:
        """
        Record the probability that an object carries a concept.

        :param tape: the tape.
        :param feature: the raw object feature.
        :param concept: an object-attribute or compound concept.
        :return: a length-1 node with sigmoid((cos(A W f, e) - gamma) / tau).
        """
        entry = self.entry(concept)
        if entry.kind == ConceptKind.COMPOUND:
            scores = [self.object_score(tape, feature, member) for member in entry.members]
            product = scores[0]
            for score in scores[1:]:
                product = tape.apply(Primitive.MUL, product, score)
            return product
        enforce(
            entry.kind == ConceptKind.OBJECT_ATTRIBUTE,
            f"object_score needs an object concept, '{concept}' is a {entry.kind.value} concept",
            RegistryError,
        )
        key = np.asarray(feature, dtype=np.float64).tobytes()
        return tape.memoize(
            ("object_score", concept, key),
            lambda: self._calibrated(tape, self._cosine(tape, feature, entry)),
        )

    def relation_score(self, tape: Tape, pair_feature: np.ndarray, relation: str) -> int:
        """
        Record the probability that an ordered pair stands in a relation.

        :param tape: the tape.
        :param pair_feature: the raw pair feature.
        :param relation: a relation concept.
        :return: a length-1 node with sigmoid((cos(W g, e) - gamma) / tau).
        """
        entry = self.entry(relation, ConceptKind.RELATION)
        key, feature_id = self._feature(tape, pair_feature)

        def build() -> int:
            encoded = tape.memoize(
                ("pair-encoded", key),
                lambda: tape.apply(
                    Primitive.MATVEC,
                    tape.parameter(PAIR_ENCODER, self.feature_maps.pair_encoder),
                    feature_id,
                ),
            )
            cosine = tape.apply(Primitive.COSINE_SIMILARITY, encoded, self._embedding(tape, entry))
            return self._calibrated(tape, cosine)

        return tape.memoize(("relation_score", relation, key), build)

    def query_distribution(self, tape: Tape, feature: np.ndarray, attribute: str) -> int:
        """
        Record the distribution of an object's value of an attribute.

        :param tape: the tape.
        :param feature: the raw object feature.
        :param attribute: the attribute namespace.
        :return: a node over `namespace(attribute).members`, in member order.
        """
        namespace = self.namespace(attribute)
        enforce(bool(namespace.members), f"attribute '{attribute}' has no concepts", RegistryError)
        key = np.asarray(feature, dtype=np.float64).tobytes()

        def build() -> int:
            cosines = [
                self._cosine(tape, feature, self.concepts[member]) for member in namespace.members
            ]
            logits = tape.apply(Primitive.CONCAT, *cosines)
            scaled = tape.apply(Primitive.SCALE, logits, tape.scalar(1.0 / self.tau_query))
            return tape.apply(Primitive.SOFTMAX, scaled)

        return tape.memoize(("query", attribute, key), build)

    # ------------------------------------------------------------------
    # description

    def describe(self) -> Dict[str, Any]:
        """Get the manifest section listing namespaces, concepts and lexicon."""
        return {
            "dim": self.dim,
            "namespaces": {name: list(ns.members) for name, ns in self.namespaces.items()},
            "concepts": {name: entry.kind.value for name, entry in self.concepts.items()},
            "lexicon": dict(sorted(self.lexicon.words.items())),
        }


# ---------------------------------------------------------------------------
# checkpoints


def encode_array(array: np.ndarray) -> Dict[str, Any]:
    """Encode an array as base64 little-endian 64-bit floats with its shape."""
    data = np.ascontiguousarray(array, dtype="<f8").tobytes()
    return {"shape": list(array.shape), "data": base64.b64encode(data).decode("ascii")}


def decode_array(document: Dict[str, Any]) -> np.ndarray:
    """Decode an array written by `encode_array`."""
    shape = tuple(int(s) for s in document["shape"])
    raw = base64.b64decode(document["data"].encode("ascii"), validate=True)
    array = np.frombuffer(raw, dtype="<f8")
    enforce(
        array.size == int(np.prod(shape)),
        f"array data does not match shape {shape}",
        CheckpointError,
    )
    return array.reshape(shape).astype(np.float64)


def registry_to_document(registry: ConceptRegistry) -> Dict[str, Any]:
    """Serialize a registry into a JSON-compatible document."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": {
            "dim": registry.dim,
            "gamma": registry.gamma,
            "tau": registry.tau,
            "tau_query": registry.tau_query,
            "seed": registry.seed,
            "raw_object_dim": registry.raw_object_dim,
            "raw_pair_dim": registry.raw_pair_dim,
        },
        "encoders": {
            "object": encode_array(registry.feature_maps.object_encoder),
            "pair": encode_array(registry.feature_maps.pair_encoder),
            "object_trainable": registry.feature_maps.object_trainable,
            "pair_trainable": registry.feature_maps.pair_trainable,
        },
        "namespaces": [
            {
                "name": ns.name,
                "members": list(ns.members),
                "projection": encode_array(ns.projection),
                "trainable": ns.trainable,
            }
            for ns in registry.namespaces.values()
        ],
        "concepts": [
            {
                "name": entry.name,
                "kind": entry.kind.value,
                "namespace": entry.namespace,
                "parameters": list(entry.parameters),
                "program_template": entry.program_template,
                "members": list(entry.members),
                "embedding": encode_array(entry.embedding),
                "trainable": entry.trainable,
            }
            for entry in registry.concepts.values()
        ],
        "lexicon": dict(registry.lexicon.words),
    }


def _restore(registry: ConceptRegistry, document: Dict[str, Any]) -> None:
    enforce(
        document.get("format") == CHECKPOINT_FORMAT,
        "not a concept learner checkpoint",
        CheckpointError,
    )
    version = document.get("version")
    enforce(
        version == CHECKPOINT_VERSION,
        f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})",
        CheckpointError,
    )
    config = document["config"]
    registry.dim = int(config["dim"])
    registry.gamma = float(config["gamma"])
    registry.tau = float(config["tau"])
    registry.tau_query = float(config["tau_query"])
    registry.seed = int(config["seed"])
    registry.raw_object_dim = int(config["raw_object_dim"])
    registry.raw_pair_dim = int(config["raw_pair_dim"])
    encoders = document["encoders"]
    registry.feature_maps = FeatureMaps(
        object_encoder=decode_array(encoders["object"]),
        pair_encoder=decode_array(encoders["pair"]),
        object_trainable=bool(encoders["object_trainable"]),
        pair_trainable=bool(encoders["pair_trainable"]),
    )
    registry.namespaces = {
        ns["name"]: AttributeNamespace(
            name=ns["name"],
            members=list(ns["members"]),
            projection=decode_array(ns["projection"]),
            trainable=bool(ns["trainable"]),
        )
        for ns in document["namespaces"]
    }
    registry.concepts = {
        c["name"]: ConceptEntry(
            name=c["name"],
            kind=ConceptKind(c["kind"]),
            namespace=c["namespace"],
            parameters=tuple(c["parameters"]),
            program_template=c["program_template"],
            embedding=decode_array(c["embedding"]),
            trainable=bool(c["trainable"]),
            members=tuple(c["members"]),
        )
        for c in document["concepts"]
    }
    registry.lexicon = Lexicon(dict(document["lexicon"]))
    _check_shapes(registry)


def _check_shapes(registry: ConceptRegistry) -> None:
    dim = registry.dim
    enforce(dim > 0, f"checkpoint dim must be positive, got {dim}", CheckpointError)
    expected = {
        OBJECT_ENCODER: (registry.feature_maps.object_encoder, (dim, registry.raw_object_dim)),
        PAIR_ENCODER: (registry.feature_maps.pair_encoder, (dim, registry.raw_pair_dim)),
    }
    for namespace in registry.namespaces.values():
        expected[namespace.parameter_name] = (namespace.projection, (dim, dim))
    for entry in registry.concepts.values():
        shape = (0,) if entry.kind == ConceptKind.COMPOUND else (dim,)
        expected[entry.parameter_name] = (entry.embedding, shape)
    for name, (array, shape) in expected.items():
        enforce(
            array.shape == shape,
            f"checkpoint parameter {name} has shape {array.shape}, expected {shape}",
            CheckpointError,
        )


def persist(registry: ConceptRegistry, path: Path, direction: Direction) -> None:
    """
    Save a registry to, or load it in place from, a versioned JSON checkpoint.

    :param registry: the registry.
    :param path: the checkpoint path.
    :param direction: save or load.
    """
    path = Path(path)
    if direction == Direction.SAVE:
        text = json.dumps(registry_to_document(registry), sort_keys=True, indent=2)
        try:
            path.write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
        _default_logger.info(f"saved checkpoint with {len(registry.concepts)} concepts to {path}")
        return
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    except ValueError as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e
    enforce(isinstance(document, dict), f"corrupt checkpoint {path}: not an object", CheckpointError)
    staged = copy.deepcopy(registry)
    try:
        _restore(staged, document)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e!r}") from e
    registry.__dict__.update(staged.__dict__)
    _default_logger.info(f"loaded checkpoint with {len(registry.concepts)} concepts from {path}")


def from_checkpoint(path: Path) -> ConceptRegistry:
    """Load a registry from a checkpoint file."""
    registry = ConceptRegistry()
    persist(registry, path, Direction.LOAD)
    return registry
