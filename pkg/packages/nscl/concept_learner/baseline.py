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

"""This module contains the monolithic question answering baseline."""

import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
from aea.exceptions import enforce

from packages.nscl.concept_learner.autodiff import Primitive, Tape
from packages.nscl.concept_learner.concepts import decode_array, derive_seed, encode_array
from packages.nscl.concept_learner.exceptions import CheckpointError
from packages.nscl.concept_learner.executor import AnswerDistribution
from packages.nscl.concept_learner.worldgen import (
    ATTRIBUTES,
    BASE_COLORS,
    MAX_OBJECTS,
    NO,
    RAW_OBJECT_DIM,
    YES,
    QAExample,
    SceneRecord,
)


_default_logger = logging.getLogger(__name__)

BASELINE_FORMAT = "nscl-baseline"
BASELINE_VERSION = 1
DEFAULT_HIDDEN = 128
DEFAULT_WORD_DIM = 32
_WORD = re.compile(r"[a-z]+")


def tokenize(text: str) -> List[str]:
    """Split a question into lowercase words."""
    return _WORD.findall(text.lower())


def answer_vocabulary(palette: Sequence[str] = BASE_COLORS) -> List[str]:
    """Get every answer token the synthetic world can produce, in a fixed order."""
    tokens = [YES, NO] + [str(k) for k in range(MAX_OBJECTS + 1)]
    for attribute, values in ATTRIBUTES.items():
        tokens.extend(palette if attribute == "color" else values)
    return tokens


class BaselineModel:
    """
    Answers questions without concepts or programs.

    The question is a bag of words, the scene is the mean and max of its raw object
    features, and a two-layer perceptron over both scores every answer token.
    """

    name = "baseline"

    def __init__(  # pylint: disable=too-many-arguments
        self,
        words: Sequence[str],
        answers: Sequence[str],
        hidden: int = DEFAULT_HIDDEN,
        word_dim: int = DEFAULT_WORD_DIM,
        seed: int = 0,
    ) -> None:
        """
        Initialize the model with seeded random weights.

        :param words: the question vocabulary; other words are ignored.
        :param answers: the answer vocabulary.
        :param hidden: width of the hidden layer.
        :param word_dim: width of the word embeddings.
        :param seed: initialization seed.
        """
        self.words = list(words)
        self.answers = tuple(answers)
        self.hidden = hidden
        self.word_dim = word_dim
        self.seed = seed
        self._word_index = {word: k for k, word in enumerate(self.words)}
        scene_dim = 2 * RAW_OBJECT_DIM
        shapes = {
            "baseline/words": (word_dim, max(1, len(self.words))),
            "baseline/hidden": (hidden, word_dim + scene_dim),
            "baseline/hidden_bias": (hidden,),
            "baseline/output": (len(self.answers), hidden),
            "baseline/output_bias": (len(self.answers),),
        }
        self.parameters: Dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            if name.endswith("_bias"):
                self.parameters[name] = np.zeros(shape)
                continue
            rng = np.random.default_rng(derive_seed(seed, name))
            self.parameters[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)

    @classmethod
    def for_examples(
        cls,
        examples: Iterable[QAExample],
        palette: Sequence[str] = BASE_COLORS,
        hidden: int = DEFAULT_HIDDEN,
        seed: int = 0,
    ) -> "BaselineModel":
        """Build a model whose vocabulary covers a set of training questions."""
        words = sorted({word for example in examples for word in tokenize(example.question)})
        return cls(words, answer_vocabulary(palette), hidden=hidden, seed=seed)

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Get the parameter arrays by name."""
        return self.parameters

    def trainable_names(self) -> List[str]:
        """Every baseline parameter is trainable."""
        return list(self.parameters)

    def bag_of_words(self, question: str) -> np.ndarray:
        """Count the known words of a question."""
        counts = np.zeros(max(1, len(self.words)))
        for word in tokenize(question):
            if word in self._word_index:
                counts[self._word_index[word]] += 1.0
        return counts

    @staticmethod
    def pooled(scene: SceneRecord) -> np.ndarray:
        """Mean and max pooling of the raw object features."""
        return np.concatenate([scene.features.mean(axis=0), scene.features.max(axis=0)])

    def answer(self, example: QAExample, scene: SceneRecord, tape: Tape) -> AnswerDistribution:
        """
        Record the answer distribution of a question on a scene.

        :param example: the question; only its text is used.
        :param scene: the scene.
        :param tape: the tape.
        :return: a distribution over the whole answer vocabulary.
        """

        def parameter(name: str) -> int:
            return tape.parameter(name, self.parameters[name])

        question = tape.apply(
            Primitive.MATVEC, parameter("baseline/words"), tape.constant(self.bag_of_words(example.question))
        )
        joint = tape.apply(Primitive.CONCAT, question, tape.constant(self.pooled(scene)))
        hidden = tape.apply(
            Primitive.SIGMOID,
            tape.apply(
                Primitive.ADD,
                tape.apply(Primitive.MATVEC, parameter("baseline/hidden"), joint),
                parameter("baseline/hidden_bias"),
            ),
        )
        logits = tape.apply(
            Primitive.ADD,
            tape.apply(Primitive.MATVEC, parameter("baseline/output"), hidden),
            parameter("baseline/output_bias"),
        )
        return AnswerDistribution(self.answers, tape.apply(Primitive.SOFTMAX, logits))

    def save(self, path: Path) -> None:
        """Write a versioned JSON checkpoint."""
        document = {
            "format": BASELINE_FORMAT,
            "version": BASELINE_VERSION,
            "config": {"hidden": self.hidden, "word_dim": self.word_dim, "seed": self.seed},
            "words": self.words,
            "answers": list(self.answers),
            "parameters": {name: encode_array(value) for name, value in self.parameters.items()},
        }
        Path(path).write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        _default_logger.info(f"saved baseline checkpoint to {path}")

    @classmethod
    def load(cls, path: Path) -> "BaselineModel":
        """Read a checkpoint written by `save`."""
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise CheckpointError(f"cannot read baseline checkpoint {path}: {e}") from e
        except ValueError as e:
            raise CheckpointError(f"corrupt baseline checkpoint {path}: {e}") from e
        enforce(
            isinstance(document, dict) and document.get("format") == BASELINE_FORMAT,
            f"{path} is not a baseline checkpoint",
            CheckpointError,
        )
        enforce(
            document.get("version") == BASELINE_VERSION,
            f"baseline checkpoint version {document.get('version')} is not supported",
            CheckpointError,
        )
        config = document["config"]
        model = cls(
            document["words"],
            document["answers"],
            hidden=int(config["hidden"]),
            word_dim=int(config["word_dim"]),
            seed=int(config["seed"]),
        )
        for name, encoded in document["parameters"].items():
            value = decode_array(encoded)
            enforce(
                name in model.parameters and value.shape == model.parameters[name].shape,
                f"corrupt baseline checkpoint {path}: unexpected parameter {name}",
                CheckpointError,
            )
            model.parameters[name] = value
        return model
