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

"""This module contains the exceptions raised by the concept learner."""

from typing import Any, Optional

from aea.exceptions import AEAEnforceError


class ConceptLearnerError(AEAEnforceError):
    """Base error of the concept learner."""


class ShapeError(ConceptLearnerError):
    """Operand shapes are not valid for a primitive."""


class DomainError(ConceptLearnerError):
    """An operand lies outside the domain of a primitive."""


class NonFiniteValueError(DomainError):
    """A forward step produced NaN or Inf."""


class GradientError(ConceptLearnerError):
    """Backward was requested from a node that is not a scalar."""


class DslParseError(ConceptLearnerError):
    """Program text could not be parsed."""

    def __init__(self, message: str, position: int) -> None:
        """
        Initialize the error.

        :param message: the error message.
        :param position: character offset of the offending token.
        """
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TypeCheckError(ConceptLearnerError):
    """A program is not type-correct."""

    def __init__(self, report: Any) -> None:
        """
        Initialize the error.

        :param report: the type error report.
        """
        super().__init__(str(report))
        self.report = report


class RegistryError(ConceptLearnerError):
    """Invalid operation on the concept registry."""


class CheckpointError(ConceptLearnerError):
    """A checkpoint could not be written or read."""


class ExecutionError(ConceptLearnerError):
    """A program could not be executed on a scene."""


class AnswerError(ConceptLearnerError):
    """An answer token is not in the support of a distribution."""


class GenerationError(ConceptLearnerError):
    """A generator could not realize the requested sample."""


class UnknownWordError(ConceptLearnerError):
    """A word is not bound in the lexicon."""

    def __init__(self, word: str) -> None:
        """
        Initialize the error.

        :param word: the unbound word.
        """
        super().__init__(f"unknown word '{word}'")
        self.word = word


class TemplateMatchError(ConceptLearnerError):
    """No question template matches a text."""


class NonFiniteLossError(ConceptLearnerError):
    """Training produced a non-finite loss."""

    def __init__(
        self, message: str, batch_id: int, node: Optional[str] = None
    ) -> None:
        """
        Initialize the error.

        :param message: the error message.
        :param batch_id: the batch in which the loss diverged.
        :param node: description of the offending tape node, if known.
        """
        super().__init__(f"{message} (batch {batch_id}, node {node})")
        self.batch_id = batch_id
        self.node = node


class FewShotError(ConceptLearnerError):
    """A few-shot episode is not valid."""


class GroundingError(ConceptLearnerError):
    """An action is grounded on objects that do not exist."""


class PreconditionError(ConceptLearnerError):
    """An action was applied in a state violating its precondition."""


class GoalSyntaxError(ConceptLearnerError):
    """A goal formula could not be parsed."""


class ConfigError(ConceptLearnerError):
    """The configuration document is invalid."""
