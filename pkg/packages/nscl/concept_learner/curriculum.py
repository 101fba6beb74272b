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

"""This module contains the curriculum: a small state machine over training stages."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

from aea.exceptions import enforce

from packages.nscl.concept_learner.exceptions import ConfigError


_default_logger = logging.getLogger(__name__)


class Stage(Enum):
    """Curriculum stages."""

    SIMPLE_SCENES = 1
    RELATIONS = 2
    COMPOSITION = 3
    FINISHED = 4


class Event(Enum):
    """Outcomes of a training epoch."""

    CONTINUE = "continue"
    THRESHOLD_REACHED = "threshold_reached"
    EPOCH_CAP = "epoch_cap"
    NO_DATA = "no_data"


TRANSITION_FUNCTION: Dict[Stage, Dict[Event, Stage]] = {
    Stage.SIMPLE_SCENES: {
        Event.CONTINUE: Stage.SIMPLE_SCENES,
        Event.THRESHOLD_REACHED: Stage.RELATIONS,
        Event.EPOCH_CAP: Stage.RELATIONS,
        Event.NO_DATA: Stage.RELATIONS,
    },
    Stage.RELATIONS: {
        Event.CONTINUE: Stage.RELATIONS,
        Event.THRESHOLD_REACHED: Stage.COMPOSITION,
        Event.EPOCH_CAP: Stage.COMPOSITION,
        Event.NO_DATA: Stage.COMPOSITION,
    },
    Stage.COMPOSITION: {
        Event.CONTINUE: Stage.COMPOSITION,
        Event.THRESHOLD_REACHED: Stage.FINISHED,
        Event.EPOCH_CAP: Stage.FINISHED,
        Event.NO_DATA: Stage.FINISHED,
    },
    Stage.FINISHED: {},
}


@dataclass(frozen=True)
class EpochRecord:
    """What happened at the end of an epoch."""

    stage: int
    epoch: int
    validation_accuracy: float
    event: Event


@dataclass
class Curriculum:
    """
    Tracks the active stage.

    A stage ends when its validation accuracy reaches the threshold or when its epoch
    cap is hit; stages only move forward.
    """

    advance_threshold: float = 0.9
    max_epochs_per_stage: int = 50
    replay_previous_stages: bool = True
    stage: Stage = Stage.SIMPLE_SCENES
    epoch_in_stage: int = 0
    history: List[EpochRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Check the schedule."""
        enforce(
            0.0 < self.advance_threshold <= 1.0,
            f"advance_threshold must be in (0, 1], got {self.advance_threshold}",
            ConfigError,
        )
        enforce(
            self.max_epochs_per_stage > 0,
            f"max_epochs_per_stage must be positive, got {self.max_epochs_per_stage}",
            ConfigError,
        )

    @property
    def finished(self) -> bool:
        """Whether every stage is done."""
        return self.stage == Stage.FINISHED

    @property
    def stage_index(self) -> int:
        """The number of the active stage."""
        return int(self.stage.value)

    def active_stages(self) -> Tuple[int, ...]:
        """Get the stages whose training data is in use."""
        if self.finished:
            return ()
        if self.replay_previous_stages:
            return tuple(range(1, self.stage_index + 1))
        return (self.stage_index,)

    def observe(self, validation_accuracy: float) -> Event:
        """
        Record the end of an epoch and move to the next stage when due.

        :param validation_accuracy: accuracy on the active stage's validation split.
        :return: the event that drove the transition.
        """
        enforce(not self.finished, "the curriculum is finished", ConfigError)
        self.epoch_in_stage += 1
        if validation_accuracy >= self.advance_threshold:
            event = Event.THRESHOLD_REACHED
        elif self.epoch_in_stage >= self.max_epochs_per_stage:
            event = Event.EPOCH_CAP
        else:
            event = Event.CONTINUE
        self.history.append(EpochRecord(self.stage_index, self.epoch_in_stage, validation_accuracy, event))
        next_stage = TRANSITION_FUNCTION[self.stage][event]
        if next_stage != self.stage:
            _default_logger.info(
                f"stage {self.stage_index} done after {self.epoch_in_stage} epoch(s) "
                f"({event.value}, validation accuracy {validation_accuracy:.3f})"
            )
            self.stage = next_stage
            self.epoch_in_stage = 0
        return event

    def skip(self) -> Event:
        """Leave a stage that has no training data without running an epoch."""
        enforce(not self.finished, "the curriculum is finished", ConfigError)
        _default_logger.warning(f"stage {self.stage_index} has no training data, skipping it")
        self.stage = TRANSITION_FUNCTION[self.stage][Event.NO_DATA]
        self.epoch_in_stage = 0
        return Event.NO_DATA
