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

"""This module contains the configuration parameters of the concept learner."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type

from aea.exceptions import enforce

from packages.nscl.concept_learner.exceptions import ConfigError
from packages.nscl.concept_learner.executor import ExecutorSettings
from packages.nscl.concept_learner.learning import ExperimentConfig, OptimizerKind, TrainConfig
from packages.nscl.concept_learner.worldgen import (
    BASE_COLORS,
    COLORS,
    DEFAULT_STAGE_SCENE_SIZES,
    MAX_OBJECTS,
    GenerationSettings,
)


_default_logger = logging.getLogger(__name__)


class BaseParams:
    """Pops its keys from the configuration and rejects whatever is left over."""

    values: Dict[str, Any]

    def __init__(self, **kwargs: Any) -> None:
        """
        Finish parsing.

        :param kwargs: the keys no mixin consumed.
        """
        enforce(not kwargs, f"unknown configuration keys: {sorted(kwargs)}", ConfigError)

    def _ensure(self, key: str, kwargs: Dict[str, Any], type_: Type, default: Any) -> Any:
        """
        Pop a key, falling back to its default.

        :param key: the configuration key.
        :param kwargs: the remaining configuration.
        :param type_: the expected type; integers are accepted for floats.
        :param default: the value when the key is absent.
        :return: the value.
        """
        if key not in kwargs or kwargs[key] is None:
            kwargs.pop(key, None)
            value = default
        else:
            value = kwargs.pop(key)
            if type_ is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            enforce(
                isinstance(value, type_) and not (type_ in (int, float) and isinstance(value, bool)),
                f"'{key}' must be of type {type_.__name__}, got {value!r}",
                ConfigError,
            )
        self.__dict__.setdefault("values", {})[key] = value
        return value


class ConceptParams(BaseParams):
    """Registry and executor parameters."""

    def __init__(self, **kwargs: Any) -> None:
        """Initialize the parameters."""
        self.seed: int = self._ensure("seed", kwargs, int, 0)
        self.dim: int = self._ensure("dim", kwargs, int, 64)
        self.gamma: float = self._ensure("gamma", kwargs, float, 0.2)
        self.tau: float = self._ensure("tau", kwargs, float, 0.25)
        self.tau_query: float = self._ensure("tau_query", kwargs, float, 0.25)
        self.count_sigma: float = self._ensure("count_sigma", kwargs, float, 0.25)
        self.compare_margin: float = self._ensure("compare_margin", kwargs, float, 0.5)
        self.unique_epsilon: float = self._ensure("unique_epsilon", kwargs, float, 1e-6)
        self.n_max: int = self._ensure("n_max", kwargs, int, MAX_OBJECTS)
        enforce(self.dim > 0, f"dim must be positive, got {self.dim}", ConfigError)
        enforce(
            self.tau > 0 and self.tau_query > 0 and self.count_sigma > 0,
            "tau, tau_query and count_sigma must be positive",
            ConfigError,
        )
        enforce(self.n_max >= MAX_OBJECTS, f"n_max must be at least {MAX_OBJECTS}", ConfigError)
        super().__init__(**kwargs)

    def executor_settings(self) -> ExecutorSettings:
        """Get the constants of the soft semantics."""
        return ExecutorSettings(self.n_max, self.count_sigma, self.unique_epsilon, self.compare_margin)


class GenerationParams(BaseParams):
    """Synthetic world parameters."""

    def __init__(self, **kwargs: Any) -> None:
        """Initialize the parameters."""
        self.mixing_seed: int = self._ensure("mixing_seed", kwargs, int, 1234)
        self.feature_noise: float = self._ensure("feature_noise", kwargs, float, 0.05)
        self.max_depth: int = self._ensure("max_depth", kwargs, int, 6)
        self.palette: Tuple[str, ...] = self._get_palette(kwargs)
        self.stage_scene_sizes: Dict[int, Tuple[int, int]] = self._get_stage_scene_sizes(kwargs)
        self.questions_per_scene: int = self._ensure("questions_per_scene", kwargs, int, 4)
        self.n_questions: int = self._ensure("n_questions", kwargs, int, 5000)
        self.n_captions: int = self._ensure("n_captions", kwargs, int, 500)
        self.test_questions: int = self._ensure("test_questions", kwargs, int, 1000)
        enforce(self.feature_noise >= 0, "feature_noise must not be negative", ConfigError)
        enforce(self.max_depth > 0, f"max_depth must be positive, got {self.max_depth}", ConfigError)
        enforce(self.questions_per_scene > 0, "questions_per_scene must be positive", ConfigError)
        enforce(
            min(self.n_questions, self.n_captions, self.test_questions) >= 0,
            "question and caption counts must not be negative",
            ConfigError,
        )
        super().__init__(**kwargs)

    def _get_palette(self, kwargs: Dict[str, Any]) -> Tuple[str, ...]:
        palette = self._ensure("palette", kwargs, list, list(BASE_COLORS))
        unknown = [color for color in palette if color not in COLORS]
        enforce(not unknown, f"unknown colours in palette: {unknown}", ConfigError)
        enforce(len(set(palette)) == len(palette) and len(palette) >= 2, "palette needs two distinct colours", ConfigError)
        return tuple(palette)

    def _get_stage_scene_sizes(self, kwargs: Dict[str, Any]) -> Dict[int, Tuple[int, int]]:
        default = {str(stage): list(sizes) for stage, sizes in DEFAULT_STAGE_SCENE_SIZES.items()}
        raw = self._ensure("stage_scene_sizes", kwargs, dict, default)
        sizes = {}
        for stage, bounds in raw.items():
            enforce(str(stage) in ("1", "2", "3"), f"unknown stage {stage!r}", ConfigError)
            enforce(
                isinstance(bounds, (list, tuple)) and len(bounds) == 2,
                f"stage {stage} sizes must be a [low, high] pair",
                ConfigError,
            )
            low, high = int(bounds[0]), int(bounds[1])
            enforce(1 <= low <= high <= MAX_OBJECTS, f"stage {stage} sizes out of range: {bounds}", ConfigError)
            sizes[int(stage)] = (low, high)
        return dict(sorted(sizes.items()))


class TrainingParams(BaseParams):
    """Optimization and curriculum parameters."""

    def __init__(self, **kwargs: Any) -> None:
        """Initialize the parameters."""
        self.learning_rate: float = self._ensure("learning_rate", kwargs, float, 0.01)
        self.batch_size: int = self._ensure("batch_size", kwargs, int, 32)
        self.max_epochs_per_stage: int = self._ensure("max_epochs_per_stage", kwargs, int, 50)
        self.advance_threshold: float = self._ensure("advance_threshold", kwargs, float, 0.9)
        self.optimizer: OptimizerKind = self._get_optimizer(kwargs)
        self.adam_beta1: float = self._ensure("adam_beta1", kwargs, float, 0.9)
        self.adam_beta2: float = self._ensure("adam_beta2", kwargs, float, 0.999)
        self.adam_eps: float = self._ensure("adam_eps", kwargs, float, 1e-8)
        self.validation_fraction: float = self._ensure("validation_fraction", kwargs, float, 0.1)
        self.replay_previous_stages: bool = self._ensure("replay_previous_stages", kwargs, bool, True)
        self.jobs: int = self._ensure("jobs", kwargs, int, 1)
        super().__init__(**kwargs)

    def _get_optimizer(self, kwargs: Dict[str, Any]) -> OptimizerKind:
        name = self._ensure("optimizer", kwargs, str, OptimizerKind.ADAM.value)
        valid = [kind.value for kind in OptimizerKind]
        enforce(name in valid, f"optimizer must be one of {valid}, got '{name}'", ConfigError)
        return OptimizerKind(name)


class ExperimentParams(BaseParams):
    """Baseline, few-shot, data-efficiency and action parameters."""

    def __init__(self, **kwargs: Any) -> None:
        """Initialize the parameters."""
        self.baseline_hidden: int = self._ensure("baseline_hidden", kwargs, int, 128)
        self.fewshot_examples: int = self._ensure("fewshot_examples", kwargs, int, 5)
        self.fewshot_steps: int = self._ensure("fewshot_steps", kwargs, int, 150)
        self.fewshot_learning_rate: float = self._ensure("fewshot_learning_rate", kwargs, float, 0.05)
        self.data_fractions: Tuple[float, ...] = self._get_data_fractions(kwargs)
        self.delta: float = self._ensure("delta", kwargs, float, 0.1)
        self.plan_depth_cap: int = self._ensure("plan_depth_cap", kwargs, int, 3)
        self.action_goals: int = self._ensure("action_goals", kwargs, int, 100)
        self.retrieval_pool: int = self._ensure("retrieval_pool", kwargs, int, 10)
        enforce(self.baseline_hidden > 0, "baseline_hidden must be positive", ConfigError)
        enforce(self.fewshot_examples > 0, "fewshot_examples must be positive", ConfigError)
        enforce(0.0 < self.delta < 1.0, f"delta must be in (0, 1), got {self.delta}", ConfigError)
        enforce(self.plan_depth_cap > 0, "plan_depth_cap must be positive", ConfigError)
        enforce(self.retrieval_pool > 0, "retrieval_pool must be positive", ConfigError)
        super().__init__(**kwargs)

    def _get_data_fractions(self, kwargs: Dict[str, Any]) -> Tuple[float, ...]:
        fractions = self._ensure("data_fractions", kwargs, list, [0.01, 0.1, 1.0])
        enforce(
            bool(fractions) and all(isinstance(f, (int, float)) and 0 < f <= 1 for f in fractions),
            f"data_fractions must be non-empty fractions in (0, 1], got {fractions}",
            ConfigError,
        )
        return tuple(float(f) for f in fractions)


class Params(ConceptParams, GenerationParams, TrainingParams, ExperimentParams):
    """Every configuration parameter of the concept learner."""

    def generation_settings(self) -> GenerationSettings:
        """Get the generation settings."""
        return GenerationSettings(
            seed=self.seed,
            palette=self.palette,
            mixing_seed=self.mixing_seed,
            feature_noise=self.feature_noise,
            max_depth=self.max_depth,
            stage_scene_sizes=self.stage_scene_sizes,
            questions_per_scene=self.questions_per_scene,
            n_questions=self.n_questions,
            n_captions=self.n_captions,
            test_questions=self.test_questions,
            jobs=self.jobs,
        )

    def train_config(self, dataset: Optional[str] = None) -> TrainConfig:
        """Get the training config."""
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs_per_stage=self.max_epochs_per_stage,
            advance_threshold=self.advance_threshold,
            seed=self.seed,
            optimizer=self.optimizer,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            validation_fraction=self.validation_fraction,
            replay_previous_stages=self.replay_previous_stages,
            executor=self.executor_settings(),
            jobs=self.jobs,
            dataset=dataset,
        )

    def experiment_config(self, dataset: Optional[str] = None) -> ExperimentConfig:
        """Get the experiment config."""
        return ExperimentConfig(
            generation=self.generation_settings(),
            training=self.train_config(dataset),
            dim=self.dim,
            gamma=self.gamma,
            tau=self.tau,
            tau_query=self.tau_query,
            baseline_hidden=self.baseline_hidden,
            data_fractions=self.data_fractions,
            fewshot_examples=self.fewshot_examples,
            fewshot_steps=self.fewshot_steps,
            fewshot_learning_rate=self.fewshot_learning_rate,
            delta=self.delta,
            plan_depth_cap=self.plan_depth_cap,
            action_goals=self.action_goals,
            retrieval_pool=self.retrieval_pool,
        )

    def echo(self) -> Dict[str, Any]:
        """Get every parsed value in its JSON form, for manifests."""
        echoed: Dict[str, Any] = {}
        for key, value in sorted(self.values.items()):
            if isinstance(value, tuple):
                value = list(value)
            echoed[key] = value
        echoed["optimizer"] = self.optimizer.value
        echoed["palette"] = list(self.palette)
        echoed["data_fractions"] = list(self.data_fractions)
        echoed["stage_scene_sizes"] = {str(k): list(v) for k, v in self.stage_scene_sizes.items()}
        return echoed


def load_params(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> Params:
    """
    Read a JSON configuration and apply command-line overrides.

    :param path: the configuration document; defaults only when missing.
    :param overrides: flag values; `None` values do not override.
    :return: the parameters.
    """
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read configuration {path}: {e}") from e
        enforce(isinstance(document, dict), f"configuration {path} must be a JSON object", ConfigError)
    applied: List[str] = []
    for key, value in (overrides or {}).items():
        if value is not None:
            document[key] = value
            applied.append(key)
    if applied:
        _default_logger.debug(f"flags override {applied}")
    return Params(**document)
