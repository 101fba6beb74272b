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

"""This module contains the training and evaluation harness and the experiment suites."""

import dataclasses
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd  # type: ignore
from aea.exceptions import enforce

from packages.nscl.concept_learner.actions import run_action_suite
from packages.nscl.concept_learner.autodiff import Primitive, Tape, backward
from packages.nscl.concept_learner.baseline import DEFAULT_HIDDEN, BaselineModel
from packages.nscl.concept_learner.concepts import (
    ConceptKind,
    ConceptRegistry,
    Selector,
    derive_seed,
)
from packages.nscl.concept_learner.curriculum import Curriculum, EpochRecord, Event
from packages.nscl.concept_learner.dsl import AttrEqual, Program, Query, RelateAttrEqual
from packages.nscl.concept_learner.exceptions import (
    ConfigError,
    DomainError,
    FewShotError,
    GenerationError,
    NonFiniteLossError,
)
from packages.nscl.concept_learner.executor import (
    AnswerDistribution,
    ExecutorSettings,
    Mode,
    answer_loss,
    execute,
)
from packages.nscl.concept_learner.worldgen import (
    COLORS,
    NOVEL_COLOR,
    TEMPLATES_BY_NAME,
    YES,
    Dataset,
    GenerationSettings,
    QAExample,
    SceneRecord,
    build_registry,
    concept_holds,
    gen_captions,
    gen_dataset,
    gen_question,
    gen_questions,
    gen_scene,
    oracle_execute,
)


_default_logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["model", "split", "fraction", "question_type", "accuracy", "n", "concept_accuracy"]
REPORT_COLUMNS = ["model", "split", "fraction", "accuracy", "n"]
SUITE_KINDS = ("data_efficiency", "compositional", "retrieval", "actions")
CONCEPT_THRESHOLD = 0.5


class OptimizerKind(Enum):
    """Supported optimizers."""

    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """Knobs of a training run."""

    learning_rate: float = 0.01
    batch_size: int = 32
    max_epochs_per_stage: int = 50
    advance_threshold: float = 0.9
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_fraction: float = 0.1
    replay_previous_stages: bool = True
    executor: ExecutorSettings = field(default_factory=ExecutorSettings)
    jobs: int = 1
    dataset: Optional[str] = None

    def __post_init__(self) -> None:
        """Check the knobs."""
        enforce(self.learning_rate > 0, f"learning_rate must be positive, got {self.learning_rate}", ConfigError)
        enforce(self.batch_size > 0, f"batch_size must be positive, got {self.batch_size}", ConfigError)
        enforce(
            self.max_epochs_per_stage > 0,
            f"max_epochs_per_stage must be positive, got {self.max_epochs_per_stage}",
            ConfigError,
        )
        enforce(
            0.0 < self.advance_threshold <= 1.0,
            f"advance_threshold must be in (0, 1], got {self.advance_threshold}",
            ConfigError,
        )
        enforce(
            0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_eps > 0,
            "adam betas must be in [0, 1) and adam_eps positive",
            ConfigError,
        )
        enforce(
            0.0 <= self.validation_fraction < 1.0,
            f"validation_fraction must be in [0, 1), got {self.validation_fraction}",
            ConfigError,
        )
        enforce(self.jobs > 0, f"jobs must be positive, got {self.jobs}", ConfigError)


# ---------------------------------------------------------------------------
# optimizers


class Optimizer:
    """In-place updates of the trainable parameters that received a gradient."""

    def __init__(self, learning_rate: float) -> None:
        """Initialize the optimizer."""
        self.learning_rate = learning_rate

    def _delta(self, name: str, gradient: np.ndarray) -> np.ndarray:
        raise NotImplementedError  # pragma: nocover

    def step(
        self,
        parameters: Mapping[str, np.ndarray],
        gradients: Mapping[str, np.ndarray],
        trainable: Sequence[str],
    ) -> None:
        """
        Update parameters in place.

        Frozen parameters and parameters without a gradient are not touched at all.

        :param parameters: the live parameter arrays.
        :param gradients: gradients by parameter name.
        :param trainable: names of the trainable parameters.
        """
        for name in trainable:
            if name in gradients and name in parameters:
                parameters[name][...] -= self._delta(name, gradients[name])


class SGD(Optimizer):
    """Plain gradient descent."""

    def _delta(self, name: str, gradient: np.ndarray) -> np.ndarray:
        return self.learning_rate * gradient


class Adam(Optimizer):
    """Adam with per-parameter step counts."""

    def __init__(
        self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> None:
        """Initialize the optimizer with empty moments."""
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    def _delta(self, name: str, gradient: np.ndarray) -> np.ndarray:
        m = self.beta1 * self.first.get(name, 0.0) + (1 - self.beta1) * gradient
        v = self.beta2 * self.second.get(name, 0.0) + (1 - self.beta2) * gradient**2
        t = self.steps.get(name, 0) + 1
        self.first[name], self.second[name], self.steps[name] = m, v, t
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        return self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, learning_rate: Optional[float] = None) -> Optimizer:
    """Build the optimizer a config asks for."""
    rate = learning_rate if learning_rate is not None else config.learning_rate
    if config.optimizer == OptimizerKind.SGD:
        return SGD(rate)
    return Adam(rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


# ---------------------------------------------------------------------------
# models


class Model(Protocol):
    """Anything that answers questions with trainable parameters."""

    name: str

    def answer(self, example: QAExample, scene: SceneRecord, tape: Tape) -> AnswerDistribution:
        """Record the answer distribution of a question on a scene."""

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Get the parameter arrays by name."""

    def trainable_names(self) -> List[str]:
        """Get the names of the trainable parameters."""


class ConceptModel:
    """Answers questions by executing their programs over learned concepts."""

    name = "concept"

    def __init__(
        self,
        registry: ConceptRegistry,
        settings: Optional[ExecutorSettings] = None,
        mode: Mode = Mode.SOFT,
    ) -> None:
        """Wrap a registry."""
        self.registry = registry
        self.settings = settings or ExecutorSettings()
        self.mode = mode

    def answer(self, example: QAExample, scene: SceneRecord, tape: Tape) -> AnswerDistribution:
        """Execute the question's program."""
        result, _ = execute(example.program, scene, self.registry, tape, self.mode, self.settings)
        return result

    def named_parameters(self) -> Dict[str, np.ndarray]:
        """Get the registry's parameters."""
        return self.registry.named_parameters()

    def trainable_names(self) -> List[str]:
        """Get the registry's trainable parameters."""
        return self.registry.trainable_names()


# ---------------------------------------------------------------------------
# metrics


@dataclass
class SplitMetrics:
    """Accuracy on one split."""

    split: str
    n: int = 0
    correct: int = 0
    by_type: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    concept_accuracy: Optional[float] = None
    per_concept: Dict[str, float] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        """Fraction of correct answers; 0 on an empty split."""
        return self.correct / self.n if self.n else 0.0

    def type_accuracy(self) -> Dict[str, float]:
        """Get the accuracy per question type."""
        return {name: correct / n for name, (correct, n) in sorted(self.by_type.items())}


@dataclass
class Metrics:
    """What a run reports."""

    model: str
    fraction: float = 1.0
    splits: Dict[str, SplitMetrics] = field(default_factory=dict)
    loss_curve: List[float] = field(default_factory=list)
    history: List[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_frame(self, by_type: bool = True) -> pd.DataFrame:
        """
        Tabulate the metrics.

        :param by_type: add one row per question type under each split's overall row.
        :return: a frame with `METRIC_COLUMNS`.
        """
        rows = []
        for split in self.splits.values():
            rows.append(
                {
                    "model": self.model,
                    "split": split.split,
                    "fraction": self.fraction,
                    "question_type": "all",
                    "accuracy": split.accuracy,
                    "n": split.n,
                    "concept_accuracy": split.concept_accuracy,
                }
            )
            if not by_type:
                continue
            for name, (correct, n) in sorted(split.by_type.items()):
                rows.append(
                    {
                        "model": self.model,
                        "split": split.split,
                        "fraction": self.fraction,
                        "question_type": name,
                        "accuracy": correct / n,
                        "n": n,
                        "concept_accuracy": None,
                    }
                )
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    def delta(self, before: str, after: str) -> float:
        """Get the accuracy change from one split to another."""
        return self.splits[after].accuracy - self.splits[before].accuracy

    def summary(self) -> Dict[str, Any]:
        """Get the curves and schedule of the run, for manifests."""
        return {
            "model": self.model,
            "fraction": self.fraction,
            "loss_curve": self.loss_curve,
            "history": [
                {
                    "stage": record.stage,
                    "epoch": record.epoch,
                    "validation_accuracy": record.validation_accuracy,
                    "event": record.event.value,
                }
                for record in self.history
            ],
            "per_concept": {name: split.per_concept for name, split in self.splits.items() if split.per_concept},
        }


def write_metrics(frame: pd.DataFrame, path: Any) -> None:
    """Write a metrics frame as CSV with a fixed float format."""
    frame.to_csv(path, index=False, float_format="%.6f")


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(
    model: Model,
    examples: Sequence[QAExample],
    scenes: Mapping[str, SceneRecord],
    split: str = "eval",
    jobs: int = 1,
) -> SplitMetrics:
    """
    Score argmax answers against gold answers.

    :param model: the model; it is only read.
    :param examples: the questions.
    :param scenes: scenes by identifier.
    :param split: the split name.
    :param jobs: evaluation threads; results do not depend on it.
    :return: overall and per-question-type accuracy.
    """

    def is_correct(example: QAExample) -> bool:
        tape = Tape()
        return model.answer(example, scenes[example.scene_id], tape).argmax(tape) == example.answer

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        outcomes = list(pool.map(is_correct, examples))
    metrics = SplitMetrics(split, n=len(outcomes), correct=sum(outcomes))
    for example, outcome in zip(examples, outcomes):
        correct, n = metrics.by_type.get(example.template, (0, 0))
        metrics.by_type[example.template] = (correct + int(outcome), n + 1)
    return metrics


def concept_accuracy(
    registry: ConceptRegistry,
    scenes: Sequence[SceneRecord],
    concepts: Optional[Sequence[str]] = None,
) -> Tuple[float, Dict[str, float]]:
    """
    Classify every object of every scene by thresholding its concept scores at 0.5.

    :param registry: the registry.
    :param scenes: the scenes.
    :param concepts: object-attribute concepts to check; all of them by default.
    :return: overall accuracy against ground truth and accuracy per concept.
    """
    if concepts is None:
        concepts = [
            name for name, entry in registry.concepts.items() if entry.kind == ConceptKind.OBJECT_ATTRIBUTE
        ]
    hits = {concept: 0 for concept in concepts}
    total = 0
    for scene in scenes:
        tape = Tape()
        for i, obj in enumerate(scene.objects):
            total += 1
            for concept in concepts:
                p = float(tape.value(registry.object_score(tape, scene.features[i], concept))[0])
                hits[concept] += int((p >= CONCEPT_THRESHOLD) == concept_holds(obj, concept))
    if not total or not concepts:
        return 0.0, {}
    per_concept = {concept: hits[concept] / total for concept in concepts}
    return sum(hits.values()) / (total * len(concepts)), per_concept


def evaluate(  # pylint: disable=too-many-arguments
    registry: ConceptRegistry,
    examples: Sequence[QAExample],
    scenes: Mapping[str, SceneRecord],
    mode: Mode = Mode.SOFT,
    settings: Optional[ExecutorSettings] = None,
    split: str = "eval",
    jobs: int = 1,
    concepts: Optional[Sequence[str]] = None,
) -> SplitMetrics:
    """
    Evaluate a registry on a split.

    :param registry: the trained registry.
    :param examples: the questions; may be empty.
    :param scenes: scenes by identifier.
    :param mode: soft scores, or ground-truth indicators.
    :param settings: the constants of the soft semantics.
    :param split: the split name.
    :param jobs: evaluation threads.
    :param concepts: concepts whose classification accuracy is reported; all by default.
    :return: question accuracy and concept classification accuracy on the split's scenes.
    """
    metrics = evaluate_model(ConceptModel(registry, settings, mode), examples, scenes, split, jobs)
    used = [scenes[scene_id] for scene_id in sorted({e.scene_id for e in examples})]
    if used:
        metrics.concept_accuracy, metrics.per_concept = concept_accuracy(registry, used, concepts)
    _default_logger.info(
        f"{split}: accuracy {metrics.accuracy:.4f} on {metrics.n} questions"
        + (f", concept accuracy {metrics.concept_accuracy:.4f}" if metrics.concept_accuracy is not None else "")
    )
    return metrics


# ---------------------------------------------------------------------------
# training


def split_validation(
    examples: Sequence[QAExample], fraction: float
) -> Tuple[List[QAExample], List[QAExample]]:
    """
    Hold out the last fraction of each stage's questions.

    :param examples: the training questions.
    :param fraction: the held-out fraction.
    :return: the questions to fit and the validation questions.
    """
    fit: List[QAExample] = []
    held: List[QAExample] = []
    for stage in sorted({e.stage for e in examples}):
        staged = [e for e in examples if e.stage == stage]
        n_held = int(round(len(staged) * fraction))
        if fraction > 0 and len(staged) >= 2:
            n_held = min(max(1, n_held), len(staged) - 1)
        fit.extend(staged[: len(staged) - n_held])
        held.extend(staged[len(staged) - n_held :])
    return fit, held


def subsample(examples: Sequence[QAExample], fraction: float, seed: int) -> List[QAExample]:
    """Keep a seeded fraction of each stage's questions, at least one per stage, in order."""
    enforce(0.0 < fraction <= 1.0, f"fraction must be in (0, 1], got {fraction}", ConfigError)
    kept = []
    for stage in sorted({e.stage for e in examples}):
        indices = [k for k, e in enumerate(examples) if e.stage == stage]
        n_kept = max(1, int(round(len(indices) * fraction)))
        order = np.random.default_rng(derive_seed(seed, "subsample", stage, fraction)).permutation(len(indices))
        kept.extend(indices[int(k)] for k in order[:n_kept])
    return [examples[k] for k in sorted(kept)]


def batch_loss(
    model: Model, batch: Sequence[QAExample], scenes: Mapping[str, SceneRecord], tape: Tape
) -> int:
    """Record the mean answer loss of a batch."""
    losses = [answer_loss(tape, model.answer(e, scenes[e.scene_id], tape), e.answer) for e in batch]
    total = tape.apply(Primitive.SUM, tape.apply(Primitive.CONCAT, *losses))
    return tape.apply(Primitive.SCALE, total, tape.scalar(1.0 / len(losses)))


def train_step(
    model: Model,
    optimizer: Optimizer,
    batch: Sequence[QAExample],
    scenes: Mapping[str, SceneRecord],
    batch_id: int,
) -> float:
    """
    Take one optimizer step on a batch.

    :param model: the model; its trainable parameters are updated in place.
    :param optimizer: the optimizer.
    :param batch: the questions.
    :param scenes: scenes by identifier.
    :param batch_id: running batch number, for diagnostics.
    :return: the batch loss before the step.
    """
    tape = Tape()
    try:
        root = batch_loss(model, batch, scenes, tape)
        gradients = backward(tape, root).by_name()
    except DomainError as e:
        raise NonFiniteLossError("non-finite value in the forward pass", batch_id, str(e)) from e
    for name, gradient in gradients.items():
        if not np.all(np.isfinite(gradient)):
            raise NonFiniteLossError("non-finite gradient", batch_id, name)
    optimizer.step(model.named_parameters(), gradients, model.trainable_names())
    return float(tape.value(root)[0])


def run_epoch(  # pylint: disable=too-many-arguments
    model: Model,
    optimizer: Optimizer,
    examples: Sequence[QAExample],
    scenes: Mapping[str, SceneRecord],
    config: TrainConfig,
    stage: int,
    epoch: int,
    batches: Iterator[int],
) -> float:
    """
    Run one shuffled pass over the questions.

    :param model: the model.
    :param optimizer: the optimizer.
    :param examples: the questions.
    :param scenes: scenes by identifier.
    :param config: the training config.
    :param stage: the curriculum stage, part of the shuffle seed.
    :param epoch: the epoch within the stage, part of the shuffle seed.
    :param batches: running batch counter.
    :return: the mean batch loss.
    """
    order = np.random.default_rng(derive_seed(config.seed, "shuffle", stage, epoch)).permutation(len(examples))
    losses = []
    for start in range(0, len(order), config.batch_size):
        batch = [examples[int(k)] for k in order[start : start + config.batch_size]]
        losses.append(train_step(model, optimizer, batch, scenes, next(batches)))
    return float(np.mean(losses)) if losses else 0.0


def _final_splits(  # pylint: disable=too-many-arguments
    metrics: Metrics,
    model: Model,
    held: Sequence[QAExample],
    dataset: Dataset,
    config: TrainConfig,
    registry: Optional[ConceptRegistry] = None,
) -> None:
    for split, examples in (("validation", held), ("test", dataset.test)):
        if split == "test" and not examples:
            continue
        if registry is not None:
            metrics.splits[split] = evaluate(
                registry, examples, dataset.scenes, settings=config.executor, split=split, jobs=config.jobs
            )
        else:
            metrics.splits[split] = evaluate_model(model, examples, dataset.scenes, split, config.jobs)


def train(
    config: TrainConfig, registry: ConceptRegistry, dataset: Dataset
) -> Tuple[ConceptRegistry, Metrics]:
    """
    Train concept embeddings and feature maps from question answering along the curriculum.

    Each epoch fits the active stages and then scores the current stage's validation
    questions; the curriculum moves on when they reach the threshold or the stage's
    epoch cap is hit.

    :param config: the training config.
    :param registry: the registry, trained in place.
    :param dataset: the staged questions with their scenes.
    :return: the registry and the metrics of the run.
    """
    enforce(bool(dataset.train), "the dataset has no training questions", ConfigError)
    started = time.perf_counter()
    model = ConceptModel(registry, config.executor)
    optimizer = make_optimizer(config)
    curriculum = Curriculum(config.advance_threshold, config.max_epochs_per_stage, config.replay_previous_stages)
    fit, held = split_validation(dataset.train, config.validation_fraction)
    metrics = Metrics(model.name)
    batches = itertools.count()
    while not curriculum.finished:
        stage = curriculum.stage_index
        if not any(e.stage == stage for e in fit):
            curriculum.skip()
            continue
        active = curriculum.active_stages()
        pool = [e for e in fit if e.stage in active]
        epoch = curriculum.epoch_in_stage
        loss = run_epoch(model, optimizer, pool, dataset.scenes, config, stage, epoch, batches)
        metrics.loss_curve.append(loss)
        validation = [e for e in held if e.stage == stage] or [e for e in fit if e.stage == stage]
        accuracy = evaluate_model(model, validation, dataset.scenes, "validation", config.jobs).accuracy
        _default_logger.info(
            f"stage {stage} epoch {epoch + 1}: loss {loss:.4f}, validation accuracy {accuracy:.4f}"
        )
        curriculum.observe(accuracy)
    metrics.history = list(curriculum.history)
    _final_splits(metrics, model, held, dataset, config, registry)
    metrics.wall_clock = time.perf_counter() - started
    return registry, metrics


def train_baseline(  # pylint: disable=too-many-arguments
    config: TrainConfig,
    dataset: Dataset,
    hidden: int = DEFAULT_HIDDEN,
    epochs: Optional[int] = None,
    palette: Sequence[str] = COLORS,
) -> Tuple[BaselineModel, Metrics]:
    """
    Train the monolithic baseline on all stages at once.

    :param config: the training config; the threshold stops training early.
    :param dataset: the questions with their scenes.
    :param hidden: width of the hidden layer.
    :param epochs: the epoch budget; three stages' worth of epoch caps by default.
    :param palette: colours in the answer vocabulary.
    :return: the model and the metrics of the run.
    """
    enforce(bool(dataset.train), "the dataset has no training questions", ConfigError)
    started = time.perf_counter()
    model = BaselineModel.for_examples(dataset.train, palette, hidden, seed=config.seed)
    optimizer = make_optimizer(config)
    fit, held = split_validation(dataset.train, config.validation_fraction)
    metrics = Metrics(model.name)
    budget = epochs if epochs is not None else 3 * config.max_epochs_per_stage
    batches = itertools.count()
    for epoch in range(budget):
        loss = run_epoch(model, optimizer, fit, dataset.scenes, config, 0, epoch, batches)
        metrics.loss_curve.append(loss)
        accuracy = evaluate_model(model, held or fit, dataset.scenes, "validation", config.jobs).accuracy
        reached = accuracy >= config.advance_threshold
        event = Event.THRESHOLD_REACHED if reached else Event.EPOCH_CAP if epoch + 1 == budget else Event.CONTINUE
        metrics.history.append(EpochRecord(0, epoch + 1, accuracy, event))
        _default_logger.info(f"baseline epoch {epoch + 1}: loss {loss:.4f}, validation accuracy {accuracy:.4f}")
        if reached:
            break
    _final_splits(metrics, model, held, dataset, config)
    metrics.wall_clock = time.perf_counter() - started
    return model, metrics


# ---------------------------------------------------------------------------
# few-shot concept learning


def fewshot_learn_concept(  # pylint: disable=too-many-arguments
    registry: ConceptRegistry,
    word: str,
    namespace: str,
    examples: Sequence[QAExample],
    scenes: Mapping[str, SceneRecord],
    steps: int = 150,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> Tuple[ConceptRegistry, Metrics]:
    """
    Learn a new object concept from a few questions that mention it.

    The input registry is not modified. In the returned copy only the new embedding is
    trainable; every pre-existing parameter keeps its exact bits.

    :param registry: the trained registry.
    :param word: the new, unbound word; it also names the concept.
    :param namespace: the attribute namespace of the new concept.
    :param examples: questions whose programs mention the word or whose answer is the word.
    :param scenes: scenes by identifier.
    :param steps: full-batch optimizer steps.
    :param learning_rate: Adam learning rate.
    :param seed: seed of the new embedding.
    :return: the extended registry and the metrics on the examples.
    """
    enforce(not registry.lexicon.is_bound(word), f"word '{word}' is already bound", FewShotError)
    enforce(word not in registry.concepts, f"concept '{word}' already exists", FewShotError)
    enforce(namespace in registry.namespaces, f"unknown attribute '{namespace}'", FewShotError)
    enforce(bool(examples), "few-shot learning needs at least one example", FewShotError)
    for example in examples:
        enforce(
            word in example.program.concepts() or example.answer == word,
            f"example '{example.question}' does not mention '{word}'",
            FewShotError,
        )
    started = time.perf_counter()
    learned = registry.copy()
    learned.register_concept(word, ConceptKind.OBJECT_ATTRIBUTE, namespace, seed=derive_seed(seed, "embedding", word))
    learned.lexicon.bind(word, word)
    learned.set_trainable(Selector.ONLY, True, word)
    model = ConceptModel(learned)
    optimizer = Adam(learning_rate)
    metrics = Metrics("fewshot")
    for step in range(steps):
        metrics.loss_curve.append(train_step(model, optimizer, examples, scenes, step))
    metrics.splits["fewshot"] = evaluate(learned, examples, scenes, split="fewshot", concepts=[word])
    metrics.wall_clock = time.perf_counter() - started
    _default_logger.info(
        f"learned '{word}' in {namespace} from {len(examples)} examples, final loss {metrics.loss_curve[-1]:.4f}"
        if metrics.loss_curve
        else f"registered '{word}' in {namespace} without training"
    )
    return learned, metrics


def fewshot_examples(  # pylint: disable=too-many-arguments
    seed: int,
    k: int,
    word: str = NOVEL_COLOR,
    attribute: str = "color",
    palette: Sequence[str] = COLORS,
    settings: Optional[GenerationSettings] = None,
) -> Tuple[Dict[str, SceneRecord], List[QAExample]]:
    """
    Generate questions mentioning a new attribute value, on small scenes showing it.

    :param seed: the episode seed.
    :param k: the number of questions.
    :param word: the new attribute value.
    :param attribute: its attribute.
    :param palette: colours of the scenes, including the new one when it is a colour.
    :param settings: feature mixing and noise.
    :return: the scenes by identifier and the questions.
    """
    settings = settings or GenerationSettings()
    scenes: Dict[str, SceneRecord] = {}
    examples: List[QAExample] = []
    for index in itertools.count():
        if len(examples) >= k:
            break
        enforce(index < 1000 * (k + 1), f"cannot generate {k} questions about '{word}'", GenerationError)
        scene_seed = derive_seed(seed, "fewshot", word, index)
        n_objects = int(np.random.default_rng(scene_seed).integers(1, 4))
        scene = gen_scene(
            scene_seed, n_objects, palette, settings.mixing_seed, settings.feature_noise,
            scene_id=f"fewshot-{word}-{index:05d}",
        )
        if not any(obj.attribute(attribute) == word for obj in scene.objects):
            continue
        try:
            example = gen_question(scene_seed, 1, scene, palette, mention=word)
        except GenerationError:
            continue
        scenes[scene.scene_id] = scene
        examples.append(example)
    return scenes, examples


def namespace_independent(program: Program, namespace: str, word: str) -> bool:
    """Whether adding `word` to `namespace` leaves a program's soft answer unchanged."""
    for _, node in program.walk():
        if isinstance(node, (Query, AttrEqual, RelateAttrEqual)) and node.attribute == namespace:
            return False
    return word not in program.concepts()


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class ExperimentConfig:  # pylint: disable=too-many-instance-attributes
    """Everything the experiment suites need."""

    generation: GenerationSettings = field(default_factory=GenerationSettings)
    training: TrainConfig = field(default_factory=TrainConfig)
    dim: int = 64
    gamma: float = 0.2
    tau: float = 0.25
    tau_query: float = 0.25
    baseline_hidden: int = DEFAULT_HIDDEN
    data_fractions: Tuple[float, ...] = (0.01, 0.1, 1.0)
    fewshot_examples: int = 5
    fewshot_steps: int = 150
    fewshot_learning_rate: float = 0.05
    delta: float = 0.1
    plan_depth_cap: int = 3
    action_goals: int = 100
    retrieval_pool: int = 10

    def build_registry(self) -> ConceptRegistry:
        """Build a fresh registry over the generation palette."""
        return build_registry(
            self.training.seed, self.dim, self.gamma, self.tau, self.tau_query, self.generation.palette
        )


def _report_row(model: str, split: str, fraction: float, accuracy: float, n: int) -> Dict[str, Any]:
    return {"model": model, "split": split, "fraction": fraction, "accuracy": accuracy, "n": n}


def _data_efficiency(config: ExperimentConfig, dataset: Dataset) -> List[Dict[str, Any]]:
    rows = []
    for fraction in config.data_fractions:
        subset = dataclasses.replace(dataset, train=subsample(dataset.train, fraction, config.training.seed))
        _, metrics = train(config.training, config.build_registry(), subset)
        _, baseline = train_baseline(
            config.training, subset, config.baseline_hidden, len(metrics.history), config.generation.palette
        )
        for result in (metrics, baseline):
            result.fraction = fraction
            test = result.splits["test"]
            rows.append(_report_row(result.model, "test", fraction, test.accuracy, test.n))
        _default_logger.info(
            f"data efficiency at {fraction:.0%}: concept {metrics.splits['test'].accuracy:.4f}, "
            f"baseline {baseline.splits['test'].accuracy:.4f}"
        )
    return rows


def compositional_splits(config: ExperimentConfig) -> Tuple[Dataset, List[QAExample]]:
    """
    Generate the compositional generalization data.

    :param config: the experiment config.
    :return: training and in-distribution test questions on scenes of at most four objects
        with programs of depth at most three, and the generalization questions of depth
        five on scenes of eight to ten objects; all scenes are in the dataset.
    """
    generation = config.generation
    simple = dataclasses.replace(
        generation,
        max_depth=min(generation.max_depth, 3),
        stage_scene_sizes={1: (1, 3), 2: (3, 4), 3: (3, 4)},
        n_captions=0,
    )
    dataset = gen_dataset(simple)
    complex_settings = dataclasses.replace(generation, max_depth=5)
    scenes, general = gen_questions(
        complex_settings,
        3,
        generation.test_questions,
        "general",
        sizes=(8, 10),
        min_depth=5,
        templates=tuple(TEMPLATES_BY_NAME),
    )
    dataset.add_scenes(scenes)
    return dataset, general


def _compositional(config: ExperimentConfig) -> List[Dict[str, Any]]:
    dataset, general = compositional_splits(config)
    registry, metrics = train(config.training, config.build_registry(), dataset)
    baseline, baseline_metrics = train_baseline(
        config.training, dataset, config.baseline_hidden, len(metrics.history), config.generation.palette
    )
    jobs = config.training.jobs
    splits = {
        "concept": (
            metrics.splits["test"],
            evaluate(
                registry,
                general,
                dataset.scenes,
                settings=config.training.executor,
                split="generalization",
                jobs=jobs,
            ),
        ),
        "baseline": (
            baseline_metrics.splits["test"],
            evaluate_model(baseline, general, dataset.scenes, "generalization", jobs),
        ),
    }
    rows = []
    for model, (in_distribution, generalization) in splits.items():
        rows.append(_report_row(model, "in_distribution", 1.0, in_distribution.accuracy, in_distribution.n))
        rows.append(_report_row(model, "generalization", 1.0, generalization.accuracy, generalization.n))
        _default_logger.info(
            f"{model}: in-distribution {in_distribution.accuracy:.4f}, generalization {generalization.accuracy:.4f}"
        )
    return rows


def _retrieval(config: ExperimentConfig, registry: ConceptRegistry) -> List[Dict[str, Any]]:
    scenes, captions = gen_captions(config.generation, config.generation.n_captions, prefix="retrieval")
    settings = config.training.executor

    def p_yes(program: Program, scene: SceneRecord) -> float:
        tape = Tape()
        result, _ = execute(program, scene, registry, tape, settings=settings)
        return result.probability(tape, YES)

    with ThreadPoolExecutor(max_workers=config.training.jobs) as pool:
        probabilities = list(pool.map(p_yes, [c.program for c in captions], scenes))
    correct = sum(int((p >= 0.5) == c.label) for p, c in zip(probabilities, captions))
    hits = 0
    queries = 0
    for k, caption in enumerate(captions):
        if not caption.label:
            continue
        pool_size = min(config.retrieval_pool, len(scenes))
        candidates = [scenes[(k + offset) % len(scenes)] for offset in range(pool_size)]
        scores = [p_yes(caption.program, scene) for scene in candidates]
        best = candidates[int(np.argmax(scores))]
        hits += int(oracle_execute(caption.program, best) == YES)
        queries += 1
    _default_logger.info(
        f"retrieval: caption accuracy {correct / max(1, len(captions)):.4f}, "
        f"ranking hit rate {hits / max(1, queries):.4f}"
    )
    return [
        _report_row("concept", "captions", 1.0, correct / len(captions) if captions else 0.0, len(captions)),
        _report_row("concept", "scene_ranking", 1.0, hits / queries if queries else 0.0, queries),
    ]


def _actions(config: ExperimentConfig, registry: ConceptRegistry) -> List[Dict[str, Any]]:
    generation = config.generation
    result = run_action_suite(
        registry,
        config.training.seed,
        config.action_goals,
        config.plan_depth_cap,
        config.delta,
        generation.palette,
        generation.mixing_seed,
        generation.feature_noise,
    )
    return [
        _report_row("concept", "plan_soundness", 1.0, result.soundness, result.planned),
        _report_row("concept", "goal_verification", 1.0, result.verification_rate, result.planned),
        _report_row(
            "concept", "applicability", 1.0, result.applicability_agreement, result.applicability_checks
        ),
    ]


def run_suite(
    kind: str,
    config: ExperimentConfig,
    dataset: Optional[Dataset] = None,
    registry: Optional[ConceptRegistry] = None,
) -> pd.DataFrame:
    """
    Run an experiment suite.

    :param kind: data_efficiency, compositional, retrieval or actions.
    :param config: the experiment config.
    :param dataset: questions to use instead of generating them, where the suite trains on a dataset.
    :param registry: a trained registry for retrieval and actions; trained on the dataset otherwise.
    :return: a report with one row per (model, split, fraction).
    """
    enforce(kind in SUITE_KINDS, f"unknown suite '{kind}', expected one of {SUITE_KINDS}", ConfigError)
    _default_logger.info(f"running suite {kind}")
    if kind == "compositional":
        rows = _compositional(config)
    else:
        if dataset is None and (kind == "data_efficiency" or registry is None):
            dataset = gen_dataset(config.generation)
        if kind == "data_efficiency":
            rows = _data_efficiency(config, dataset)  # type: ignore
        else:
            if registry is None:
                registry, _ = train(config.training, config.build_registry(), dataset)  # type: ignore
            rows = _retrieval(config, registry) if kind == "retrieval" else _actions(config, registry)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def fewshot_episode(
    config: ExperimentConfig,
    registry: ConceptRegistry,
    dataset: Optional[Dataset] = None,
    word: str = NOVEL_COLOR,
) -> Tuple[ConceptRegistry, Metrics]:
    """
    Learn a held-out colour from a few questions and check what changed.

    Besides the few-shot split, the metrics hold the new concept's classification of
    held-out objects and the accuracy before and after on the dataset's test questions:
    `old_*` covers the questions that do not depend on the colour namespace, whose
    answers must not change, and `all_*` covers every test question.

    :param config: the experiment config.
    :param registry: the trained registry; it is not modified.
    :param dataset: questions for the before/after comparison.
    :param word: the new colour.
    :return: the extended registry and the metrics.
    """
    seed = config.training.seed
    scenes, examples = fewshot_examples(seed, config.fewshot_examples, word, settings=config.generation)
    learned, metrics = fewshot_learn_concept(
        registry, word, "color", examples, scenes, config.fewshot_steps, config.fewshot_learning_rate, seed
    )
    held_out = [
        gen_scene(
            derive_seed(seed, "held-out", k), 6, COLORS,
            config.generation.mixing_seed, config.generation.feature_noise, scene_id=f"held-out-{k:05d}",
        )
        for k in range(50)
    ]
    accuracy, _ = concept_accuracy(learned, held_out, [word])
    n_objects = sum(scene.n_objects for scene in held_out)
    metrics.splits["held_out_objects"] = SplitMetrics(
        "held_out_objects", n=n_objects, correct=int(round(accuracy * n_objects)), concept_accuracy=accuracy
    )
    if dataset is not None:
        old = [e for e in dataset.test if namespace_independent(e.program, "color", word)]
        settings = config.training.executor
        metrics.splits["old_before"] = evaluate_model(
            ConceptModel(registry, settings), old, dataset.scenes, "old_before", config.training.jobs
        )
        metrics.splits["old_after"] = evaluate_model(
            ConceptModel(learned, settings), old, dataset.scenes, "old_after", config.training.jobs
        )
        metrics.splits["all_before"] = evaluate_model(
            ConceptModel(registry, settings), dataset.test, dataset.scenes, "all_before", config.training.jobs
        )
        metrics.splits["all_after"] = evaluate_model(
            ConceptModel(learned, settings), dataset.test, dataset.scenes, "all_after", config.training.jobs
        )
        _default_logger.info(
            f"accuracy change after learning {word}: {metrics.delta('old_before', 'old_after'):+.4f} on "
            f"{len(old)} colour-independent questions, {metrics.delta('all_before', 'all_after'):+.4f} on "
            f"all {len(dataset.test)}"
        )
    return learned, metrics
