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

"""Test the learning.py module of the concept learner."""

import dataclasses
from unittest import mock

import numpy as np
import pandas as pd  # type: ignore
import pytest

from packages.nscl.concept_learner import learning
from packages.nscl.concept_learner.autodiff import Tape
from packages.nscl.concept_learner.concepts import OBJECT_ENCODER, Selector
from packages.nscl.concept_learner.dsl import parse_program
from packages.nscl.concept_learner.exceptions import ConfigError, FewShotError, NonFiniteLossError
from packages.nscl.concept_learner.executor import Mode
from packages.nscl.concept_learner.learning import (
    METRIC_COLUMNS,
    REPORT_COLUMNS,
    SGD,
    Adam,
    ConceptModel,
    ExperimentConfig,
    Metrics,
    OptimizerKind,
    SplitMetrics,
    TrainConfig,
    batch_loss,
    concept_accuracy,
    evaluate,
    fewshot_examples,
    fewshot_learn_concept,
    make_optimizer,
    namespace_independent,
    run_suite,
    split_validation,
    subsample,
    train,
    train_baseline,
    train_step,
    write_metrics,
)
from packages.nscl.concept_learner.tests.helpers import skip_slow_tests
from packages.nscl.concept_learner.worldgen import (
    NO,
    NOVEL_COLOR,
    YES,
    Dataset,
    GenerationSettings,
    build_registry,
    gen_dataset,
    gen_question,
    gen_scene,
)


SMALL = GenerationSettings(n_questions=24, test_questions=9, n_captions=6, questions_per_scene=2)
DATASET = gen_dataset(SMALL)
FAST = TrainConfig(max_epochs_per_stage=2, batch_size=8, seed=3)


def fresh_registry(seed: int = 0):  # type: ignore
    """Build a small untrained registry."""
    return build_registry(seed=seed, dim=8)


def boolean_example(seed: int):  # type: ignore
    """Draw a stage 1 yes/no question with its scene."""
    for offset in range(100):
        scene = gen_scene(seed * 1000 + offset, 3, scene_id=f"s-{seed}-{offset}")
        example = gen_question(seed * 1000 + offset, 1, scene)
        if example.answer in (YES, NO):
            return example, scene
    raise AssertionError("no yes/no question drawn")


class TestTrainConfig:
    """Test `TrainConfig`."""

    def test_defaults(self) -> None:
        """Defaults follow the documented configuration."""
        config = TrainConfig()
        assert (config.learning_rate, config.batch_size, config.max_epochs_per_stage) == (0.01, 32, 50)
        assert config.advance_threshold == 0.9
        assert config.optimizer == OptimizerKind.ADAM
        assert config.replay_previous_stages

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"learning_rate": 0.0},
            {"batch_size": 0},
            {"max_epochs_per_stage": 0},
            {"advance_threshold": 1.2},
            {"adam_beta1": 1.0},
            {"validation_fraction": 1.0},
            {"jobs": 0},
        ],
    )
    def test_rejects(self, kwargs: dict) -> None:
        """Out-of-range knobs raise ConfigError."""
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestOptimizers:
    """Test the optimizers."""

    def test_sgd(self) -> None:
        """SGD moves against the gradient and skips frozen parameters."""
        parameters = {"w": np.array([1.0, -2.0]), "v": np.array([3.0])}
        frozen = parameters["v"].tobytes()
        SGD(0.5).step(parameters, {"w": np.array([2.0, -4.0]), "v": np.array([1.0])}, ["w"])
        assert parameters["w"].tolist() == [0.0, 0.0]
        assert parameters["v"].tobytes() == frozen

    def test_adam_first_step(self) -> None:
        """The first Adam step has the size of the learning rate."""
        parameters = {"w": np.array([1.0, -2.0, 0.5])}
        Adam(0.01).step(parameters, {"w": np.array([10.0, -0.1, 3.0])}, ["w"])
        assert parameters["w"] == pytest.approx([0.99, -1.99, 0.49])

    def test_adam_ignores_missing_gradients(self) -> None:
        """Parameters without a gradient keep their value."""
        parameters = {"w": np.array([1.0])}
        Adam(0.01).step(parameters, {}, ["w"])
        assert parameters["w"].tolist() == [1.0]

    def test_make_optimizer(self) -> None:
        """The config picks the optimizer."""
        assert isinstance(make_optimizer(TrainConfig()), Adam)
        sgd = make_optimizer(TrainConfig(optimizer=OptimizerKind.SGD), learning_rate=0.5)
        assert isinstance(sgd, SGD) and sgd.learning_rate == 0.5

    @pytest.mark.parametrize("seed", range(20))
    def test_step_descends(self, seed: int) -> None:
        """A small gradient step lowers the loss of the batch."""
        model = ConceptModel(fresh_registry(seed))
        example, scene = boolean_example(seed)
        scenes = {scene.scene_id: scene}
        before = train_step(model, SGD(1e-3), [example], scenes, 0)
        tape = Tape()
        after = float(tape.value(batch_loss(model, [example], scenes, tape))[0])
        assert after < before


class TestTrainStep:
    """Test `train_step`."""

    def test_frozen_bits(self) -> None:
        """Only the trainable embedding changes."""
        registry = fresh_registry()
        registry.set_trainable(Selector.ONLY, True, "red")
        before = registry.snapshot()
        model = ConceptModel(registry)
        train_step(model, Adam(0.05), DATASET.train[:8], DATASET.scenes, 0)
        after = registry.snapshot()
        red = registry.entry("red").parameter_name
        assert {name for name in before if before[name] != after[name]} <= {red}

    def test_non_finite(self) -> None:
        """A diverged parameter raises NonFiniteLossError naming the batch."""
        registry = fresh_registry()
        registry.named_parameters()[OBJECT_ENCODER][...] = np.nan
        with pytest.raises(NonFiniteLossError) as info:
            train_step(ConceptModel(registry), Adam(0.01), DATASET.train[:2], DATASET.scenes, 7)
        assert info.value.batch_id == 7


class TestSplits:
    """Test validation splits and subsampling."""

    def test_split_validation(self) -> None:
        """The last tenth of each stage is held out, at least one question."""
        fit, held = split_validation(DATASET.train, 0.1)
        assert len(fit) + len(held) == len(DATASET.train)
        assert sorted(e.stage for e in held) == [1, 2, 3]
        for stage in (1, 2, 3):
            assert DATASET.stage(stage)[-1] in held

    def test_split_without_validation(self) -> None:
        """A zero fraction holds nothing out."""
        fit, held = split_validation(DATASET.train, 0.0)
        assert fit == DATASET.train and held == []

    def test_single_question_stage(self) -> None:
        """A stage with one question keeps it for fitting."""
        fit, held = split_validation(DATASET.stage(1)[:1], 0.5)
        assert len(fit) == 1 and held == []

    def test_subsample(self) -> None:
        """Subsampling is seeded, keeps order and keeps every stage."""
        first = subsample(DATASET.train, 0.1, seed=4)
        assert first == subsample(DATASET.train, 0.1, seed=4)
        assert sorted({e.stage for e in first}) == [1, 2, 3]
        positions = [DATASET.train.index(e) for e in first]
        assert positions == sorted(positions)
        assert subsample(DATASET.train, 1.0, seed=4) == DATASET.train

    def test_subsample_fraction(self) -> None:
        """Fractions outside (0, 1] are rejected."""
        with pytest.raises(ConfigError):
            subsample(DATASET.train, 0.0, seed=0)


class TestEvaluate:
    """Test evaluation."""

    def test_hard_mode_is_exact(self) -> None:
        """With ground-truth indicators every generated question is answered correctly."""
        metrics = evaluate(fresh_registry(), DATASET.train + DATASET.test, DATASET.scenes, Mode.HARD)
        assert metrics.accuracy == 1.0
        assert metrics.n == len(DATASET.train) + len(DATASET.test)
        assert sum(n for _, n in metrics.by_type.values()) == metrics.n

    def test_empty_split(self) -> None:
        """An empty split scores zero without failing."""
        metrics = evaluate(fresh_registry(), [], DATASET.scenes)
        assert metrics.n == 0
        assert metrics.accuracy == 0.0
        assert metrics.concept_accuracy is None

    def test_jobs_do_not_matter(self) -> None:
        """Threaded evaluation gives the same numbers."""
        registry = fresh_registry()
        first = evaluate(registry, DATASET.test, DATASET.scenes, jobs=1)
        second = evaluate(registry, DATASET.test, DATASET.scenes, jobs=4)
        assert first == second

    def test_concept_accuracy(self) -> None:
        """Concept accuracy covers the requested concepts."""
        scenes = [gen_scene(seed, 4) for seed in range(3)]
        overall, per_concept = concept_accuracy(fresh_registry(), scenes, ["red", "cube"])
        assert set(per_concept) == {"red", "cube"}
        assert 0.0 <= overall <= 1.0
        assert overall == pytest.approx(sum(per_concept.values()) / 2)


class TestMetrics:
    """Test the metrics table."""

    def test_frame(self, tmp_path) -> None:  # type: ignore
        """Overall rows come before per-type rows and the CSV is stable."""
        metrics = Metrics("concept", fraction=0.5)
        metrics.splits["test"] = SplitMetrics("test", n=4, correct=3, by_type={"count": (1, 2), "exist": (2, 2)})
        frame = metrics.to_frame()
        assert list(frame.columns) == METRIC_COLUMNS
        assert frame["question_type"].tolist() == ["all", "count", "exist"]
        assert frame["accuracy"].tolist() == [0.75, 0.5, 1.0]
        assert len(metrics.to_frame(by_type=False)) == 1
        write_metrics(frame, tmp_path / "a.csv")
        write_metrics(metrics.to_frame(), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert pd.read_csv(tmp_path / "a.csv")["n"].tolist() == [4, 2, 2]


class TestTrain:
    """Test `train` and `train_baseline`."""

    def test_train(self) -> None:
        """Training walks the curriculum and reports validation and test accuracy."""
        registry, metrics = train(FAST, fresh_registry(), DATASET)
        assert metrics.model == "concept"
        assert set(metrics.splits) == {"validation", "test"}
        assert metrics.splits["test"].n == len(DATASET.test)
        assert [r.stage for r in metrics.history] == sorted(r.stage for r in metrics.history)
        assert {r.stage for r in metrics.history} == {1, 2, 3}
        assert len(metrics.loss_curve) == len(metrics.history)
        assert all(np.isfinite(metrics.loss_curve))
        assert "red" in registry.concepts

    def test_deterministic(self) -> None:
        """The same seed gives bit-identical parameters and metrics."""
        first, first_metrics = train(FAST, fresh_registry(), DATASET)
        second, second_metrics = train(FAST, fresh_registry(), DATASET)
        assert first.snapshot() == second.snapshot()
        assert first_metrics.loss_curve == second_metrics.loss_curve
        assert first_metrics.to_frame().equals(second_metrics.to_frame())

    def test_training_changes_parameters(self) -> None:
        """Parameters move during training."""
        registry = fresh_registry()
        before = registry.snapshot()
        train(FAST, registry, DATASET)
        assert registry.snapshot() != before

    def test_active_stages(self) -> None:
        """Without replay each epoch only sees its own stage."""
        config = dataclasses.replace(FAST, replay_previous_stages=False, max_epochs_per_stage=1)
        with mock.patch.object(learning, "run_epoch", wraps=learning.run_epoch) as spy:
            train(config, fresh_registry(), DATASET)
        assert spy.call_count == 3
        for call in spy.call_args_list:
            pool, stage = call.args[2], call.args[5]
            assert {e.stage for e in pool} == {stage}

    def test_replay(self) -> None:
        """With replay an epoch sees every stage up to the current one."""
        config = dataclasses.replace(FAST, max_epochs_per_stage=1)
        with mock.patch.object(learning, "run_epoch", wraps=learning.run_epoch) as spy:
            train(config, fresh_registry(), DATASET)
        assert [{e.stage for e in call.args[2]} for call in spy.call_args_list] == [{1}, {1, 2}, {1, 2, 3}]

    def test_stage_without_data(self) -> None:
        """A stage with no questions is skipped."""
        dataset = dataclasses.replace(DATASET, train=[e for e in DATASET.train if e.stage != 2])
        config = dataclasses.replace(FAST, max_epochs_per_stage=1)
        with mock.patch.object(learning, "run_epoch", wraps=learning.run_epoch) as spy:
            _, metrics = train(config, fresh_registry(), dataset)
        assert [call.args[5] for call in spy.call_args_list] == [1, 3]
        assert [r.stage for r in metrics.history] == [1, 3]

    def test_no_training_data(self) -> None:
        """An empty training split is a configuration error."""
        with pytest.raises(ConfigError):
            train(FAST, fresh_registry(), Dataset(scenes=DATASET.scenes, test=DATASET.test))

    def test_train_baseline(self) -> None:
        """The baseline trains within its budget and is scored on the same splits."""
        model, metrics = train_baseline(FAST, DATASET, hidden=8, epochs=2)
        assert model.name == metrics.model == "baseline"
        assert 1 <= len(metrics.history) <= 2
        assert set(metrics.splits) == {"validation", "test"}
        assert 0.0 <= metrics.splits["test"].accuracy <= 1.0


class TestFewShot:
    """Test few-shot concept learning."""

    def test_examples(self) -> None:
        """Every question mentions the new colour on a scene that shows it."""
        scenes, examples = fewshot_examples(0, 5)
        assert len(examples) == 5
        for example in examples:
            assert NOVEL_COLOR in example.program.concepts() or example.answer == NOVEL_COLOR
            assert any(obj.color == NOVEL_COLOR for obj in scenes[example.scene_id].objects)

    def test_learn(self) -> None:
        """Only the new embedding is learned; old parameters and answers are untouched."""
        registry = fresh_registry()
        before = registry.snapshot()
        scenes, examples = fewshot_examples(0, 5)
        learned, metrics = fewshot_learn_concept(registry, NOVEL_COLOR, "color", examples, scenes, steps=5)
        assert registry.snapshot() == before
        assert NOVEL_COLOR not in registry.concepts
        assert not registry.lexicon.is_bound(NOVEL_COLOR)
        after = learned.snapshot()
        for name, value in before.items():
            assert after[name] == value
        assert learned.lexicon.resolve(NOVEL_COLOR) == NOVEL_COLOR
        assert len(metrics.loss_curve) == 5
        assert set(metrics.splits["fewshot"].per_concept) == {NOVEL_COLOR}
        old = [e for e in DATASET.test if namespace_independent(e.program, "color", NOVEL_COLOR)]
        assert old
        for example in old:
            first, second = Tape(), Tape()
            scene = DATASET.scenes[example.scene_id]
            assert ConceptModel(registry).answer(example, scene, first).probabilities(first) == ConceptModel(
                learned
            ).answer(example, scene, second).probabilities(second)

    def test_episode_reports_both_comparisons(self) -> None:
        """Accuracy is compared on the colour-independent questions and on all of them."""
        config = ExperimentConfig(generation=SMALL, fewshot_examples=2, fewshot_steps=3)
        _, metrics = learning.fewshot_episode(config, fresh_registry(), DATASET)
        assert metrics.splits["all_before"].n == metrics.splits["all_after"].n == len(DATASET.test)
        assert metrics.splits["old_before"].n <= len(DATASET.test)
        assert metrics.delta("old_before", "old_after") == 0.0
        assert -1.0 <= metrics.delta("all_before", "all_after") <= 1.0

    def test_errors(self) -> None:
        """Bound words, unknown attributes and empty or unrelated examples are rejected."""
        registry = fresh_registry()
        scenes, examples = fewshot_examples(0, 2)
        with pytest.raises(FewShotError, match="already bound"):
            fewshot_learn_concept(registry, "red", "color", examples, scenes)
        with pytest.raises(FewShotError, match="unknown attribute"):
            fewshot_learn_concept(registry, NOVEL_COLOR, "texture", examples, scenes)
        with pytest.raises(FewShotError, match="at least one"):
            fewshot_learn_concept(registry, NOVEL_COLOR, "color", [], scenes)
        with pytest.raises(FewShotError, match="does not mention"):
            fewshot_learn_concept(registry, NOVEL_COLOR, "color", DATASET.test[:1], DATASET.scenes)

    def test_namespace_independent(self) -> None:
        """Programs reading the namespace, or using the word, depend on it."""
        assert namespace_independent(parse_program("(count (filter scene red))"), "color", "teal")
        assert not namespace_independent(parse_program("(query color (unique (filter scene cube)))"), "color", "teal")
        assert namespace_independent(parse_program("(query shape (unique (filter scene red)))"), "color", "teal")
        assert not namespace_independent(parse_program("(exist (filter scene teal))"), "color", "teal")


class TestSuites:
    """Test the experiment suites at small sizes."""

    CONFIG = ExperimentConfig(
        generation=SMALL,
        training=dataclasses.replace(FAST, max_epochs_per_stage=1),
        dim=8,
        baseline_hidden=8,
        data_fractions=(0.5, 1.0),
        action_goals=4,
        retrieval_pool=3,
    )

    def test_unknown(self) -> None:
        """Unknown suites are rejected."""
        with pytest.raises(ConfigError, match="unknown suite"):
            run_suite("physics", self.CONFIG)

    def test_data_efficiency(self) -> None:
        """Both models are scored on the test split at every fraction."""
        report = run_suite("data_efficiency", self.CONFIG, dataset=DATASET)
        assert list(report.columns) == REPORT_COLUMNS
        assert report[["model", "fraction"]].values.tolist() == [
            ["concept", 0.5],
            ["baseline", 0.5],
            ["concept", 1.0],
            ["baseline", 1.0],
        ]
        assert set(report["n"]) == {len(DATASET.test)}

    def test_compositional(self) -> None:
        """In-distribution and generalization rows for both models."""
        report = run_suite("compositional", self.CONFIG)
        assert report[["model", "split"]].values.tolist() == [
            ["concept", "in_distribution"],
            ["concept", "generalization"],
            ["baseline", "in_distribution"],
            ["baseline", "generalization"],
        ]
        assert report["accuracy"].between(0.0, 1.0).all()

    def test_compositional_splits(self) -> None:
        """Training scenes are small and generalization programs deep on large scenes."""
        dataset, general = learning.compositional_splits(self.CONFIG)
        assert all(dataset.scenes[e.scene_id].n_objects <= 4 for e in dataset.train)
        assert all(e.program.depth <= 3 for e in dataset.train)
        assert all(e.program.depth >= 5 for e in general)
        assert all(8 <= dataset.scenes[e.scene_id].n_objects <= 10 for e in general)

    def test_retrieval(self) -> None:
        """Caption classification and scene ranking with a given registry."""
        report = run_suite("retrieval", self.CONFIG, registry=fresh_registry())
        assert report["split"].tolist() == ["captions", "scene_ranking"]
        assert report["n"].tolist()[0] == SMALL.n_captions

    def test_actions(self) -> None:
        """Returned plans are always sound."""
        report = run_suite("actions", self.CONFIG, registry=fresh_registry())
        rows = dict(zip(report["split"], report["accuracy"]))
        assert rows["plan_soundness"] == 1.0
        assert 0.0 <= rows["applicability"] <= 1.0
        assert set(rows) == {"plan_soundness", "goal_verification", "applicability"}


@skip_slow_tests
class TestAcceptance:
    """Full-size runs."""

    def test_learnability(self) -> None:
        """5,000 questions teach the concepts."""
        config = ExperimentConfig()
        dataset = gen_dataset(config.generation)
        registry, metrics = train(config.training, config.build_registry(), dataset)
        assert metrics.splits["test"].accuracy >= 0.95
        assert metrics.splits["test"].concept_accuracy >= 0.98
        learned, fewshot = learning.fewshot_episode(config, registry, dataset)
        assert fewshot.splits["held_out_objects"].concept_accuracy >= 0.9
        assert fewshot.splits["old_before"].accuracy == fewshot.splits["old_after"].accuracy
        assert NOVEL_COLOR in learned.concepts
