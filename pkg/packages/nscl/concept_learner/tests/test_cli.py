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

"""Test the cli.py module of the concept learner."""

import json
from pathlib import Path

import pandas as pd  # type: ignore
import pytest

from packages.nscl.concept_learner import PUBLIC_ID
from packages.nscl.concept_learner.cli import (
    BASELINE_FILE,
    CHECKPOINT_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    PLAN_FILE,
    dispatch,
)
from packages.nscl.concept_learner.concepts import from_checkpoint
from packages.nscl.concept_learner.tests.helpers import make_object, make_scene
from packages.nscl.concept_learner.worldgen import (
    QA_FILE,
    SCENES_FILE,
    Dataset,
    content_hashes,
    scene_to_json,
)


CONFIG = {
    "n_questions": 12,
    "test_questions": 6,
    "n_captions": 4,
    "questions_per_scene": 2,
    "max_epochs_per_stage": 1,
    "batch_size": 8,
    "dim": 8,
    "baseline_hidden": 8,
    "action_goals": 2,
}


@pytest.fixture(scope="module")
def config(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Write a small configuration."""
    path = tmp_path_factory.mktemp("config") / "config.json"
    path.write_text(json.dumps(CONFIG))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory: pytest.TempPathFactory, config: Path) -> Path:
    """Generate a small dataset."""
    out = tmp_path_factory.mktemp("data")
    assert dispatch(["gen", "--config", str(config), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory: pytest.TempPathFactory, config: Path, dataset: Path) -> Path:
    """Train a concept model briefly."""
    out = tmp_path_factory.mktemp("run")
    assert dispatch(["train", "--config", str(config), "--dataset", str(dataset), "--out", str(out)]) == 0
    return out / CHECKPOINT_FILE


def read_manifest(directory: Path) -> dict:
    """Read a run manifest."""
    return json.loads((directory / MANIFEST_FILE).read_text())


def two_objects(tmp_path: Path) -> Path:
    """Write a scene with a red cube right of a blue sphere."""
    scene = make_scene([make_object("red", "cube", x=0.8), make_object("blue", "sphere", x=0.2)])
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(scene_to_json(scene)))
    return path


class TestGen:
    """Test `nscl gen`."""

    def test_outputs(self, dataset: Path, config: Path) -> None:
        """The dataset files and a manifest with their hashes are written."""
        manifest = read_manifest(dataset)
        assert manifest["dataset_hashes"] == content_hashes(dataset)
        assert manifest["tool_version"] == str(PUBLIC_ID)
        assert manifest["config"]["n_questions"] == 12
        assert manifest["seeds"] == {"seed": 0, "mixing_seed": 1234}
        assert manifest["command"][:3] == ["gen", "--config", str(config)]
        loaded = Dataset.load(dataset)
        assert (len(loaded.train), len(loaded.test), len(loaded.captions)) == (12, 6, 4)

    def test_reproducible(self, tmp_path: Path, dataset: Path, config: Path) -> None:
        """The same seed gives byte-identical files; another seed does not."""
        assert dispatch(["gen", "--config", str(config), "--out", str(tmp_path / "same")]) == 0
        assert content_hashes(tmp_path / "same") == content_hashes(dataset)
        assert dispatch(["gen", "--config", str(config), "--seed", "1", "--out", str(tmp_path / "other")]) == 0
        assert content_hashes(tmp_path / "other") != content_hashes(dataset)
        assert read_manifest(tmp_path / "other")["seeds"]["seed"] == 1


class TestTrainEval:
    """Test `nscl train` and `nscl eval`."""

    def test_train(self, checkpoint: Path, dataset: Path) -> None:
        """Training writes a checkpoint, metrics and a manifest naming the dataset."""
        run = checkpoint.parent
        manifest = read_manifest(run)
        assert manifest["dataset_hashes"] == content_hashes(dataset)
        assert set(manifest["outputs"]) == {CHECKPOINT_FILE, METRICS_FILE}
        assert manifest["details"]["runs"][0]["model"] == "concept"
        frame = pd.read_csv(run / METRICS_FILE)
        assert set(frame["split"]) == {"validation", "test"}
        assert "red" in from_checkpoint(checkpoint).concepts

    def test_train_baseline(self, tmp_path: Path, config: Path, dataset: Path) -> None:
        """The baseline is saved under its own file name."""
        args = ["train", "--config", str(config), "--dataset", str(dataset), "--out", str(tmp_path), "--model", "baseline"]
        assert dispatch(args) == 0
        assert (tmp_path / BASELINE_FILE).exists()
        assert not (tmp_path / CHECKPOINT_FILE).exists()
        assert pd.read_csv(tmp_path / METRICS_FILE)["model"].iloc[0] == "baseline"

    def test_eval_hard(self, tmp_path: Path, checkpoint: Path, dataset: Path) -> None:
        """Ground-truth execution answers every test question."""
        args = ["eval", "--dataset", str(dataset), "--checkpoint", str(checkpoint), "--out", str(tmp_path), "--hard"]
        assert dispatch(args) == 0
        frame = pd.read_csv(tmp_path / METRICS_FILE)
        overall = frame[frame["question_type"] == "all"].iloc[0]
        assert (overall["split"], overall["accuracy"], overall["n"]) == ("test", 1.0, 6)

    def test_eval_baseline_needs_checkpoint(self, tmp_path: Path, dataset: Path) -> None:
        """Evaluating the baseline without a file is a usage error."""
        assert dispatch(["eval", "--dataset", str(dataset), "--out", str(tmp_path), "--model", "baseline"]) == 1

    def test_missing_dataset(self, tmp_path: Path) -> None:
        """A missing dataset directory is a usage error."""
        assert dispatch(["train", "--dataset", str(tmp_path / "absent"), "--out", str(tmp_path)]) == 1

    def test_dataset_without_scenes(self, tmp_path: Path, dataset: Path) -> None:
        """A dataset directory missing its scenes file is a runtime error."""
        partial = tmp_path / "partial"
        partial.mkdir()
        (partial / QA_FILE).write_bytes((dataset / QA_FILE).read_bytes())
        assert dispatch(["train", "--dataset", str(partial), "--out", str(tmp_path / "run")]) == 2

    def test_corrupt_dataset_line(self, tmp_path: Path, dataset: Path) -> None:
        """A line that is not JSON is a runtime error."""
        corrupt = tmp_path / "corrupt"
        corrupt.mkdir()
        (corrupt / SCENES_FILE).write_text((dataset / SCENES_FILE).read_text() + "{not json\n")
        (corrupt / QA_FILE).write_bytes((dataset / QA_FILE).read_bytes())
        assert dispatch(["train", "--dataset", str(corrupt), "--out", str(tmp_path / "run")]) == 2


class TestQueryPlan:
    """Test `nscl query` and `nscl plan`."""

    def test_query_program(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """A DSL program is answered and traced."""
        args = [
            "query", "--scene", str(two_objects(tmp_path)), "--question", "(count (filter scene red))", "--hard",
            "--trace", "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 0
        out = capsys.readouterr().out
        assert "answer: 1 p=1.000" in out
        assert "filter" in out

    def test_query_question(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """A templated question is parsed and the manifest records the answer."""
        args = [
            "query", "--scene", str(two_objects(tmp_path)), "--question", "What is the color of the cube?",
            "--hard", "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 0
        assert "answer: red" in capsys.readouterr().out
        details = read_manifest(tmp_path / "run")["details"]
        assert details["answer"] == "red"

    def test_query_reference(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """A referring expression resolves to an object index."""
        args = [
            "query", "--scene", str(two_objects(tmp_path)), "--question", "the blue sphere", "--hard",
            "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 0
        assert "object 1" in capsys.readouterr().out

    def test_query_scene_from_dataset(self, tmp_path: Path, dataset: Path, capsys: pytest.CaptureFixture) -> None:
        """A scene is picked out of a scenes file by identifier."""
        example = Dataset.load(dataset).test[0]
        args = [
            "query", "--scene", str(dataset / SCENES_FILE), "--scene-id", example.scene_id,
            "--question", str(example.program), "--hard", "--out", str(tmp_path),
        ]
        assert dispatch(args) == 0
        assert f"answer: {example.answer} " in capsys.readouterr().out

    def test_query_unknown_scene(self, tmp_path: Path, dataset: Path) -> None:
        """An unknown scene identifier is a runtime error."""
        args = [
            "query", "--scene", str(dataset / SCENES_FILE), "--scene-id", "nowhere", "--question", "(count scene)",
            "--out", str(tmp_path),
        ]
        assert dispatch(args) == 2

    def test_query_unparseable(self, tmp_path: Path) -> None:
        """A question no template matches is a runtime error."""
        args = [
            "query", "--scene", str(two_objects(tmp_path)), "--question", "Why is the sky blue?",
            "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 2

    @pytest.mark.parametrize(
        "record",
        [
            {"schema_version": 1},
            {"schema_version": 1, "scene_id": "s", "seed": 0, "mixing_seed": 1, "noise": 0.0, "objects": [{"hue": 3}]},
            {"schema_version": 1, "scene_id": "s", "seed": "zero", "mixing_seed": 1, "noise": 0.0, "objects": []},
            [1, 2],
        ],
    )
    def test_malformed_scene(self, tmp_path: Path, record: object) -> None:
        """A scene that does not decode is a runtime error."""
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(record))
        args = ["query", "--scene", str(path), "--question", "(count scene)", "--out", str(tmp_path / "run")]
        assert dispatch(args) == 2

    def test_query_needs_out(self, tmp_path: Path) -> None:
        """Every run writes a manifest, so an output directory is required."""
        assert dispatch(["query", "--scene", str(two_objects(tmp_path)), "--question", "(count scene)"]) == 1
        assert dispatch(["plan", "--state", str(two_objects(tmp_path)), "--goal", "left(a,b)"]) == 1

    def test_query_manifest(self, tmp_path: Path) -> None:
        """A query run records its program in the manifest."""
        out = tmp_path / "run"
        args = [
            "query", "--scene", str(two_objects(tmp_path)), "--question", "(count scene)", "--hard", "--out", str(out),
        ]
        assert dispatch(args) == 0
        details = read_manifest(out)["details"]
        assert (details["program"], details["answer"]) == ("(count scene)", "2")

    def test_plan(self, tmp_path: Path, capsys: pytest.CaptureFixture, checkpoint: Path) -> None:
        """A plan is printed, verified and written."""
        out = tmp_path / "run"
        args = [
            "plan", "--state", str(two_objects(tmp_path)), "--goal", "left(a,b)",
            "--checkpoint", str(checkpoint), "--out", str(out),
        ]
        assert dispatch(args) == 0
        assert capsys.readouterr().out.splitlines()[:2] == ["pick(a)", "put-left-of(a,b)"]
        written = (out / PLAN_FILE).read_text().splitlines()
        assert written[:2] == ["pick(a)", "put-left-of(a,b)"]
        assert written[2].startswith("verified p=")
        assert 0.0 <= read_manifest(out)["details"]["verification"] <= 1.0

    def test_plan_depth_cap(self, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
        """A goal out of reach reports that no plan exists."""
        args = [
            "plan", "--state", str(two_objects(tmp_path)), "--goal", "left(a,b)", "--depth-cap", "1",
            "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 0
        assert "no plan of at most 1 steps" in capsys.readouterr().out

    def test_bad_goal(self, tmp_path: Path) -> None:
        """A malformed goal is a runtime error."""
        args = ["plan", "--state", str(two_objects(tmp_path)), "--goal", "left(a)", "--out", str(tmp_path / "run")]
        assert dispatch(args) == 2


class TestSuiteExport:
    """Test `nscl suite`, `nscl fewshot` and `nscl export`."""

    def test_actions_suite(self, tmp_path: Path, config: Path, checkpoint: Path) -> None:
        """The action suite reports its three rows."""
        args = ["suite", "actions", "--config", str(config), "--checkpoint", str(checkpoint), "--out", str(tmp_path)]
        assert dispatch(args) == 0
        frame = pd.read_csv(tmp_path / METRICS_FILE)
        assert frame["split"].tolist() == ["plan_soundness", "goal_verification", "applicability"]

    def test_unknown_suite(self, tmp_path: Path) -> None:
        """Unknown suites are usage errors."""
        assert dispatch(["suite", "physics", "--out", str(tmp_path)]) == 1

    def test_fewshot(self, tmp_path: Path, config: Path, checkpoint: Path, dataset: Path) -> None:
        """The extended checkpoint knows the new colour."""
        (tmp_path / "config.json").write_text(json.dumps(dict(CONFIG, fewshot_steps=3, fewshot_examples=2)))
        args = [
            "fewshot", "--config", str(tmp_path / "config.json"), "--checkpoint", str(checkpoint),
            "--dataset", str(dataset), "--out", str(tmp_path / "run"),
        ]
        assert dispatch(args) == 0
        learned = from_checkpoint(tmp_path / "run" / CHECKPOINT_FILE)
        assert "teal" in learned.concepts
        assert "teal" not in from_checkpoint(checkpoint).concepts
        splits = set(pd.read_csv(tmp_path / "run" / METRICS_FILE)["split"])
        assert splits == {"fewshot", "held_out_objects", "old_before", "old_after", "all_before", "all_after"}
        delta = read_manifest(tmp_path / "run")["details"]["accuracy_delta"]
        assert delta["colour_independent"] == 0.0
        assert -1.0 <= delta["all"] <= 1.0

    def test_fewshot_bound_word(self, tmp_path: Path, checkpoint: Path) -> None:
        """Learning a word the lexicon already knows is a runtime error."""
        args = ["fewshot", "--checkpoint", str(checkpoint), "--word", "red", "--out", str(tmp_path)]
        assert dispatch(args) == 2

    @pytest.mark.parametrize("fmt", ["json", "csv"])
    def test_export(self, tmp_path: Path, checkpoint: Path, fmt: str) -> None:
        """Metrics are exported with the source manifest attached."""
        assert dispatch(["export", "--run", str(checkpoint.parent), "--out", str(tmp_path), "--format", fmt]) == 0
        source = pd.read_csv(checkpoint.parent / METRICS_FILE)
        if fmt == "json":
            records = json.loads((tmp_path / "metrics.json").read_text())
            assert len(records) == len(source)
        else:
            assert pd.read_csv(tmp_path / METRICS_FILE).shape == source.shape
        assert read_manifest(tmp_path)["details"]["source"]["command"][0] == "train"

    def test_export_without_metrics(self, tmp_path: Path) -> None:
        """A directory without metrics is a runtime error."""
        assert dispatch(["export", "--run", str(tmp_path), "--out", str(tmp_path / "out")]) == 2


def test_bad_config(tmp_path: Path) -> None:
    """An invalid configuration is a runtime error."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"dim": -1}))
    assert dispatch(["gen", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
