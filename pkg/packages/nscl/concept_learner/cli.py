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

"""This module contains the command-line interface of the concept learner."""

import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import pandas as pd  # type: ignore
from aea.exceptions import enforce
from aea.helpers.logging import setup_logger

from packages.nscl.concept_learner import PUBLIC_ID
from packages.nscl.concept_learner.actions import (
    TabletopState,
    parse_goal,
    plan,
    verify_goal,
)
from packages.nscl.concept_learner.autodiff import Tape
from packages.nscl.concept_learner.baseline import BaselineModel
from packages.nscl.concept_learner.concepts import (
    ConceptRegistry,
    Direction,
    from_checkpoint,
    persist,
)
from packages.nscl.concept_learner.dsl import Program, Unique, parse_program
from packages.nscl.concept_learner.exceptions import ConceptLearnerError, ConfigError
from packages.nscl.concept_learner.executor import Mode, execute, resolve_reference
from packages.nscl.concept_learner.learning import (
    SUITE_KINDS,
    Metrics,
    evaluate,
    evaluate_model,
    fewshot_episode,
    run_suite,
    train,
    train_baseline,
    write_metrics,
)
from packages.nscl.concept_learner.models import Params, load_params
from packages.nscl.concept_learner.worldgen import (
    NOVEL_COLOR,
    Dataset,
    SceneRecord,
    content_hashes,
    filter_chain,
    gen_dataset,
    parse_np,
    parse_question,
    read_jsonl,
    scene_from_json,
)


CHECKPOINT_FILE = "checkpoint.json"
BASELINE_FILE = "baseline.json"
METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
PLAN_FILE = "plan.txt"
LOGGER_NAME = "packages.nscl"

_default_logger = logging.getLogger(__name__)
_ARGV: List[str] = []


@dataclass
class RunManifest:  # pylint: disable=too-many-instance-attributes
    """What a run did, with everything needed to repeat it."""

    command: List[str]
    config: Dict[str, Any]
    seeds: Dict[str, int]
    dataset_hashes: Dict[str, str] = field(default_factory=dict)
    tool_version: str = str(PUBLIC_ID)
    started: str = ""
    finished: str = ""
    wall_clock: float = 0.0
    outputs: List[str] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        """Write the manifest next to the run's other outputs."""
        path = Path(directory) / MANIFEST_FILE
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """The context of one command: parameters, output directory and manifest."""

    def __init__(self, params: Params, out: Path) -> None:
        """Start a run."""
        self.params = params
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(
            command=list(_ARGV) or sys.argv[1:],
            config=params.echo(),
            seeds={"seed": params.seed, "mixing_seed": params.mixing_seed},
            started=_now(),
        )
        self._started = time.perf_counter()

    def path(self, name: str) -> Path:
        """Get a path inside the output directory."""
        self.manifest.outputs.append(name)
        return self.out / name

    def finish(self) -> None:
        """Write the manifest."""
        self.manifest.finished = _now()
        self.manifest.wall_clock = round(time.perf_counter() - self._started, 3)
        self.manifest.write(self.out)
        _default_logger.info(f"wrote {MANIFEST_FILE} to {self.out}")


def _load_dataset(path: Path, run: Run) -> Dataset:
    run.manifest.dataset_hashes = content_hashes(path)
    return Dataset.load(path)


def _load_registry(checkpoint: Optional[Path], params: Params) -> ConceptRegistry:
    if checkpoint is not None:
        return from_checkpoint(checkpoint)
    _default_logger.warning("no --checkpoint given, using an untrained registry")
    return params.experiment_config().build_registry()


def _read_scene(path: Path, scene_id: Optional[str]) -> SceneRecord:
    """Read a scene from a JSON object or from a scenes.jsonl file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        records = list(read_jsonl(path))
    else:
        try:
            records = [json.loads(path.read_text(encoding="utf-8"))]
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read scene {path}: {e}") from e
        enforce(isinstance(records[0], dict), f"scene {path} must be a JSON object", ConfigError)
    for record in records:
        if scene_id is None or record.get("scene_id") == scene_id:
            return scene_from_json(record)
    raise ConfigError(f"no scene '{scene_id}' in {path}")


def _write_metrics(run: Run, frames: Sequence[pd.DataFrame]) -> None:
    frame = pd.concat(list(frames), ignore_index=True) if len(frames) > 1 else frames[0]
    write_metrics(frame, run.path(METRICS_FILE))


def _summarize(run: Run, *results: Metrics) -> None:
    run.manifest.details["runs"] = [result.summary() for result in results]
    run.manifest.details["training_wall_clock"] = {result.model: round(result.wall_clock, 3) for result in results}


# ---------------------------------------------------------------------------
# command line


def _common(function: Any) -> Any:
    options = [
        click.option("--config", "config", type=click.Path(exists=True, dir_okay=False, path_type=Path)),
        click.option("--seed", type=int, default=None, help="Seed of every random stream (default 0)."),
        click.option("--jobs", type=click.IntRange(min=1), default=None, help="Worker threads."),
    ]
    for option in reversed(options):
        function = option(function)
    return function


def _params(config: Optional[Path], seed: Optional[int], jobs: Optional[int], **overrides: Any) -> Params:
    return load_params(config, dict(overrides, seed=seed, jobs=jobs))


_DATASET = click.option(
    "--dataset", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path)
)
_OPTIONAL_DATASET = click.option(
    "--dataset", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None
)
_OUT = click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
_CHECKPOINT = click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))


@click.group(name="nscl")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
def cli(log_level: str) -> None:
    """Learn visual concepts from question answering on a synthetic tabletop world."""
    logger = logging.getLogger(LOGGER_NAME)
    if not logger.handlers:
        logger = setup_logger(LOGGER_NAME)
    logger.setLevel(log_level.upper())


@cli.command()
@_common
@_OUT
def gen(config: Optional[Path], seed: Optional[int], jobs: Optional[int], out: Path) -> None:
    """Generate scenes, questions and captions."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    dataset = gen_dataset(params.generation_settings())
    run.manifest.dataset_hashes = dataset.save(out)
    run.manifest.outputs.extend(sorted(run.manifest.dataset_hashes))
    run.finish()
    click.echo(f"wrote {len(dataset.train)} training and {len(dataset.test)} test questions to {out}")


@cli.command(name="train")
@_common
@_DATASET
@_OUT
@click.option("--model", type=click.Choice(["concept", "baseline"]), default="concept", show_default=True)
def train_command(  # pylint: disable=too-many-arguments
    config: Optional[Path], seed: Optional[int], jobs: Optional[int], dataset: Path, out: Path, model: str
) -> None:
    """Train the concept model along the curriculum, or the baseline."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    data = _load_dataset(dataset, run)
    train_config = params.train_config(str(dataset))
    if model == "concept":
        registry, metrics = train(train_config, params.experiment_config().build_registry(), data)
        persist(registry, run.path(CHECKPOINT_FILE), Direction.SAVE)
    else:
        baseline, metrics = train_baseline(train_config, data, params.baseline_hidden, palette=params.palette)
        baseline.save(run.path(BASELINE_FILE))
    _write_metrics(run, [metrics.to_frame()])
    _summarize(run, metrics)
    run.finish()
    for split in metrics.splits.values():
        click.echo(f"{split.split}: {split.accuracy:.4f} ({split.n} questions)")


@cli.command(name="eval")
@_common
@_DATASET
@_OUT
@_CHECKPOINT
@click.option("--model", type=click.Choice(["concept", "baseline"]), default="concept", show_default=True)
@click.option("--hard", is_flag=True, help="Execute with ground-truth concept indicators.")
def eval_command(  # pylint: disable=too-many-arguments
    config: Optional[Path],
    seed: Optional[int],
    jobs: Optional[int],
    dataset: Path,
    out: Path,
    checkpoint: Optional[Path],
    model: str,
    hard: bool,
) -> None:
    """Evaluate a checkpoint on the test questions."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    data = _load_dataset(dataset, run)
    metrics = Metrics(model)
    if model == "baseline":
        if checkpoint is None:
            raise click.UsageError("evaluating the baseline needs --checkpoint")
        metrics.splits["test"] = evaluate_model(BaselineModel.load(checkpoint), data.test, data.scenes, "test", params.jobs)
    else:
        registry = _load_registry(checkpoint, params)
        metrics.splits["test"] = evaluate(
            registry,
            data.test,
            data.scenes,
            Mode.HARD if hard else Mode.SOFT,
            params.executor_settings(),
            "test",
            params.jobs,
        )
    _write_metrics(run, [metrics.to_frame()])
    run.finish()
    click.echo(f"test: {metrics.splits['test'].accuracy:.4f} ({metrics.splits['test'].n} questions)")


@cli.command()
@click.argument("kind", type=click.Choice(list(SUITE_KINDS)))
@_common
@_OPTIONAL_DATASET
@_OUT
@_CHECKPOINT
def suite(  # pylint: disable=too-many-arguments
    kind: str,
    config: Optional[Path],
    seed: Optional[int],
    jobs: Optional[int],
    dataset: Optional[Path],
    out: Path,
    checkpoint: Optional[Path],
) -> None:
    """Run an experiment suite."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    data = _load_dataset(dataset, run) if dataset is not None else None
    registry = from_checkpoint(checkpoint) if checkpoint is not None else None
    report = run_suite(kind, params.experiment_config(str(dataset) if dataset else None), data, registry)
    write_metrics(report, run.path(METRICS_FILE))
    run.finish()
    click.echo(report.to_string(index=False))


@cli.command()
@_common
@_OPTIONAL_DATASET
@_OUT
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--word", default=NOVEL_COLOR, show_default=True, help="The new colour word.")
def fewshot(  # pylint: disable=too-many-arguments
    config: Optional[Path],
    seed: Optional[int],
    jobs: Optional[int],
    dataset: Optional[Path],
    out: Path,
    checkpoint: Path,
    word: str,
) -> None:
    """Learn a new colour from a few questions, leaving everything else untouched."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    data = _load_dataset(dataset, run) if dataset is not None else None
    learned, metrics = fewshot_episode(params.experiment_config(), from_checkpoint(checkpoint), data, word)
    persist(learned, run.path(CHECKPOINT_FILE), Direction.SAVE)
    _write_metrics(run, [metrics.to_frame(by_type=False)])
    _summarize(run, metrics)
    if data is not None:
        run.manifest.details["accuracy_delta"] = {
            "colour_independent": metrics.delta("old_before", "old_after"),
            "all": metrics.delta("all_before", "all_after"),
        }
    run.finish()
    for split in metrics.splits.values():
        click.echo(f"{split.split}: {split.accuracy:.4f} ({split.n})")


def _program(text: str, registry: ConceptRegistry) -> Tuple[Program, bool]:
    """Read a DSL program, a question, or a `the ...` referring expression."""
    text = text.strip()
    if text.startswith("("):
        return parse_program(text), False
    normalized = text.lower().rstrip("?.").strip()
    if normalized.startswith("the "):
        concepts = parse_np(normalized[len("the ") :], registry.lexicon)
        return Program(Unique(filter_chain(concepts))), True
    return parse_question(text, registry.lexicon), False


@cli.command()
@_common
@_OUT
@_CHECKPOINT
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--scene-id", default=None, help="Which scene of a scenes.jsonl file.")
@click.option("--question", required=True, help="A question, a `the ...` phrase or a DSL program.")
@click.option("--trace", is_flag=True, help="Print every node's result.")
@click.option("--hard", is_flag=True, help="Execute with ground-truth concept indicators.")
def query(  # pylint: disable=too-many-arguments,too-many-locals
    config: Optional[Path],
    seed: Optional[int],
    jobs: Optional[int],
    out: Path,
    checkpoint: Optional[Path],
    scene_path: Path,
    scene_id: Optional[str],
    question: str,
    trace: bool,
    hard: bool,
) -> None:
    """Answer a question about a scene."""
    params = _params(config, seed, jobs)
    run = Run(params, out)
    registry = _load_registry(checkpoint, params)
    scene = _read_scene(scene_path, scene_id)
    program, reference = _program(question, registry)
    mode = Mode.HARD if hard else Mode.SOFT
    tape = Tape()
    if reference:
        dist, index = resolve_reference(program, scene, registry, tape, mode, params.executor_settings())
        click.echo(f"object {index} p={dist[index]:.3f}")
        run.manifest.details["answer"] = index
    else:
        result, exec_trace = execute(program, scene, registry, tape, mode, params.executor_settings())
        if trace:
            for line in exec_trace.lines(tape):
                click.echo(line)
        answer = result.argmax(tape)
        click.echo(f"answer: {answer} p={result.probability(tape, answer):.3f}")
        run.manifest.details["answer"] = answer
    run.manifest.details["program"] = str(program)
    run.finish()


@cli.command(name="plan")
@_common
@_OUT
@_CHECKPOINT
@click.option("--state", "state_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--scene-id", default=None, help="Which scene of a scenes.jsonl file.")
@click.option("--goal", required=True, help="A goal such as 'left(a,b) & red(a)'.")
@click.option("--depth-cap", type=click.IntRange(min=1), default=None)
@click.option("--delta", type=float, default=None)
def plan_command(  # pylint: disable=too-many-arguments
    config: Optional[Path],
    seed: Optional[int],
    jobs: Optional[int],
    out: Path,
    checkpoint: Optional[Path],
    state_path: Path,
    scene_id: Optional[str],
    goal: str,
    depth_cap: Optional[int],
    delta: Optional[float],
) -> None:
    """Plan a sequence of actions reaching a goal."""
    params = _params(config, seed, jobs, plan_depth_cap=depth_cap, delta=delta)
    run = Run(params, out)
    registry = _load_registry(checkpoint, params)
    state = TabletopState.from_scene(_read_scene(state_path, scene_id))
    parsed = parse_goal(goal, registry.lexicon)
    found = plan(state, parsed, params.plan_depth_cap, params.delta)
    if found is None:
        lines = [f"no plan of at most {params.plan_depth_cap} steps"]
    else:
        lines = found.lines()
        if checkpoint is not None:
            probability = verify_goal(
                found, state, parsed, registry, params.delta, params.seed, params.mixing_seed, params.feature_noise
            )
            run.manifest.details["verification"] = probability
            lines.append(f"verified p={probability:.3f}")
    for line in lines:
        click.echo(line)
    run.path(PLAN_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.finish()


@cli.command()
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@_OUT
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json", show_default=True)
def export(run_dir: Path, out: Path, fmt: str) -> None:
    """Export the metrics of a run as CSV or JSON."""
    source = run_dir / METRICS_FILE
    if not source.exists():
        raise ConfigError(f"no {METRICS_FILE} in {run_dir}")
    run = Run(load_params(), out)
    frame = pd.read_csv(source)
    if fmt == "csv":
        write_metrics(frame, run.path(METRICS_FILE))
    else:
        target = run.path("metrics.json")
        target.write_text(frame.to_json(orient="records", indent=2) + "\n", encoding="utf-8")
    if (run_dir / MANIFEST_FILE).exists():
        run.manifest.details["source"] = json.loads((run_dir / MANIFEST_FILE).read_text(encoding="utf-8"))
    run.finish()
    click.echo(f"exported {len(frame)} rows from {source}")


def dispatch(argv: Sequence[str]) -> int:
    """
    Run a command line.

    :param argv: the arguments, without the program name.
    :return: 0 on success, 1 on a usage error, 2 on a runtime error.
    """
    _ARGV[:] = list(argv)
    try:
        result = cli.main(args=list(argv), prog_name="nscl", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except ConceptLearnerError as e:
        _default_logger.error(f"{type(e).__name__}: {e}")
        return 2
    return result if isinstance(result, int) else 0


def main() -> None:
    """Console entry point."""
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
