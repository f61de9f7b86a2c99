import logging
from pathlib import Path
from typing import List, Optional

import typer

from commands.common import cli_errors, read_instance, run_directory, seeded_rng, show_frame, write_instance
from dependencies.backend import BackendFactory
from dependencies.config import get_settings, load_run_config
from models.dataset import DatasetKind, DrugReviewParams, PolisParams
from models.llm import ProseDatasetConfig
from services.baselines import BaselineMethod, baseline_slate
from services.datasets import ingest_dataset, load_votes
from services.experiment import evaluate_llm_slates, vote_validation
from services.prose import CotScorer, ProseRunner, cot_utility, disc_utility
from services.reporting import ReportWriter, emit_report, read_slates, write_slates
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

prose_app = typer.Typer(help="LLM pipeline: PROSE runs and comparison slates")

DRUG_REVIEW_PRESETS = {
    "birth_control_uniform": lambda: DrugReviewParams.birth_control(imbalanced=False),
    "birth_control_imbalanced": lambda: DrugReviewParams.birth_control(imbalanced=True),
    "obesity": DrugReviewParams.obesity,
}
SLATES_FILE = "slates.json"
INSTANCE_FILE = "instance.json"


def _dataset_config(name: Optional[str], configured: Optional[ProseDatasetConfig]) -> ProseDatasetConfig:
    if name is None:
        if configured is None:
            raise ConfigError("Pass --dataset drug_review|bowling_green or set prose in the configuration")
        return configured
    if name == "drug_review":
        return ProseDatasetConfig.drug_review()
    if name == "bowling_green":
        return ProseDatasetConfig.bowling_green()
    raise ConfigError(f"Unknown PROSE dataset configuration: {name}")


@cli_errors
def ingest(kind: DatasetKind = typer.Argument(..., help="drug_review or polis"),
           paths: List[Path] = typer.Argument(..., help="Review tables or the prepared agent file"),
           preset: Optional[str] = typer.Option(None, help=f"Drug-review preset: {', '.join(DRUG_REVIEW_PRESETS)}"),
           config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
           seed: Optional[int] = typer.Option(None, help="Sampling seed"),
           out: Optional[Path] = typer.Option(None, help="Output root")):
    """Build an instance file from a drug-review table or a Polis agent file."""
    run_config = load_run_config(config)
    section = run_config.dataset
    params = None
    if kind == DatasetKind.DRUG_REVIEW:
        if preset is not None:
            if preset not in DRUG_REVIEW_PRESETS:
                raise ConfigError(f"Unknown drug-review preset: {preset}")
            params = DRUG_REVIEW_PRESETS[preset]()
        elif section is not None and section.drug_review is not None:
            params = section.drug_review
        else:
            raise ConfigError("Drug-review ingestion needs --preset or dataset.drug_review in the configuration")
    elif section is not None and section.polis is not None:
        params = section.polis
    else:
        params = PolisParams()

    backend = None
    if kind == DatasetKind.DRUG_REVIEW and params.filter_brands:
        backend = BackendFactory(get_settings()).get_backend()
    instance = ingest_dataset(kind, paths, params, backend, seeded_rng(seed if seed is not None else run_config.seed))
    run_dir = run_directory(out or run_config.output_dir, "ingest")
    write_instance(instance, run_dir / INSTANCE_FILE)
    ReportWriter(run_dir, plots=False).manifest({"kind": kind.value, "paths": [str(p) for p in paths],
                                                 "params": params.model_dump()},
                                                seeds=[seed if seed is not None else run_config.seed],
                                                command="ingest")
    typer.echo(str(run_dir / INSTANCE_FILE))


@prose_app.command("run")
@cli_errors
def prose_run(instance_path: Path = typer.Argument(..., help="Instance file written by ingest"),
              dataset: Optional[str] = typer.Option(None, help="drug_review or bowling_green"),
              baselines: bool = typer.Option(False, help="Also build the comparison slates"),
              config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
              seed: Optional[int] = typer.Option(None, help="Run seed"),
              out: Optional[Path] = typer.Option(None, help="Output root")):
    """Run PROSE on an instance, optionally with every baseline."""
    run_config = load_run_config(config)
    dataset_config = _dataset_config(dataset, run_config.prose)
    instance = read_instance(instance_path, budget=dataset_config.budget)
    seed = seed if seed is not None else run_config.seed
    rng = seeded_rng(seed)
    backend = BackendFactory(get_settings()).get_backend()

    runner = ProseRunner(backend)
    result = runner.run(instance, dataset_config, rng)
    run_dir = run_directory(out or run_config.output_dir, "prose")
    runner.save(result, run_dir)
    write_instance(instance, run_dir / INSTANCE_FILE)

    slates = {"prose": (result.slate, result.assignment)}
    if baselines:
        for method in BaselineMethod:
            outcome = baseline_slate(method, instance, backend, rng, config=dataset_config, factory=runner.factory)
            slates[method.value] = (outcome.slate, outcome.assignment)
    write_slates(run_dir / SLATES_FILE, slates, result.bank)
    ReportWriter(run_dir, plots=False).manifest({"dataset": dataset_config.model_dump(),
                                                 "instance": str(instance_path), "baselines": baselines},
                                                seeds=[seed], command="prose run")
    for method, (slate, _) in slates.items():
        typer.echo(f"{method}: {len(slate)} statements, {slate.total_cost} words")
    typer.echo(str(run_dir))


@cli_errors
def evaluate(run: Path = typer.Argument(..., help="Directory written by prose run"),
             reference: str = typer.Option("prose", help="Method the p-values compare against"),
             sample_size: Optional[int] = typer.Option(None, help="Bank statements sampled for violations"),
             config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
             seed: Optional[int] = typer.Option(None, help="Sampling seed")):
    """Score every slate of a run with the chain-of-thought evaluator."""
    run_config = load_run_config(config)
    slates, bank = read_slates(run / SLATES_FILE)
    instance = read_instance(run / INSTANCE_FILE)
    backend = BackendFactory(get_settings()).get_backend()
    seed = seed if seed is not None else run_config.seed

    report = evaluate_llm_slates(slates, instance, CotScorer(instance, backend), bank, seeded_rng(seed),
                                 reference=reference, sample_size=sample_size or run_config.eval_sample_size)
    emit_report(report, run)
    show_frame(report.frame(), "Evaluation")


@cli_errors
def validate_votes(votes: Optional[Path] = typer.Argument(None, help="JSON-lines vote file"),
                   coefficient: float = typer.Option(1.0, help="Specificity coefficient of the disc score"),
                   config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
                   seed: Optional[int] = typer.Option(None, help="Vote sampling seed"),
                   out: Optional[Path] = typer.Option(None, help="Output root")):
    """Check the discriminative scores against held-out up- and downvotes."""
    run_config = load_run_config(config)
    votes = votes or run_config.votes
    if votes is None:
        raise ConfigError("No vote file given")
    records = load_votes(votes)
    backend = BackendFactory(get_settings()).get_backend()
    impls = {
        "disc": lambda agent, statement: disc_utility(agent, statement, coefficient, backend),
        "cot": lambda agent, statement: cot_utility(agent, statement, backend),
    }
    seed = seed if seed is not None else run_config.seed
    report = vote_validation(records, impls, seeded_rng(seed))
    run_dir = run_directory(out or run_config.output_dir, "votes")
    emit_report(report, run_dir)
    ReportWriter(run_dir, plots=False).manifest({"votes": str(votes), "coefficient": coefficient}, seeds=[seed],
                                                command="validate-votes")
    show_frame(report.frame(), f"Votes (r={report.pearson_r}, kappa={report.kappa})")
