import logging
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import ValidationError

from commands.common import cli_errors, run_directory, show_frame
from dependencies.config import load_run_config
from models.experiment import ScanParam, ScanSpec, SweepSpec
from models.synthetic import ErrorMode
from services.experiment import derived_seed, run_error_sweep, run_param_scan
from services.reporting import ReportWriter, emit_report
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


def _sweep_spec(base: Optional[SweepSpec], **overrides) -> SweepSpec:
    body = base.model_dump() if base is not None else {}
    body.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return SweepSpec.model_validate(body)
    except ValidationError as e:
        raise ConfigError(f"Invalid sweep parameters: {e}") from e


@cli_errors
def sweep(config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
          instances: Optional[int] = typer.Option(None, help="Synthetic instances per setting"),
          workers: Optional[int] = typer.Option(None, help="Worker processes"),
          seed: Optional[int] = typer.Option(None, help="Base seed"),
          out: Optional[Path] = typer.Option(None, help="Output root"),
          plots: bool = typer.Option(True, help="Render PNG figures")):
    """Monte-Carlo sweep of the process variants under simulated query errors."""
    run_config = load_run_config(config)
    spec = _sweep_spec(run_config.sweep, num_instances=instances, workers=workers, base_seed=seed)
    run_dir = run_directory(out or run_config.output_dir, "sweep")

    result = run_error_sweep(spec)
    emit_report(result, run_dir, plots=plots)
    ReportWriter(run_dir, plots=False).manifest(spec, seeds=result.seeds, command="sweep")
    show_frame(result.table, "Sweep")
    typer.echo(str(run_dir))


@cli_errors
def scan(param: Optional[ScanParam] = typer.Option(None, help="Error parameter to vary"),
         values: Optional[List[float]] = typer.Option(None, "--value", help="Parameter value (repeatable)"),
         mode: ErrorMode = typer.Option(ErrorMode.UNIFORM, help="Error mode"),
         config: Optional[Path] = typer.Option(None, help="YAML run configuration"),
         instances: Optional[int] = typer.Option(None, help="Synthetic instances per value"),
         workers: Optional[int] = typer.Option(None, help="Worker processes"),
         seed: Optional[int] = typer.Option(None, help="Base seed"),
         out: Optional[Path] = typer.Option(None, help="Output root"),
         plots: bool = typer.Option(True, help="Render PNG figures")):
    """Vary one error parameter with the others exact (complex variant)."""
    run_config = load_run_config(config)
    spec = _sweep_spec(run_config.scan_env or run_config.sweep, num_instances=instances, workers=workers,
                       base_seed=seed)
    if param is not None:
        if not values:
            raise ConfigError("--param needs at least one --value")
        try:
            scans = [ScanSpec(param=param, values=tuple(values), mode=mode)]
        except ValidationError as e:
            raise ConfigError(f"Invalid scan: {e}") from e
    else:
        scans = list(run_config.scans)
    if not scans:
        raise ConfigError("Nothing to scan: pass --param/--value or list scans in the configuration")

    run_dir = run_directory(out or run_config.output_dir, "scan")
    results = [run_param_scan(item.param, item.values, spec, mode=item.mode) for item in scans]
    emit_report(results, run_dir, plots=plots)
    seeds = [derived_seed(spec.base_seed, k, 0) for k in range(spec.num_instances)]
    ReportWriter(run_dir, plots=False).manifest({"env": spec.model_dump(), "scans": [s.model_dump() for s in scans]},
                                              seeds=seeds, command="scan")
    for result in results:
        show_frame(result.frame, f"Scan {result.scan.param.value}")
    typer.echo(str(run_dir))
