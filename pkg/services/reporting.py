import hashlib
import logging
import platform
from datetime import datetime, timezone
from fractions import Fraction
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import orjson  # noqa: E402
import pandas as pd  # noqa: E402
from pydantic import BaseModel, ValidationError  # noqa: E402

from models.experiment import (CURVE_COLUMNS, SCAN_COLUMNS, TABLE_COLUMNS, EvalReport, ScanResult,  # noqa: E402
                               SweepResult, VoteValidationReport)
from models.slate import Assignment, Slate  # noqa: E402
from models.statement import Statement  # noqa: E402
from models.synthetic import ErrorModel  # noqa: E402
from services.audit import guarantee_bound  # noqa: E402
from utils.exceptions import DatasetError  # noqa: E402

REPORTED_PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "ortools", "pydantic", "httpx", "SQLAlchemy")

Report = Union[SweepResult, ScanResult, Sequence[ScanResult], EvalReport, VoteValidationReport]


def _json_default(value: Any):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else value.numerator
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def dump_json(value: Any) -> bytes:
    option = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_NON_STR_KEYS
    return orjson.dumps(value, default=_json_default, option=option)


def config_hash(config: Union[BaseModel, Dict, None]) -> str:
    body = config.model_dump() if isinstance(config, BaseModel) else (config or {})
    return hashlib.sha256(orjson.dumps(body, default=_json_default,
                                       option=orjson.OPT_SORT_KEYS | orjson.OPT_NON_STR_KEYS)).hexdigest()


def package_versions(names: Iterable[str] = REPORTED_PACKAGES) -> Dict[str, Optional[str]]:
    versions = {}
    for name in names:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_csv(frame: pd.DataFrame, path: Path, columns: Optional[Sequence[str]] = None) -> Path:
    """Write without the index; an empty frame still gets its header."""
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


class ReportWriter:
    def __init__(self, out_dir: Union[str, Path], plots: bool = True):
        """
        Write experiment outputs into one run directory.

        Args:
            out_dir: the run directory (created when missing)
            plots (bool): also render PNG figures
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.out_dir = Path(out_dir)
        self.plots = plots
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def manifest(self, config: Union[BaseModel, Dict, None], seeds: Sequence[int] = (), command: str = "") -> Path:
        body = {
            "command": command,
            "config": config.model_dump() if isinstance(config, BaseModel) else (config or {}),
            "config_hash": config_hash(config),
            "seeds": [int(seed) for seed in seeds],
            "python": platform.python_version(),
            "packages": package_versions(),
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self.out_dir / "manifest.json"
        path.write_bytes(dump_json(body))
        self.logger.info(f"Wrote manifest to {path}")
        return path

    def sweep(self, result: SweepResult) -> Dict[str, Path]:
        files = {
            "table": write_csv(result.table, self.out_dir / "sweep_table.csv", TABLE_COLUMNS),
            "curves": write_csv(result.curves, self.out_dir / "sweep_curves.csv", CURVE_COLUMNS),
        }
        instances = pd.DataFrame([{"setting": m.setting, "variant": m.variant.value, "seed_index": m.seed_index,
                                   "mean_utility": m.mean_utility, "p10_utility": m.p10_utility,
                                   "violation": m.violation, "max_violating_slack": m.max_violating_slack,
                                   "balanced": m.balanced} for m in result.instances])
        files["instances"] = write_csv(instances, self.out_dir / "sweep_instances.csv",
                                       ["setting", "variant", "seed_index", "mean_utility", "p10_utility",
                                        "violation", "max_violating_slack", "balanced"])
        if self.plots and not result.curves.empty:
            files["plot"] = self.plot_curves(result.curves, list(result.spec.settings))
        return files

    def scans(self, results: Sequence[ScanResult]) -> Dict[str, Path]:
        frames = [result.frame for result in results]
        frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SCAN_COLUMNS)
        files = {"scan": write_csv(frame, self.out_dir / "scan.csv", SCAN_COLUMNS)}
        if self.plots and not frame.empty:
            files["plot"] = self.plot_scans(frame)
        return files

    def evaluation(self, report: EvalReport) -> Dict[str, Path]:
        files = {"eval": write_csv(report.frame(), self.out_dir / "eval.csv")}
        utilities = pd.DataFrame({name: list(stats.utilities) for name, stats in report.methods.items()})
        files["utilities"] = write_csv(utilities, self.out_dir / "eval_utilities.csv")
        return files

    def votes(self, report: VoteValidationReport) -> Dict[str, Path]:
        files = {"votes": write_csv(report.frame(), self.out_dir / "votes.csv")}
        summary = {"pearson_r": report.pearson_r, "kappa": report.kappa, "skipped": list(report.skipped)}
        path = self.out_dir / "votes_summary.json"
        path.write_bytes(dump_json(summary))
        files["summary"] = path
        return files

    def plot_curves(self, curves: pd.DataFrame, settings: Sequence[ErrorModel]) -> Path:
        """Mean max-d against slack, one panel per error setting; shaded where the complex bound rules it out."""
        labels = list(dict.fromkeys(curves["setting"]))
        fig, axes = plt.subplots(1, len(labels), figsize=(4 * len(labels), 3.5), squeeze=False)
        by_label = {setting.label: setting for setting in settings}
        for ax, label in zip(axes[0], labels):
            panel = curves[curves["setting"] == label]
            for variant, rows in panel.groupby("variant", sort=False):
                ax.plot(rows["b"], rows["mean_max_d"], marker="o", label=variant)
            setting = by_label.get(label)
            bound = guarantee_bound("complex", setting) if setting is not None else None
            if bound is not None:
                b, d = float(bound[0]), float(bound[1])
                top = max(float(panel["mean_max_d"].max()), d) * 1.1
                ax.fill_between([b, float(panel["b"].max())], d, top, color="gray", alpha=0.3)
            ax.set_title(label, fontsize=8)
            ax.set_xlabel("b")
            ax.set_ylabel("mean max d")
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = self.out_dir / "sweep_curves.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        return path

    def plot_scans(self, frame: pd.DataFrame) -> Path:
        params = list(dict.fromkeys(frame["param"]))
        fig, axes = plt.subplots(1, len(params), figsize=(4 * len(params), 3.5), squeeze=False)
        for ax, param in zip(axes[0], params):
            rows = frame[frame["param"] == param]
            ax.plot(rows["value"], rows["mean"], marker="o")
            ax.set_xlabel(param)
            ax.set_ylabel(rows["metric"].iloc[0])
        fig.tight_layout()
        path = self.out_dir / "scan.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        return path


def emit_report(report: Report, out_dir: Union[str, Path], plots: bool = True) -> Dict[str, Path]:
    """
    Write the CSV files (and figures) of a report into out_dir.

    Returns:
        Dict[str, Path]: written files by role
    """
    writer = ReportWriter(out_dir, plots=plots)
    if isinstance(report, SweepResult):
        files = writer.sweep(report)
    elif isinstance(report, ScanResult):
        files = writer.scans([report])
    elif isinstance(report, EvalReport):
        files = writer.evaluation(report)
    elif isinstance(report, VoteValidationReport):
        files = writer.votes(report)
    else:
        files = writer.scans(list(report))
    writer.logger.info(f"Wrote {', '.join(sorted(str(p.name) for p in files.values()))} to {writer.out_dir}")
    return files


def write_slates(path: Union[str, Path],
                 slates: Dict[str, Tuple[Slate, Optional[Assignment]]],
                 bank: Sequence[Statement] = ()) -> Path:
    """Store the slates of several methods, their assignments and the shared bank as one JSON file."""
    body = {
        "methods": {method: {"slate": slate.model_dump(),
                             "assignment": assignment.model_dump() if assignment is not None else None}
                    for method, (slate, assignment) in slates.items()},
        "bank": [statement.model_dump() for statement in bank],
    }
    path = Path(path)
    path.write_bytes(dump_json(body))
    return path


def read_slates(path: Union[str, Path]) -> Tuple[Dict[str, Tuple[Slate, Optional[Assignment]]], List[Statement]]:
    """
    Raises:
        DatasetError: unreadable or malformed slate file
    """
    try:
        body = orjson.loads(Path(path).read_bytes())
        slates = {method: (Slate.model_validate(entry["slate"]),
                           Assignment.model_validate(entry["assignment"]) if entry["assignment"] else None)
                  for method, entry in body["methods"].items()}
        bank = [Statement.model_validate(statement) for statement in body.get("bank", [])]
    except (OSError, orjson.JSONDecodeError, KeyError, ValidationError) as e:
        raise DatasetError(f"Cannot read slates from {path}: {e}") from e
    return slates, bank
