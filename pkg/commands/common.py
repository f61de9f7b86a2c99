import functools
import logging
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import orjson
import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from models.instance import Instance
from utils.exceptions import DatasetError, SlateEngineError

console = Console(stderr=True)
logger = logging.getLogger(__name__)


def cli_errors(fn: Callable) -> Callable:
    """Turn engine errors into a one-line message and exit code 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SlateEngineError as e:
            logger.error(f"{type(e).__name__}: {str(e)}")
            console.print(f"[red]{type(e).__name__}:[/red] {e}")
            raise typer.Exit(code=1)
    return wrapper


def run_directory(base: Path, command: str) -> Path:
    """A fresh directory under base named after the command and the current time."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    path = base / f"{command}-{stamp}"
    suffix = 1
    while path.exists():
        path = base / f"{command}-{stamp}-{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    return path


def show_frame(frame: pd.DataFrame, title: str):
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{value:.4g}" if isinstance(value, float) else str(value) for value in row))
    Console().print(table)


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def write_instance(instance: Instance, path: Path) -> Path:
    path.write_bytes(orjson.dumps(instance.model_dump(mode="json"), option=orjson.OPT_INDENT_2))
    return path


def read_instance(path: Path, budget: Optional[int] = None) -> Instance:
    """
    Raises:
        DatasetError: unreadable or invalid instance file
    """
    try:
        instance = Instance.model_validate(orjson.loads(path.read_bytes()))
    except (OSError, orjson.JSONDecodeError, ValueError) as e:
        raise DatasetError(f"Cannot read instance {path}: {e}") from e
    return instance.with_budget(budget) if budget is not None else instance
