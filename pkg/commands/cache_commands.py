from pathlib import Path

import typer

from commands.common import cli_errors
from dependencies.backend import BackendFactory
from dependencies.config import get_settings

cache_app = typer.Typer(help="Response cache fixtures")


@cache_app.command("import")
@cli_errors
def cache_import(path: Path = typer.Argument(..., help="JSON-lines fixture to load")):
    """Load recorded responses into the cache."""
    store = BackendFactory(get_settings()).get_cache_store()
    added = store.import_jsonl(path)
    typer.echo(f"{added} entries added, {store.count()} in cache")


@cache_app.command("export")
@cli_errors
def cache_export(path: Path = typer.Argument(..., help="JSON-lines fixture to write")):
    """Write every cached response to a fixture file."""
    store = BackendFactory(get_settings()).get_cache_store()
    written = store.export_jsonl(path)
    typer.echo(f"{written} entries written to {path}")
