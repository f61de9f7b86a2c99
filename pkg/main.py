import logging

import typer
from dotenv import find_dotenv, load_dotenv

from commands.cache_commands import cache_app
from commands.experiment_commands import scan, sweep
from commands.prose_commands import evaluate, ingest, prose_app, validate_votes
from dependencies.config import get_settings

load_dotenv(find_dotenv())

app = typer.Typer(help="Proportional slate selection: synthetic sweeps and the LLM pipeline",
                  no_args_is_help=True)
app.command("sweep")(sweep)
app.command("scan")(scan)
app.command("eval")(evaluate)
app.command("validate-votes")(validate_votes)
app.command("ingest")(ingest)
app.add_typer(prose_app, name="prose")
app.add_typer(cache_app, name="cache")


@app.callback()
def configure(log_level: str = typer.Option(None, help="Overrides SLATE_LOG_LEVEL")):
    level = (log_level or get_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


if __name__ == "__main__":
    app()
