# app/main.py
from typing import Optional

import typer

from app.routers import dataset, evaluate, labels
from app.routers.common import handle_errors
from app.utils.log_setup import setup_logging

# Create CLI app
cli = typer.Typer(
    name="clicklabel",
    help="Click-supervised LiDAR auto-labeling: synthesize, click, label, refine, evaluate",
    no_args_is_help=True,
    add_completion=False,
    pretty_exceptions_enable=False,
)


@cli.callback()
@handle_errors
def main(
    log_level: Optional[str] = typer.Option(
        None, "--log-level", help="DEBUG, INFO, WARNING or ERROR (env CLICKLABEL_LOG_LEVEL)"
    ),
):
    """Logs go to stderr; stdout carries only command results"""
    setup_logging(log_level)


# Include routers
for router in (dataset.router, labels.router, evaluate.router):
    cli.registered_commands.extend(router.registered_commands)


if __name__ == "__main__":
    cli()
