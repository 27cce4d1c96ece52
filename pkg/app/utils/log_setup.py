# app/utils/log_setup.py
import logging
import os
from typing import Optional

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

from app.exceptions import ConfigError

# Pick up CLICKLABEL_* defaults from a local .env if present
load_dotenv()

DEFAULT_LEVEL = os.environ.get("CLICKLABEL_LOG_LEVEL", "INFO")


def setup_logging(level: Optional[str] = None) -> None:
    """Route every `app.*` logger to stderr through rich; stdout stays reserved for results"""
    resolved = (level or DEFAULT_LEVEL).upper()
    if not isinstance(logging.getLevelName(resolved), int):
        raise ConfigError("log_level", f"unknown level '{resolved}'")
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))

    root = logging.getLogger("app")
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(resolved)
    root.propagate = False
