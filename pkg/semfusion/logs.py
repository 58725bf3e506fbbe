"""Logging setup and the console used for banners and tables."""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()

BANNER_WIDTH = 60


def setup_logging(level: str = "INFO") -> None:
    """Route the ``semfusion`` loggers through rich."""
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root = logging.getLogger("semfusion")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def banner(title: str) -> None:
    console.print("=" * BANNER_WIDTH)
    console.print(title)
    console.print("=" * BANNER_WIDTH)
