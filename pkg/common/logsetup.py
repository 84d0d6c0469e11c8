"""
Logging setup for the command line entry points
Library modules only call logging.getLogger(__name__)
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()

_CONFIGURED = False


def configure_logging(level: str | int = "INFO") -> None:
    """
    Install a single RichHandler on the root logger

    Args:
        level: Logging level name or number
    """
    global _CONFIGURED
    root = logging.getLogger()
    root.setLevel(level if isinstance(level, int) else level.upper())
    if _CONFIGURED:
        return
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    _CONFIGURED = True


def banner(title: str, width: int = 70) -> None:
    """Print a section banner"""
    console.print("\n" + "=" * width)
    console.print(title)
    console.print("=" * width)
