import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)


def setup_logging(verbosity: int = 0) -> None:
    """Install a rich handler on the root logger. 0 → WARNING, 1 → INFO, 2+ → DEBUG."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )
    # openai/httpx are chatty at INFO
    for noisy in ("httpx", "openai"):
        logging.getLogger(noisy).setLevel(max(level, logging.WARNING))
