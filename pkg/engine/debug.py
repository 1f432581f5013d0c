"""Global debug flag and logging setup for the UV makeup engine."""

import logging

from rich.console import Console
from rich.logging import RichHandler

ROOT_LOGGER = "uvmakeup"


class DebugManager:
    """Singleton manager for log verbosity."""
    _instance = None
    _debug_enabled = False
    _configured = False

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    @classmethod
    def configure(cls):
        """Attach a rich handler writing to stderr (once)."""
        if cls._configured:
            return
        handler = RichHandler(
            console=Console(stderr=True),
            show_path=False,
            rich_tracebacks=True,
            markup=False,
        )
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root = logging.getLogger(ROOT_LOGGER)
        root.addHandler(handler)
        root.setLevel(logging.INFO)
        root.propagate = False
        cls._configured = True

    @classmethod
    def enable(cls):
        """Enable debug output."""
        cls.configure()
        cls._debug_enabled = True
        logging.getLogger(ROOT_LOGGER).setLevel(logging.DEBUG)
        logging.getLogger(ROOT_LOGGER).debug("debug output enabled")

    @classmethod
    def disable(cls):
        """Disable debug output."""
        cls._debug_enabled = False
        logging.getLogger(ROOT_LOGGER).setLevel(logging.INFO)

    @classmethod
    def is_enabled(cls) -> bool:
        """Check if debug is enabled."""
        return cls._debug_enabled


def get_logger(name: str) -> logging.Logger:
    """Return a logger under the package namespace."""
    short = name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{ROOT_LOGGER}.{short}")
