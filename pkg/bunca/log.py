"""Console and run-directory logging on top of loguru.

Messages below ERROR go to stderr in green, errors in red. ``BUNCA_LOG_LEVEL``
sets the console threshold (INFO by default). A training run adds a DEBUG file
sink inside its output directory through :func:`add_file_sink`.
"""

import os
import sys
from pathlib import Path
from typing import Optional

import click
from loguru import logger

LOG_FILE = "bunca.log"
_PREFIX = "{time:HH:mm:ss} | <level>{level: <7}</level> "
INFO_FORMAT = _PREFIX + "<green><b>{message}</b></green>"
ERROR_FORMAT = _PREFIX + "<red><b>{message}</b></red>"

_file_sinks = {}


def _below_error(record) -> bool:
    return record["level"].no < logger.level("ERROR").no


def configure_console(level: Optional[str] = None):
    """Replace every sink with the two stderr sinks."""
    level = (level or os.environ.get("BUNCA_LOG_LEVEL") or "INFO").upper()
    logger.remove()
    _file_sinks.clear()
    logger.add(
        sys.stderr,
        colorize=True,
        format=INFO_FORMAT,
        level=level,
        filter=_below_error,
    )
    logger.add(
        sys.stderr,
        colorize=True,
        format=ERROR_FORMAT,
        level="ERROR",
    )


def add_file_sink(out_dir) -> Path:
    """Also log DEBUG records to ``out_dir/bunca.log``; idempotent per directory."""
    path = Path(out_dir) / LOG_FILE
    if path not in _file_sinks:
        _file_sinks[path] = logger.add(str(path), rotation="5 MB", level="DEBUG")
    return path


def remove_file_sinks():
    for sink_id in _file_sinks.values():
        logger.remove(sink_id)
    _file_sinks.clear()


configure_console()


def debug(ctx):
    logger.debug(ctx)


def info(ctx):
    logger.info(ctx)


def warning(ctx):
    logger.warning(ctx)


def error(ctx):
    """Echo in red for the user, keep the full record in the debug log."""
    click.secho(ctx, fg="red", bold=True, err=True)
    logger.debug(ctx)


class DebugMixin:
    """``[name] message`` logging for services; ``name`` defaults to the class name."""

    def _tagged(self, msg) -> str:
        return f"[{getattr(self, 'name', type(self).__name__)}] {msg}"

    def debug(self, msg):
        debug(self._tagged(msg))

    def log(self, msg):
        info(self._tagged(msg))
