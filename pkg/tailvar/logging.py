"""structlog setup for the command line.

Log lines go to stderr as JSON (``TAILVAR_LOG_FORMAT=console`` for a
human-readable renderer).  stdout and the report files never carry log
output.
"""

from __future__ import annotations

import logging
import os
import sys
from typing import TextIO

import structlog

from tailvar.errors import ConfigError

LOG_FORMAT_ENV = "TAILVAR_LOG_FORMAT"


def configure(verbose: bool = False, stream: TextIO | None = None) -> None:
    fmt = os.environ.get(LOG_FORMAT_ENV, "json").strip().lower()
    if fmt == "json":
        renderer = structlog.processors.JSONRenderer()
    elif fmt == "console":
        renderer = structlog.dev.ConsoleRenderer(colors=False)
    else:
        raise ConfigError(f"unknown log format {fmt!r}", LOG_FORMAT_ENV)

    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        context_class=dict,
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.DEBUG if verbose else logging.INFO
        ),
        logger_factory=structlog.PrintLoggerFactory(file=stream or sys.stderr),
        cache_logger_on_first_use=False,
    )
