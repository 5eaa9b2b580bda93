"""
Logging set-up: stdlib dictConfig from ``src/logging.json`` with structlog on top.
"""

import json
import logging
import logging.config
from pathlib import Path
from typing import Optional

import structlog

LOGGING_FILE = Path(__file__).resolve().parent.parent / "logging.json"

_SHARED_PROCESSORS = [
    structlog.contextvars.merge_contextvars,
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_logger_name,
    structlog.processors.TimeStamper(fmt="iso"),
]


def console_formatter() -> structlog.stdlib.ProcessorFormatter:
    return structlog.stdlib.ProcessorFormatter(
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        foreign_pre_chain=_SHARED_PROCESSORS,
    )


def json_formatter() -> structlog.stdlib.ProcessorFormatter:
    return structlog.stdlib.ProcessorFormatter(
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(sort_keys=True),
        ],
        foreign_pre_chain=_SHARED_PROCESSORS,
    )


def setup_logging(level: str = "info", fmt: str = "pretty", log_file: Optional[str] = None) -> None:
    """Configure stdlib logging and route structlog events through it."""
    with open(LOGGING_FILE, "r", encoding="utf-8") as f:
        config = json.load(f)

    level_name = level.upper()
    config["handlers"]["console"]["formatter"] = "json" if fmt == "json" else "pretty"
    config["handlers"]["console"]["level"] = level_name
    config["root"]["level"] = level_name

    if log_file:
        config["handlers"]["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": level_name,
            "formatter": "json",
            "filename": log_file,
            "maxBytes": 10485760,
            "backupCount": 5,
        }
        config["root"]["handlers"].append("file")

    logging.config.dictConfig(config)

    structlog.configure(
        processors=_SHARED_PROCESSORS + [
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
