"""JSON structured logging configuration."""
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Optional

ROOT_LOGGER = "lane_emden"

# Numeric context accepted through ``extra=`` and copied into the JSON record.
CONTEXT_FIELDS = ("run", "p", "h", "k", "iteration", "residual", "step", "error_type")


class JSONFormatter(logging.Formatter):
    """Format log records as JSON with required fields."""

    def format(self, record: logging.LogRecord) -> str:
        log_entry: dict = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "service": record.name,
            "message": record.getMessage(),
        }
        for key in CONTEXT_FIELDS:
            if key in record.__dict__:
                log_entry[key] = record.__dict__[key]
        if record.exc_info and record.exc_info[0] is not None:
            log_entry["error_type"] = record.exc_info[0].__name__
            log_entry["error_detail"] = self.formatException(record.exc_info)
        return json.dumps(log_entry, ensure_ascii=False, default=str)


def _root() -> logging.Logger:
    root = logging.getLogger(ROOT_LOGGER)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(JSONFormatter())
        root.addHandler(handler)
        root.propagate = False
        level_name = os.getenv("LANE_EMDEN_LOG_LEVEL", "INFO").upper()
        root.setLevel(getattr(logging, level_name, logging.INFO))
    return root


def set_level(level_name: str) -> None:
    """Set the level of every lab logger (CLI ``--log`` flag)."""
    _root().setLevel(getattr(logging, level_name.upper(), logging.INFO))


def setup_logging(service_name: str = "lab", level: Optional[str] = None) -> logging.Logger:
    """Configure and return a JSON structured logger below the lab root."""
    root = _root()
    if level is not None:
        root.setLevel(getattr(logging, level.upper(), logging.INFO))
    return logging.getLogger(f"{ROOT_LOGGER}.{service_name}")
