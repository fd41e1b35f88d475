"""
Structured Logging Module with JSON Formatter
Provides consistent logging across training, decoding and the CLI
"""

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from config_env import config


class JSONFormatter(logging.Formatter):
    """Custom JSON formatter for structured logging"""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON"""
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
            "thread": record.threadName,
        }

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        if hasattr(record, 'extra_data'):
            log_data.update(record.extra_data)

        return json.dumps(log_data, default=str)


class StandardFormatter(logging.Formatter):
    """Human-readable formatter for development"""

    def __init__(self):
        super().__init__(
            fmt='%(asctime)s | %(levelname)-8s | %(name)s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )


def setup_logger(name: str = "captioner") -> logging.Logger:
    """
    Setup logger with appropriate formatter based on environment

    Records go to stderr; stdout is reserved for CLI result streams.

    Args:
        name: Logger name

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Avoid adding handlers multiple times
    if logger.handlers:
        return logger

    logger.setLevel(getattr(logging, str(config.LOG_LEVEL).upper(), logging.INFO))
    logger.propagate = False

    handler = logging.StreamHandler(sys.stderr)
    if config.DEBUG:
        handler.setFormatter(StandardFormatter())
    else:
        handler.setFormatter(JSONFormatter())

    logger.addHandler(handler)

    return logger


def fields(**values: Any) -> Dict[str, Any]:
    """`extra` argument carrying structured fields on one record only"""
    return {"extra_data": values}


# Global logger instance
logger = setup_logger("captioner")


def log_epoch(report: Dict[str, Any]):
    """Log an epoch summary"""
    logger.info(
        f"Epoch {report.get('epoch')} (step {report.get('stage')}): "
        f"xe={report.get('mean_xe', 0.0):.4f} rl={report.get('mean_rl', 0.0):.4f} "
        f"trained={report.get('trained')} skipped={report.get('skipped')}",
        extra=fields(**report),
    )


def log_gate_decision(video_id: str, score: float, threshold: float, decision: str):
    """Log a step-2 gating decision"""
    logger.debug(
        f"Gate {decision}: {video_id} score={score:.4f} threshold={threshold}",
        extra=fields(video_id=video_id, score=score, threshold=threshold, decision=decision),
    )


def log_checkpoint(action: str, path: str, step: int):
    logger.info(f"Checkpoint {action}: {path} (step {step})", extra=fields(action=action, path=path, step=step))


def log_error(error: Exception, context: Optional[Dict[str, Any]] = None):
    """Log an error with context"""
    logger.error(
        f"Error occurred: {error}",
        exc_info=True,
        extra=fields(error_type=type(error).__name__, context=context or {}),
    )
