from dataclasses import asdict, dataclass
from enum import Enum
import logging
import sys

from shared.environment_variables import ASMFS_LOG, LOG_LEVELS

ROOT_LOGGER_NAME = "asmfs"
CONSOLE_FORMAT = "%(asctime)s | %(levelname)s | %(message)s"

class LogLevel(Enum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"

    @classmethod
    def from_env(cls, value: str) -> "LogLevel":
        """Map an ASMFS_LOG value (error/warn/info/debug) to a level."""
        try:
            return cls(LOG_LEVELS[value.lower()])
        except KeyError:
            raise ValueError(f"unknown log level '{value}', expected one of error, warn, info, debug")

class LoggerType(Enum):
    Synth = "SYNTH"
    Fit = "FIT"
    Evaluate = "EVALUATE"
    Predict = "PREDICT"
    Sweep = "SWEEP"

@dataclass
class LogEntry():
    timestamp: float
    logger: str
    level: str
    message: str
    module: str
    filename: str
    lineno: int

    @classmethod
    def from_record(cls, record: logging.LogRecord) -> "LogEntry":
        return cls(
            timestamp=record.created,
            logger=record.name,
            level=record.levelname,
            message=record.getMessage(),
            module=record.module,
            filename=record.filename,
            lineno=record.lineno,
        )

    def to_dict(self):
        return asdict(self)

class JSONFormatter(logging.Formatter):
    """Renders a record as a LogEntry dict; handlers serialise it themselves."""

    def format(self, record):
        return LogEntry.from_record(record).to_dict()


def get_logger(module: str) -> logging.Logger:
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{module}")


def configure_logging(level: str = ASMFS_LOG) -> logging.Logger:
    """Attach a single stderr handler to the package logger at the requested level."""
    console_level = logging.getLevelName(LogLevel.from_env(level).value)
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    # warnings must still reach the recorder when the console is quieter
    logger.setLevel(min(console_level, logging.WARNING))
    console = next((h for h in logger.handlers if getattr(h, "_asmfs_console", False)), None)
    if console is None:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        console._asmfs_console = True
        logger.addHandler(console)
    console.setLevel(console_level)
    return logger
