import datetime
import json
import logging
import os
import threading

from shared.environment_variables import ENABLE_FILE_LOGGING, LOG_DIRECTORY
from shared.log_data import JSONFormatter, LoggerType, ROOT_LOGGER_NAME

MAX_LOG_SIZE = 500


def register_warning_recorder(logger_type: LoggerType, logger=None) -> "WarningRecorder":
    """Attach a fresh WarningRecorder to the package logger for one command run."""
    logger = logger or logging.getLogger(ROOT_LOGGER_NAME)
    recorder = WarningRecorder(logger_type)
    recorder.setLevel(logging.WARNING)
    recorder.setFormatter(JSONFormatter())
    logger.addHandler(recorder)
    logger.debug(f"LOGGING | {logger_type.value} | Warning recorder registered, file logging enabled: {ENABLE_FILE_LOGGING}")
    return recorder


class WarningRecorder(logging.Handler):
    """Caches WARNING+ entries so they can be embedded in output artifacts."""

    def __init__(self, logger_type: LoggerType):
        super().__init__()
        self.logger_type = logger_type
        self.entries = []
        self.file_cache = []
        self.cache_lock = threading.Lock()

    def write_entries(self, log_entries: list):
        if not ENABLE_FILE_LOGGING or not log_entries:
            return
        try:
            log_dir = os.path.join(LOG_DIRECTORY, self.logger_type.value)
            os.makedirs(log_dir, exist_ok=True)
            # microsecond precision so flushes within the same second append to distinct files
            timestamp = datetime.datetime.now().strftime('%Y%m%d_%H%M%S_%f')
            file_path = os.path.join(log_dir, f"{timestamp}.log")
            with open(file_path, 'a') as f:
                for entry in log_entries:
                    f.write(json.dumps(entry) + '\n')
        except (OSError, TypeError) as e:
            # not routed through logging, that would recurse into this handler
            print(f"Failed to write log to file: {e}")

    def emit(self, record):
        log_entry = self.format(record)
        with self.cache_lock:
            self.entries.append(log_entry)
            self.file_cache.append(log_entry)
            if len(self.file_cache) > MAX_LOG_SIZE:
                self.write_entries(self.file_cache)
                self.file_cache = []

    def messages(self) -> list:
        """Deduplicated, sorted messages; independent of thread scheduling and wall clock."""
        with self.cache_lock:
            return sorted({entry["message"] for entry in self.entries})

    def close(self):
        with self.cache_lock:
            self.write_entries(self.file_cache)
            self.file_cache = []
        super().close()


def unregister_warning_recorder(recorder: WarningRecorder, logger=None):
    logger = logger or logging.getLogger(ROOT_LOGGER_NAME)
    logger.removeHandler(recorder)
    recorder.close()
