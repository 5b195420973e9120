import os
from dotenv import load_dotenv

load_dotenv()

ASMFS_LOG = os.environ.get("ASMFS_LOG", "warn").lower()

ENABLE_FILE_LOGGING = os.environ.get("ENABLE_FILE_LOGGING", "False").lower() == 'true'
LOG_DIRECTORY = os.environ.get("ASMFS_LOG_DIR", "logs")

ASMFS_VERSION = os.environ.get("ASMFS_VERSION", "asmfs v0.3.0")

# ASMFS_LOG values mapped onto logging level names
LOG_LEVELS = {
    "error": "ERROR",
    "warn": "WARNING",
    "warning": "WARNING",
    "info": "INFO",
    "debug": "DEBUG",
}
