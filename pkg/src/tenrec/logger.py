import logging as log
import os
from logging.handlers import TimedRotatingFileHandler

from tenrec.constants import APP_NAME
from tenrec.constants import ENV_LOG_DIR

logging = log.getLogger(APP_NAME)

log_basename = "tenrec.txt"


def setup_logging(level=log.INFO, log_dir=None):
    """
    Configure console logging and, when a log directory is known, a
    daily-rotated log file. Only entry points call this; importing the
    library leaves logging configuration to the host application.
    """
    log.basicConfig(format="%(levelname)s: %(message)s", level=level)
    logging.setLevel(level)

    log_dir = log_dir or os.environ.get(ENV_LOG_DIR)
    if not log_dir:
        return None

    os.makedirs(log_dir, exist_ok=True)
    log_filename = os.path.join(log_dir, log_basename)
    for handler in logging.handlers:
        if getattr(handler, "baseFilename", None) == os.path.abspath(log_filename):
            return handler

    file_handler = TimedRotatingFileHandler(
        filename=log_filename, encoding="utf-8", when="midnight", backupCount=30
    )
    file_handler.setFormatter(
        log.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    logging.addHandler(file_handler)
    return file_handler
