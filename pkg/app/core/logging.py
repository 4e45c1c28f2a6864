"""
Logging configuration
"""

import logging
import sys
from typing import Optional

from app.core.config import settings


def setup_logging(level: Optional[str] = None):
    """Setup logging configuration"""

    # Log level based on environment, explicit argument wins
    if level is not None:
        log_level = getattr(logging, level.upper(), logging.INFO)
    elif settings.DEBUG:
        log_level = logging.DEBUG
    else:
        log_level = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # Records go to stdout as JSON lines, so logs use stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # File handler for production
    if settings.ENVIRONMENT == "production" or settings.LOG_FILE:
        file_handler = logging.FileHandler(settings.LOG_FILE or "tonellicrit.log")
        file_handler.setLevel(log_level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    logging.debug("Logging configured")
