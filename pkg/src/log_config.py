"""
Logging setup shared by the CLI and long-running search jobs.
Library modules only call logging.getLogger(__name__); handlers are attached here.
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None, logfile: Optional[str] = None) -> None:
    """Attach a stream handler (and optionally a file handler) to the root logger"""
    level_name = (level or os.getenv("CHANNEL_FORGE_LOG_LEVEL") or "WARNING").upper()
    handlers = [logging.StreamHandler()]
    if logfile:
        os.makedirs(os.path.dirname(os.path.abspath(logfile)), exist_ok=True)
        handlers.append(logging.FileHandler(logfile, encoding="utf-8"))
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING),
                        format=LOG_FORMAT, handlers=handlers, force=True)