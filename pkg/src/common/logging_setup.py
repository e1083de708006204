"""
Logging configuration
- Default to project_root/app_logs/subbandid.log (app_logs is sibling of src)
- Allow overrides via SUBBANDID_LOG_DIR and SUBBANDID_LOG_FILE
- Use size-based rotation and also log to console
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _project_root() -> str:
    # src/common/logging_setup.py -> src/common -> src -> project root
    return os.path.dirname(os.path.dirname(os.path.dirname(__file__)))


def _resolve_log_dir(log_dir: Optional[str] = None) -> str:
    if log_dir:
        return os.path.expanduser(log_dir)
    env_dir = os.environ.get('SUBBANDID_LOG_DIR')
    if env_dir:
        return os.path.expanduser(env_dir)
    # Default: sibling folder to src
    return os.path.join(_project_root(), 'app_logs')


def configure_logging(level: Optional[str] = None,
                      log_dir: Optional[str] = None,
                      log_file: Optional[str] = None,
                      max_bytes: int = 10 * 1024 * 1024,
                      backup_count: int = 5) -> str:
    """Install rotating file and console handlers on the root logger.

    Explicit arguments win over the SUBBANDID_LOG_* environment variables.
    Returns the path of the log file in use.
    """
    resolved_dir = _resolve_log_dir(log_dir)
    os.makedirs(resolved_dir, exist_ok=True)

    default_log_file = os.path.join(resolved_dir, 'subbandid.log')
    log_file = os.path.expanduser(log_file or os.environ.get('SUBBANDID_LOG_FILE', default_log_file))

    log_level = (level or os.environ.get('SUBBANDID_LOG_LEVEL', 'INFO')).upper()

    file_handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
    console_handler = logging.StreamHandler()

    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format=LOG_FORMAT,
        handlers=[file_handler, console_handler],
        force=True,
    )
    return log_file
