"""
Logging Setup Module
Configures the root logger once per process: a colored console handler
and, optionally, a plain-text file handler.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import colorlog

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

_COLORS = {
    'DEBUG': 'cyan',
    'INFO': 'green',
    'WARNING': 'yellow',
    'ERROR': 'red',
    'CRITICAL': 'bold_red',
}

_FILE_HANDLER_NAME = 'fxdarts-file'


def setup_logging(level: Union[str, int] = 'INFO', log_file: Optional[Path] = None) -> logging.Logger:
    """
    Set up console (and file) logging on the root logger.

    Calling this again replaces the previous handlers, so a command can
    redirect the file log into its run directory once that is known.

    Args:
        level: Logging level name or number
        log_file: Optional path of a log file (parent directory is created)

    Returns:
        The root logger
    """
    root = logging.getLogger()
    root.setLevel(level.upper() if isinstance(level, str) else level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console = colorlog.StreamHandler()
    console.setFormatter(colorlog.ColoredFormatter(
        '%(log_color)s' + LOG_FORMAT,
        datefmt=DATE_FORMAT,
        log_colors=_COLORS,
    ))
    root.addHandler(console)

    if log_file is not None:
        add_file_handler(log_file)
    return root


def add_file_handler(log_file: Path) -> logging.Handler:
    """Attach (or replace) the plain-text file handler."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == _FILE_HANDLER_NAME:
            root.removeHandler(handler)
            handler.close()
    log_file = Path(log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.set_name(_FILE_HANDLER_NAME)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root.addHandler(file_handler)
    return file_handler
