from __future__ import annotations

import logging
import logging.handlers
import queue
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union

_LOGGER_NAME = "uadan"
_FORMAT = "%(asctime)s [%(levelname)s] %(processName)s %(name)s: %(message)s"
_DATEFMT = "%Y-%m-%d %H:%M:%S"

_log_queue: queue.Queue[logging.LogRecord] = queue.Queue()
_listener: Optional[logging.handlers.QueueListener] = None


def _formatter() -> logging.Formatter:
    return logging.Formatter(fmt=_FORMAT, datefmt=_DATEFMT)


def setup_logger(
    log_path: Union[str, Path] = "logs/uadan.log",
    level: int = logging.INFO,
    console: bool = False,
) -> logging.Logger:
    """Install the queue-backed "uadan" logger. Idempotent per process.

    Records go through a QueueHandler so training threads never block on
    file I/O; the listener owns the file handler and the optional console.
    """
    global _listener

    logger = logging.getLogger(_LOGGER_NAME)

    if any(isinstance(h, logging.handlers.QueueHandler) for h in logger.handlers):
        return logger

    logger.setLevel(level)
    logger.propagate = False

    Path(log_path).parent.mkdir(parents=True, exist_ok=True)

    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    file_handler.setLevel(level)
    file_handler.setFormatter(_formatter())

    handlers: list[logging.Handler] = [file_handler]

    if console:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(_formatter())
        handlers.append(console_handler)

    queue_handler = logging.handlers.QueueHandler(_log_queue)
    queue_handler.setLevel(level)

    logger.addHandler(queue_handler)

    _listener = logging.handlers.QueueListener(
        _log_queue,
        *handlers,
        respect_handler_level=True,
    )
    _listener.start()

    return logger


def get_logger() -> logging.Logger:
    return logging.getLogger(_LOGGER_NAME)


@contextmanager
def run_log(run_dir: Union[str, Path], level: int = logging.INFO) -> Iterator[logging.Logger]:
    """Mirror everything logged inside the block into `<run_dir>/run.log`.

    Grid commands wrap each cell with this so every run directory carries
    its own log next to its checkpoints and history.
    """
    logger = get_logger()
    path = Path(run_dir) / "run.log"
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(_formatter())
    if logger.level == logging.NOTSET or logger.level > level:
        logger.setLevel(level)
    logger.addHandler(handler)
    try:
        yield logger
    finally:
        logger.removeHandler(handler)
        handler.close()


def stop_logger() -> None:
    global _listener

    if _listener is not None:
        _listener.stop()
        _listener = None

    logger = logging.getLogger(_LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
