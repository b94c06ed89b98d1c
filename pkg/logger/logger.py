"""Root logger configuration for the toolkit."""

import atexit
import json
import logging.config
import pathlib

try:
    from typing import override
except ImportError:  # Python < 3.12

    def override(method):
        return method


from get_settings import get_setting

root_path = pathlib.Path(__file__).parent.parent
log_dir = root_path / "logs"

# LogRecord attributes that are not user-supplied `extra` fields.
_RECORD_ATTRS = set(
    logging.LogRecord("", 0, "", 0, "", None, None).__dict__
) | {"message", "asctime", "taskName"}

_configured = False


def setup_logging() -> None:
    global _configured
    if _configured:
        return
    log_dir.mkdir(exist_ok=True)
    config_path = root_path / "log_config" / "config.json"
    with open(config_path, "r", encoding="utf-8") as config_file:
        config = json.load(config_file)
    for handler in config["handlers"].values():
        if "filename" in handler:
            handler["filename"] = str(
                log_dir / pathlib.Path(handler["filename"]).name
            )
    level = get_setting("HVAC_MBRL_LOG_LEVEL")
    if level:
        config["handlers"]["stdout"]["level"] = level.upper()
    logging.config.dictConfig(config)
    queue_handler = logging.getHandlerByName("queue_handler")
    if queue_handler is not None:
        queue_handler.listener.start()  # type: ignore
        atexit.register(queue_handler.listener.stop)  # type: ignore
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger with the specified name.

    This logger will inherit from the root logger configuration.

    Args:
        name: The name of the logger (typically __name__ of the module)

    Returns:
        A configured logger instance
    """
    return logging.getLogger(name)


class JsonLineFormatter(logging.Formatter):
    """
    JSON-lines formatter. Structured fields passed through `extra=` are
    written next to the mapped record attributes.
    """

    def __init__(self, fmt_keys: dict[str, str] | None = None, **kwargs):
        super().__init__(**kwargs)
        self.fmt_keys = fmt_keys or {}

    @override
    def format(self, record: logging.LogRecord) -> str:
        log_record = {}

        if self.fmt_keys:
            for key, attr in self.fmt_keys.items():
                if attr == "asctime":
                    log_record[key] = self.formatTime(record, self.datefmt)
                else:
                    log_record[key] = getattr(record, attr, None)
        else:
            log_record = {
                "timestamp": self.formatTime(record, self.datefmt),
                "level": record.levelname,
                "logger": record.name,
            }

        log_record["message"] = record.getMessage()

        for key, value in record.__dict__.items():
            if key not in _RECORD_ATTRS and key not in log_record:
                log_record[key] = value

        if record.exc_info:
            log_record["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_record, default=str)
