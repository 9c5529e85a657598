import logging
import logging.config

from pythonjsonlogger import jsonlogger


def setup_logging(level: str = "INFO", json_format: bool = False):

    fmt = '%(asctime)s - %(levelname)s - %(name)s  - %(message)s'

    # Basic global logging
    logging.basicConfig(
        level=level,
        format=fmt,
    )

    # root logger
    logger = logging.getLogger()

    if json_format:
        # Swap the plain handlers for a JSON one
        log_handler = logging.StreamHandler()
        formatter = jsonlogger.JsonFormatter(
            '%(asctime)s %(levelname)s %(name)s %(message)s'
        )
        log_handler.setFormatter(formatter)
        logger.handlers = [log_handler]
    logger.setLevel(level)

    # Third-party loggers that are chatty at DEBUG
    for logger_name in ["matplotlib", "PIL", "nibabel"]:
        logging.getLogger(logger_name).setLevel(max(logging.INFO, logger.level))

    return logger
