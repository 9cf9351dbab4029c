import logging
import os

ROOT_LOGGER_NAME = "faultsim"
LOG_LEVEL_ENV_VAR = "FAULTSIM_LOG"


def get_module_logger(name):
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def configure_from_env(environ=None) -> int:
    """Set up the root faultsim logger with a level read from FAULTSIM_LOG.

    Only meant for entrypoints like the CLI. Library code never adds handlers.

    Returns
    -------
    int
        The logging level that was set
    """
    environ = os.environ if environ is None else environ
    root = logging.getLogger(ROOT_LOGGER_NAME)
    requested = environ.get(LOG_LEVEL_ENV_VAR, "INFO").upper()
    level = logging.getLevelName(requested)
    unknown = not isinstance(level, int)
    if unknown:
        level = logging.INFO

    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
        )
        root.addHandler(handler)
    root.setLevel(level)
    if unknown:
        root.warning(
            f'Unknown {LOG_LEVEL_ENV_VAR} value "{requested}". Using INFO'
        )
    return level
