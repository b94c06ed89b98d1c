import os
from typing import Optional

from dotenv import load_dotenv

_loaded = False


def get_setting(
    key_name: str, default: Optional[str] = None
) -> Optional[str]:
    """
    Retrieve a toolkit setting from the environment.

    The dotenv files `./.env` and `./secret/.env` are read once; variables
    already present in the process environment take precedence.

    Args:
        key_name: Name of the environment variable (e.g. HVAC_MBRL_OUT_DIR)
        default: Value returned when the variable is not set

    Returns:
        The setting value, or `default`
    """
    global _loaded
    if not _loaded:
        load_dotenv("./.env")
        load_dotenv("./secret/.env")
        _loaded = True
    value = os.getenv(key_name)
    if value is None or value == "":
        return default
    return value
