"""
Helpers: flat key-value configuration files

A configuration file holds one ``dotted.key = value`` pair per line.
Blank lines and lines starting with ``#`` are ignored; the last
occurrence of a key wins.
"""

import os
from typing import Iterable

from asac_tool.errors import ConfigError


def parse_config_text(text: str, source: str = "<text>") -> dict[str, str]:
    """
    Parse configuration text into a flat mapping.
    :param text: The configuration text.
    :param source: Name used in error messages.
    :return: Keys mapped to raw string values.
    """
    values: dict[str, str] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, separator, value = stripped.partition("=")
        key = key.strip()
        if not separator or not key or " " in key:
            raise ConfigError(
                f"{source}:{line_number}: expected 'key = value', "
                f"got '{stripped}'"
            )
        values[key] = value.strip()
    return values


def read_config_file(path: str) -> dict[str, str]:
    """
    Read and parse a configuration file.
    :param path: Path to the file.
    :return: Keys mapped to raw string values.
    """
    if not path:
        raise ConfigError("The configuration path is invalid or null.")
    if not os.path.isfile(path):
        raise ConfigError(f"Configuration file '{path}' does not exist.")
    with open(path, "r", encoding="utf-8") as file:
        return parse_config_text(file.read(), source=path)


def parse_overrides(pairs: Iterable[str] | None) -> dict[str, str]:
    """
    Parse ``key=value`` command-line overrides.
    """
    overrides: dict[str, str] = {}
    for pair in pairs or ():
        key, separator, value = pair.partition("=")
        if not separator or not key.strip():
            raise ConfigError(f"Override '{pair}' is not 'key=value'.")
        overrides[key.strip()] = value.strip()
    return overrides


def format_config(values: dict[str, str]) -> str:
    """
    Render a mapping back to configuration text, keys sorted.
    """
    return "".join(f"{key} = {values[key]}\n" for key in sorted(values))
