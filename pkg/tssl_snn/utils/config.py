import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from ..errors import ConfigurationError

__all__ = ["BaseTaskConfig", "read_config_file"]


@dataclass
class BaseTaskConfig(ABC):
    """Base configuration class for all tasks.

    This class provides common properties and methods shared across all task configurations.
    """

    # Meta properties - subclasses must override config_type
    config_type: str = field(init=False)

    @property
    @abstractmethod
    def task_dir(self) -> str:
        """Return the task directory name."""
        pass

    @property
    def name(self) -> str:
        """Return a human-readable task name."""
        return (self.task_dir).replace("_", " ").title()

    @property
    @abstractmethod
    def runner(self) -> Callable:
        """Return the task runner function."""
        pass

    def to_dict(self) -> dict:
        """Plain-data view of the config (tuples become lists)."""

        def plain(v):
            if isinstance(v, (tuple, list)):
                return [plain(x) for x in v]
            return v

        return {k: plain(v) for k, v in asdict(self).items()}

    # Output
    output_dir: Optional[str] = None


def read_config_file(path: str, sections: dict) -> dict:
    """
    Read a sectioned ``key = value`` config file into a flat dict.

    `sections` maps each allowed section name to the keys it may hold. Keys
    outside their section, unknown keys, unknown sections and top-level keys
    are rejected.
    """
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}")

    owner = {key: section for section, keys in sections.items() for key in keys}
    flat = {}
    for section, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigurationError(
                f"{path}: top-level key {section!r} must live in a [section]"
            )
        if section not in sections:
            raise ConfigurationError(
                f"{path}: unknown section [{section}] "
                f"(expected one of {', '.join(sections)})"
            )
        for key, value in body.items():
            if key not in owner:
                raise ConfigurationError(f"{path}: unknown key {section}.{key}")
            if owner[key] != section:
                raise ConfigurationError(
                    f"{path}: key {key!r} belongs in [{owner[key]}], not [{section}]"
                )
            flat[key] = value
    return flat
