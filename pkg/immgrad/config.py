"""Configuration files for the command line interface.

A configuration file is a mapping in JSON, JSON5, or YAML. Its top-level keys provide defaults for every subcommand
that has an option of that name, and a nested mapping under a subcommand's name overrides them for that subcommand::

    {
        "seed": 7,
        "jobs": 4,
        "train": {"epochs": 300, "learning_rate": 0.02},
        "sweep": {"points": 50}
    }

Values become :mod:`argparse` defaults, so options given explicitly on the command line always win. Keys may be
spelled with dashes or underscores.

New formats are registered simply by subclassing :class:`ConfigFormat`.

"""

import json
import logging
import os
from abc import ABCMeta, abstractmethod
from argparse import ArgumentParser
from typing import Any, Dict, Iterable, Mapping, Optional, Set

import json5
import yaml

from .errors import ConfigurationError, DatasetIOError


log = logging.getLogger(__name__)

JOBS_ENVIRONMENT_VARIABLE: str = 'IMMGRAD_JOBS'

FORMATS_BY_NAME: Dict[str, 'ConfigFormat'] = {}
FORMATS_BY_EXTENSION: Dict[str, 'ConfigFormat'] = {}


class ConfigFormatWatcher(ABCMeta):
    """Metaclass of :class:`ConfigFormat` that instantiates and registers every subclass."""

    def __init__(cls, name, bases, clsdict):
        super().__init__(name, bases, clsdict)
        if len(cls.mro()) > 2:
            instance = cls()
            assert instance.name in FORMATS_BY_NAME


class ConfigFormat(metaclass=ConfigFormatWatcher):
    """Abstract base class of configuration file formats."""

    def __init__(self, name: str, *extensions: str):
        """Registers a format.

        Args:
            name: The name of the format, used with ``--config-format``.
            *extensions: File extensions, including the dot, that select this format.

        """
        self.name: str = name
        self.extensions = extensions
        FORMATS_BY_NAME[name] = self
        for extension in extensions:
            FORMATS_BY_EXTENSION[extension] = self

    @abstractmethod
    def loads(self, text: str) -> Any:
        """Parses a document, raising :class:`ValueError` (or a subclass) if it is malformed."""
        raise NotImplementedError()

    def load(self, path: str) -> Any:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise DatasetIOError(f"Could not read {path}: {e.strerror or e!s}", path=path) from e
        try:
            return self.loads(text)
        except (ValueError, yaml.YAMLError) as e:
            raise ConfigurationError(f"{path} is not valid {self.name}: {e!s}") from e


class JSON(ConfigFormat):
    def __init__(self):
        super().__init__('json', '.json')

    def loads(self, text: str) -> Any:
        return json.loads(text)


class JSON5(ConfigFormat):
    def __init__(self):
        super().__init__('json5', '.json5')

    def loads(self, text: str) -> Any:
        return json5.loads(text)


class YAML(ConfigFormat):
    def __init__(self):
        super().__init__('yaml', '.yaml', '.yml')

    def loads(self, text: str) -> Any:
        return yaml.safe_load(text)


def get_format(path: str, name: Optional[str] = None) -> ConfigFormat:
    """Selects the format of :obj:`path` by :obj:`name`, or else by its extension.

    Raises:
        ConfigurationError: If the format is unknown.

    """
    if name is not None:
        if name not in FORMATS_BY_NAME:
            raise ConfigurationError(f"Unknown configuration format {name!r}; expected one of "
                                     f"{', '.join(sorted(FORMATS_BY_NAME))}", key='config_format')
        return FORMATS_BY_NAME[name]
    extension = os.path.splitext(path)[1].lower()
    if extension not in FORMATS_BY_EXTENSION:
        raise ConfigurationError(f"Cannot tell the format of {path} from its extension; expected one of "
                                 f"{', '.join(sorted(FORMATS_BY_EXTENSION))}")
    return FORMATS_BY_EXTENSION[extension]


def load_document(path: str, format_name: Optional[str] = None) -> Any:
    """Reads a JSON, JSON5, or YAML document."""
    return get_format(path, format_name).load(path)


def _normalize(key: str) -> str:
    return str(key).replace('-', '_')


class RunConfig:
    """Option defaults for the command line interface, read from a configuration file."""

    def __init__(self, defaults: Optional[Mapping[str, Any]] = None,
                 commands: Optional[Mapping[str, Mapping[str, Any]]] = None, path: Optional[str] = None):
        self.defaults: Dict[str, Any] = {_normalize(k): v for k, v in (defaults or {}).items()}
        """Defaults for every subcommand."""
        self.commands: Dict[str, Dict[str, Any]] = {
            command: {_normalize(k): v for k, v in values.items()} for command, values in (commands or {}).items()
        }
        """Per-subcommand overrides."""
        self.path: Optional[str] = path

    @classmethod
    def load(cls, path: str, command_names: Iterable[str], format_name: Optional[str] = None) -> 'RunConfig':
        """Reads a configuration file.

        Args:
            path: The file.
            command_names: The names of the subcommands; top-level mappings under these names are per-subcommand
                overrides.
            format_name: The file format; inferred from the extension if omitted.

        Raises:
            ConfigurationError: If the document is not a mapping.

        """
        document = load_document(path, format_name)
        if document is None:
            document = {}
        if not isinstance(document, dict):
            raise ConfigurationError(f"The configuration in {path} must be a mapping, not {type(document).__name__}")
        command_names = set(command_names)
        defaults = {}
        commands = {}
        for key, value in document.items():
            if key in command_names:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"The {key!r} section of {path} must be a mapping", key=key)
                commands[key] = value
            else:
                defaults[key] = value
        return cls(defaults, commands, path)

    def for_command(self, command: str) -> Dict[str, Any]:
        """The merged options for :obj:`command`."""
        merged = dict(self.defaults)
        merged.update(self.commands.get(command, {}))
        return merged

    def apply(self, parsers: Mapping[str, ArgumentParser], global_options: Iterable[str] = ()):
        """Installs the configured values as defaults of the subcommand parsers.

        Top-level keys are applied to every subcommand that has an option of that name, and must match an option of
        at least one subcommand. Keys in a subcommand's section must match one of its options.

        Raises:
            ConfigurationError: On an unknown key.

        """
        dests: Dict[str, Set[str]] = {
            command: {action.dest for action in parser._actions} for command, parser in parsers.items()
        }
        global_options = set(global_options)
        for key in self.defaults:
            if key not in global_options and not any(key in d for d in dests.values()):
                raise ConfigurationError(f"Unknown configuration key {key!r} in {self.path}", key=key)
        for command, values in self.commands.items():
            for key in values:
                if key not in dests[command]:
                    raise ConfigurationError(f"Unknown configuration key {key!r} for {command!r} in {self.path}",
                                             key=key)
        for command, parser in parsers.items():
            values = {key: value for key, value in self.for_command(command).items() if key in dests[command]}
            if values:
                parser.set_defaults(**values)


def default_jobs() -> int:
    """The default worker pool size, from the ``IMMGRAD_JOBS`` environment variable (default 1).

    Raises:
        ConfigurationError: If the variable is set but is not a positive integer.

    """
    value = os.environ.get(JOBS_ENVIRONMENT_VARIABLE, '').strip()
    if not value:
        return 1
    try:
        jobs = int(value)
    except ValueError:
        jobs = 0
    if jobs < 1:
        raise ConfigurationError(f"{JOBS_ENVIRONMENT_VARIABLE} must be a positive integer, not {value!r}",
                                 key=JOBS_ENVIRONMENT_VARIABLE)
    return jobs
