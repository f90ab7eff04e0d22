"""Reading and writing the JSON documents of immgrad: datasets, parameter files, training reports, and experiment
outcomes.

Documents are written with sorted keys and with floats in their shortest round-tripping representation, so the same
content always produces a byte-identical file and reloads bit-identically. Documents are read strictly as JSON, or as
`JSON5`_ if the file name ends in ``.json5``.

.. _JSON5:
    https://json5.org

"""

import json
import logging
import math
import os
from typing import Any

import json5
import numpy as np

from .errors import DataError, DatasetIOError


log = logging.getLogger(__name__)


def to_plain(obj: Any) -> Any:
    """Converts numpy scalars and arrays nested in :obj:`obj` to plain Python objects."""
    if isinstance(obj, dict):
        return {str(key): to_plain(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [to_plain(value) for value in obj]
    elif isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj: Any) -> str:
    """Serializes :obj:`obj` deterministically.

    Raises:
        DataError: If the document contains a non-finite float, which JSON cannot represent.

    """
    plain = to_plain(obj)
    try:
        return json.dumps(plain, sort_keys=True, indent=1, allow_nan=False) + '\n'
    except ValueError as e:
        raise DataError(f"Cannot serialize a non-finite number to JSON: {e!s}") from e


def save(obj: Any, path: str):
    """Writes :obj:`obj` to :obj:`path`.

    Raises:
        DatasetIOError: If the file cannot be written.

    """
    text = dumps(obj)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    except OSError as e:
        raise DatasetIOError(f"Could not write {path}: {e.strerror or e!s}", path=path) from e
    log.debug(f"Wrote {path}")


def loads(text: str, json5_syntax: bool = False, source: str = '<string>') -> Any:
    try:
        if json5_syntax:
            return json5.loads(text)
        return json.loads(text)
    except ValueError as e:
        raise DataError(f"{source} is not valid {'JSON5' if json5_syntax else 'JSON'}: {e!s}") from e


def load(path: str) -> Any:
    """Reads a JSON (or, for ``.json5`` files, JSON5) document.

    Raises:
        DatasetIOError: If the file cannot be read.
        DataError: If the file is not valid JSON.

    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise DatasetIOError(f"Could not read {path}: {e.strerror or e!s}", path=path) from e
    return loads(text, json5_syntax=path.lower().endswith('.json5'), source=path)


def require_finite(value: Any, what: str) -> float:
    """Parses a float that must be finite, raising :class:`immgrad.errors.DataError` otherwise."""
    try:
        number = float(value)
    except (TypeError, ValueError) as e:
        raise DataError(f"{what} must be a number, not {value!r}") from e
    if not math.isfinite(number):
        raise DataError(f"{what} must be finite, not {number!r}")
    return number
