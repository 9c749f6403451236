r"""Implement file utilities shared by the command-line front end."""

from __future__ import annotations

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "canonical_json",
    "file_sha256",
    "to_plain",
]

import hashlib
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


def to_plain(value: Any) -> Any:
    r"""Convert a value to JSON-compatible Python values.

    Arrays become nested lists, numpy scalars become Python scalars,
    complex numbers become ``[re, im]`` pairs and non-finite floats
    become ``None``.

    Args:
        value: The value to convert.

    Returns:
        The converted value.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.utils import to_plain
    >>> to_plain({"a": np.array([1.0, float("nan")]), "b": 1 + 2j})
    {'a': [1.0, None], 'b': [1.0, 2.0]}

    ```
    """
    if isinstance(value, dict):
        return {str(key): to_plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.generic):
        return to_plain(value.item())
    if isinstance(value, complex):
        return [to_plain(value.real), to_plain(value.imag)]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def canonical_json(value: Any, indent: int | None = None) -> str:
    r"""Serialize a value to JSON with sorted keys.

    Args:
        value: The value to serialize. It goes through ``to_plain``
            first.
        indent: The indentation. ``None`` gives the compact form.

    Returns:
        The JSON text.

    Example usage:

    ```pycon
    >>> from covisac.utils import canonical_json
    >>> canonical_json({"b": 1, "a": float("inf")})
    '{"a":null,"b":1}'

    ```
    """
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(
        to_plain(value), sort_keys=True, indent=indent, separators=separators, allow_nan=False
    )


def file_sha256(path: Path | str) -> str:
    r"""Compute the SHA-256 digest of a file.

    Args:
        path: The file path.

    Returns:
        The hexadecimal digest.
    """
    digest = hashlib.sha256()
    with Path(path).open("rb") as file:
        for chunk in iter(lambda: file.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: Path | str, data: bytes) -> Path:
    r"""Write a file atomically.

    The data goes to a temporary file of the target directory, which
    then replaces the target. The parent directories are created if
    needed.

    Args:
        path: The target path.
        data: The file content.

    Returns:
        The target path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as file:
            file.write(data)
            file.flush()
            os.fsync(file.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path} ({len(data):,} bytes)")
    return path


def atomic_write_text(path: Path | str, text: str) -> Path:
    r"""Write a UTF-8 text file atomically.

    Args:
        path: The target path.
        text: The file content.

    Returns:
        The target path.

    Example usage:

    ```pycon
    >>> import tempfile
    >>> from pathlib import Path
    >>> from covisac.utils import atomic_write_text
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     path = atomic_write_text(Path(tmp) / "out" / "a.txt", "hello")
    ...     path.read_text()
    ...
    'hello'

    ```
    """
    return atomic_write_bytes(path, text.encode("utf-8"))
