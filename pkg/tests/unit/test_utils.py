from __future__ import annotations

import hashlib
import json
from typing import TYPE_CHECKING
from unittest.mock import patch

import numpy as np
import pytest

from covisac.utils import (
    atomic_write_bytes,
    atomic_write_text,
    canonical_json,
    file_sha256,
    to_plain,
)

if TYPE_CHECKING:
    from pathlib import Path

##############################
#     Tests for to_plain     #
##############################


def test_to_plain_nested() -> None:
    value = {"a": (np.int64(3), np.float32(0.5)), 1: [np.array([[1, 2]])]}
    assert to_plain(value) == {"a": [3, 0.5], "1": [[[1, 2]]]}


def test_to_plain_complex_array() -> None:
    assert to_plain(np.array([1 + 2j, -1j])) == [[1.0, 2.0], [0.0, -1.0]]


@pytest.mark.parametrize("value", [float("nan"), float("inf"), -float("inf"), np.nan])
def test_to_plain_non_finite(value: float) -> None:
    assert to_plain(value) is None


def test_to_plain_keeps_scalars() -> None:
    assert to_plain("text") == "text"
    assert to_plain(True) is True
    assert to_plain(None) is None


####################################
#     Tests for canonical_json     #
####################################


def test_canonical_json_sorted_compact() -> None:
    assert canonical_json({"b": [1, 2], "a": {"d": 1.5, "c": None}}) == (
        '{"a":{"c":null,"d":1.5},"b":[1,2]}'
    )


def test_canonical_json_indent() -> None:
    text = canonical_json({"b": 1, "a": 2}, indent=2)
    assert text == '{\n  "a": 2,\n  "b": 1\n}'
    assert json.loads(text) == {"a": 2, "b": 1}


def test_canonical_json_stable_across_key_order() -> None:
    assert canonical_json({"x": 1, "y": 2}) == canonical_json({"y": 2, "x": 1})


#################################
#     Tests for file_sha256     #
#################################


def test_file_sha256(tmp_path: Path) -> None:
    path = tmp_path / "data.bin"
    path.write_bytes(b"covisac")
    assert file_sha256(path) == hashlib.sha256(b"covisac").hexdigest()


def test_file_sha256_large_file(tmp_path: Path) -> None:
    data = bytes(range(256)) * 1000
    path = tmp_path / "large.bin"
    path.write_bytes(data)
    assert file_sha256(path) == hashlib.sha256(data).hexdigest()


##################################
#     Tests for atomic_write     #
##################################


def test_atomic_write_bytes_creates_parents(tmp_path: Path) -> None:
    path = atomic_write_bytes(tmp_path / "a" / "b" / "out.bin", b"\x00\x01")
    assert path.read_bytes() == b"\x00\x01"


def test_atomic_write_bytes_replaces(tmp_path: Path) -> None:
    path = tmp_path / "out.txt"
    path.write_text("old")
    atomic_write_bytes(path, b"new")
    assert path.read_text() == "new"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.txt"]


def test_atomic_write_bytes_failure_leaves_target(tmp_path: Path) -> None:
    path = tmp_path / "out.txt"
    path.write_text("old")
    with patch("covisac.utils.os.replace", side_effect=OSError("disk full")), pytest.raises(
        OSError, match="disk full"
    ):
        atomic_write_bytes(path, b"new")
    assert path.read_text() == "old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.txt"]


def test_atomic_write_text_utf8(tmp_path: Path) -> None:
    path = atomic_write_text(tmp_path / "out.txt", "µ = 0.0276\n")
    assert path.read_bytes() == "µ = 0.0276\n".encode()
