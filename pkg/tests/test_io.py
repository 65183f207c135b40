"""Deterministic serialization: canonical JSON, digests, CSV/JSON writers."""
import hashlib
import json
import os

import numpy as np
import pytest

from fieldtopo.io import (
    canonical_digest,
    canonical_json,
    format_cell,
    sha256_file,
    write_csv,
    write_json,
)


def test_format_cell():
    assert format_cell(True) == "1"
    assert format_cell(False) == "0"
    assert format_cell(np.bool_(True)) == "1"
    assert format_cell(5) == "5"
    assert format_cell(np.int64(-3)) == "-3"
    assert format_cell(0.5) == "0.5"
    assert format_cell(np.float64(1.0) / 3.0) == repr(1.0 / 3.0)
    assert format_cell("abc") == "abc"


def test_canonical_json_sorted_compact():
    text = canonical_json({"b": 1, "a": [1.5, True, None]})
    assert text == '{"a":[1.5,true,null],"b":1}'


def test_canonical_json_numpy_types():
    obj = {
        "arr": np.array([[1, 2], [3, 4]]),
        "i": np.int32(7),
        "f": np.float64(0.25),
        "flag": np.bool_(False),
    }
    back = json.loads(canonical_json(obj))
    assert back == {"arr": [[1, 2], [3, 4]], "i": 7, "f": 0.25, "flag": False}


def test_canonical_json_rejects_nan():
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})


def test_canonical_digest_order_independent():
    a = canonical_digest({"a": 1, "b": 2})
    b = canonical_digest({"b": 2, "a": 1})
    assert a == b
    assert a != canonical_digest({"a": 1, "b": 3})


def test_sha256_file(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"hello\n")
    assert sha256_file(path) == hashlib.sha256(b"hello\n").hexdigest()


def test_write_csv(tmp_path):
    path = tmp_path / "table.csv"
    write_csv(path, ["a", "b"], [(1, 0.5), (True, "x")],
              comments=("note: one", "note: two"))
    text = path.read_text()
    assert text == "# note: one\n# note: two\na,b\n1,0.5\n1,x\n"
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def test_write_json_creates_parents(tmp_path):
    path = tmp_path / "a" / "b" / "doc.json"
    write_json(path, {"z": np.float64(1.5), "a": [1, 2]})
    text = path.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == {"z": 1.5, "a": [1, 2]}
    # keys are sorted in the rendered text
    assert text.index('"a"') < text.index('"z"')
