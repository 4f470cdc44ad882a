"""Container format: bit-exact round trips and corruption errors."""

import numpy as np
import pytest

from statediag.container import load_container, save_container
from statediag.errors import ParseError


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a/w": rng.standard_normal((3, 4)).astype(np.float32),
        "a/b": rng.standard_normal((1, 4)),
        "stats": np.array([[1.0, 2.0, 3.0]]),
    }
    meta = {"kind": "checkpoint", "nested": {"x": 1, "y": [1.5, "z"]}}
    path = tmp_path / "c.bin"
    save_container(path, tensors, meta)
    loaded, got_meta = load_container(path)
    assert got_meta == meta
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].dtype == tensors[k].dtype
        assert np.array_equal(loaded[k], tensors[k])
        assert loaded[k].tobytes() == tensors[k].tobytes()


def test_save_twice_is_byte_identical(tmp_path):
    tensors = {"x": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    save_container(p1, tensors, {"v": 1})
    save_container(p2, tensors, {"v": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not a container at all")
    with pytest.raises(ParseError, match="magic"):
        load_container(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "c.bin"
    save_container(p, {"x": np.ones((4, 4))}, {})
    data = p.read_bytes()
    p.write_bytes(data[:-16])
    with pytest.raises(ParseError, match="truncated"):
        load_container(p)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(ParseError, match="dtype"):
        save_container(tmp_path / "c.bin", {"x": np.ones((2, 2), dtype=np.float16)}, {})
