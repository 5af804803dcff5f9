import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from reconlab.tensorio import (
    MAGIC, Cine, TensorFormatError, load_tensor, normalize01, read_tensor, rng_stream,
    save_tensor, write_tensor,
)


def test_zeros_round_trip(tmp_path):
    x = np.zeros((2, 3, 4), np.float32)
    save_tensor(tmp_path / "z.rct", x)
    y = load_tensor(tmp_path / "z.rct")
    assert y.dtype == np.float32 and y.shape == (2, 3, 4)
    assert np.array_equal(x, y)


def test_cine_sized_round_trip(tmp_path, rng):
    x = rng.random((20, 128, 128), dtype=np.float32)
    save_tensor(tmp_path / "c.rct", x)
    assert np.array_equal(load_tensor(tmp_path / "c.rct"), x)


def test_complex_round_trip_bit_exact(tmp_path, rng):
    x = (rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))).astype(np.complex64)
    save_tensor(tmp_path / "k.rct", x)
    y = load_tensor(tmp_path / "k.rct")
    assert y.dtype == np.complex64
    assert x.tobytes() == y.tobytes()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=6),
                  elements=st.floats(width=32, allow_nan=False)))
def test_round_trip_property(x):
    buf = io.BytesIO()
    write_tensor(buf, x)
    buf.seek(0)
    y = read_tensor(buf)
    assert y.shape == x.shape and x.tobytes() == y.tobytes()


def test_header_layout():
    buf = io.BytesIO()
    write_tensor(buf, np.zeros((2, 3), np.float32))
    raw = buf.getvalue()
    assert raw[:8] == MAGIC
    assert raw[8] == 0 and raw[9] == 2
    assert struct.unpack("<2I", raw[10:18]) == (2, 3)
    assert len(raw) == 18 + 6 * 4


def test_wrong_magic_rejected(tmp_path):
    p = tmp_path / "bad.rct"
    p.write_bytes(b"NOTATNSR" + bytes(10))
    with pytest.raises(TensorFormatError):
        load_tensor(p)


def test_truncated_payload_rejected():
    buf = io.BytesIO()
    write_tensor(buf, np.ones((4, 4), np.float32))
    with pytest.raises(TensorFormatError):
        read_tensor(io.BytesIO(buf.getvalue()[:-3]))


def test_unknown_dtype_code_rejected():
    raw = MAGIC + bytes([7, 1]) + struct.pack("<I", 1) + bytes(4)
    with pytest.raises(TensorFormatError):
        read_tensor(io.BytesIO(raw))


def test_normalize01_examples():
    assert np.allclose(normalize01(np.array([2.0, 4.0, 6.0])), [0, 0.5, 1])
    assert np.all(normalize01(np.full((2, 3, 3), 5.0)) == 0)
    x = np.array([[[0.0, 0.25], [1.0, 0.5]]])
    assert np.array_equal(normalize01(x), x.astype(np.float32))


def test_normalize01_idempotent_and_cine(rng):
    c = Cine(rng.normal(size=(3, 4, 4)))
    n1 = normalize01(c)
    assert isinstance(n1, Cine)
    assert n1.data.min() == 0 and n1.data.max() == 1
    assert np.array_equal(normalize01(n1).data, n1.data)


def test_cine_validation():
    with pytest.raises(ValueError):
        Cine(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        Cine(np.full((1, 2, 2), np.nan))
    c = Cine(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        c.data[0, 0, 0] = 1.0


def test_rng_streams_reproducible_and_distinct():
    a = rng_stream(42, "phantom", 3).standard_normal(8)
    b = rng_stream(42, "phantom", 3).standard_normal(8)
    c = rng_stream(42, "noise", 3).standard_normal(8)
    d = rng_stream(43, "phantom", 3).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)
    with pytest.raises(ValueError):
        rng_stream(2**64)
