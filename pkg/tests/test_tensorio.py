"""Binary tensor container: golden bytes, round-trips, corruption offsets."""

import io
import struct

import numpy as np
import pytest

from splitlatent.errors import FormatError
from splitlatent.tensorio import read_tensor, write_tensor


def roundtrip(arr):
    buf = io.BytesIO()
    write_tensor(buf, arr)
    buf.seek(0)
    out = read_tensor(buf)
    return buf, out


def test_golden_bytes_for_known_tensor():
    # magic, version=1, rank=2, dims (2,3) LE u32, six LE float32 values
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    buf = io.BytesIO()
    write_tensor(buf, arr)
    expected = b"FTTN" + bytes([1, 2]) + struct.pack("<2I", 2, 3)
    expected += struct.pack("<6f", 0, 1, 2, 3, 4, 5)
    assert buf.getvalue() == expected


@pytest.mark.parametrize(
    "shape", [(), (1,), (5,), (2, 3), (2, 3, 4), (1, 2, 3, 4)]
)
def test_roundtrip_bit_exact(shape):
    rng = np.random.default_rng(hash(shape) % 2**32)
    arr = rng.standard_normal(shape).astype(np.float32)
    _, out = roundtrip(arr)
    assert out.shape == arr.shape
    np.testing.assert_array_equal(out, arr)


def test_multiple_tensors_sequential():
    a = np.ones((2, 2), dtype=np.float32)
    b = np.arange(3, dtype=np.float32)
    buf = io.BytesIO()
    write_tensor(buf, a)
    write_tensor(buf, b)
    buf.seek(0)
    np.testing.assert_array_equal(read_tensor(buf), a)
    np.testing.assert_array_equal(read_tensor(buf), b)


def test_bad_magic_reports_offset():
    buf = io.BytesIO(b"JUNK" + bytes(16))
    with pytest.raises(FormatError) as exc:
        read_tensor(buf)
    assert exc.value.offset == 0
    assert "magic" in str(exc.value)


def test_bad_magic_offset_after_first_tensor():
    buf = io.BytesIO()
    write_tensor(buf, np.zeros(2, dtype=np.float32))
    first_len = buf.tell()
    buf.write(b"JUNKxxxx")
    buf.seek(0)
    read_tensor(buf)
    with pytest.raises(FormatError) as exc:
        read_tensor(buf)
    assert exc.value.offset == first_len


def test_version_mismatch_rejected():
    buf = io.BytesIO(b"FTTN" + bytes([9, 1]) + struct.pack("<I", 1) + struct.pack("<f", 0.0))
    with pytest.raises(FormatError) as exc:
        read_tensor(buf)
    assert "version" in str(exc.value)


def test_truncated_header_dims_payload():
    full = io.BytesIO()
    write_tensor(full, np.ones((2, 2), dtype=np.float32))
    raw = full.getvalue()
    for cut in (5, 8, len(raw) - 1):
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(raw[:cut]))


def test_float64_input_written_as_float32():
    arr = np.array([1.5, -2.25], dtype=np.float64)
    _, out = roundtrip(arr)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, arr.astype(np.float32))
