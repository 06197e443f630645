"""Round trips and malformed-payload handling for the LTF1 tensor format."""

from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lesionvae import ltf


class TestRoundTrip:
    def test_float32_array(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((5, 7)).astype(np.float32)
        path = tmp_path / "a.ltf"
        ltf.write(path, arr)
        back = ltf.read(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_uint8_array(self, tmp_path):
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        path = tmp_path / "m.ltf"
        ltf.write(path, arr)
        back = ltf.read(path)
        assert back.dtype == np.uint8
        np.testing.assert_array_equal(back, arr)

    def test_bool_becomes_uint8(self):
        arr = np.array([[True, False], [False, True]])
        back = ltf.decode(ltf.encode(arr))
        assert back.dtype == np.uint8
        np.testing.assert_array_equal(back, arr.astype(np.uint8))

    def test_float64_narrows_to_float32(self):
        arr = np.array([1.0, 2.5, -3.25], dtype=np.float64)
        back = ltf.decode(ltf.encode(arr))
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr.astype(np.float32))

    def test_signed_int_stored_as_float32(self):
        arr = np.array([[-3, 0], [7, 12]], dtype=np.int64)
        back = ltf.decode(ltf.encode(arr))
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr.astype(np.float32))

    def test_scalar_rank_zero(self):
        back = ltf.decode(ltf.encode(np.float32(4.5)))
        assert back.shape == ()
        assert back == np.float32(4.5)

    def test_non_contiguous_input(self):
        arr = np.arange(20, dtype=np.float32).reshape(4, 5)[:, ::2]
        back = ltf.decode(ltf.encode(arr))
        np.testing.assert_array_equal(back, arr)

    def test_decoded_array_is_writable(self):
        back = ltf.decode(ltf.encode(np.zeros(3, dtype=np.float32)))
        back[0] = 1.0  # must not raise: decode hands out an owned copy

    @given(
        st.lists(st.integers(min_value=1, max_value=6), min_size=0, max_size=4),
        st.sampled_from([np.float32, np.uint8]),
    )
    def test_any_small_shape_round_trips(self, dims, dtype):
        rng = np.random.default_rng(42)
        arr = (rng.uniform(0, 100, size=dims)).astype(dtype)
        back = ltf.decode(ltf.encode(arr))
        assert back.shape == tuple(dims)
        np.testing.assert_array_equal(back, arr)


class TestHeaderLayout:
    def test_header_bytes(self):
        arr = np.zeros((2, 3), dtype=np.float32)
        blob = ltf.encode(arr)
        assert blob[:4] == b"LTF1"
        dtype_code, rank = struct.unpack("<BB", blob[4:6])
        assert dtype_code == 0 and rank == 2
        assert struct.unpack("<2I", blob[6:14]) == (2, 3)
        assert len(blob) == 14 + 2 * 3 * 4

    def test_uint8_code_and_row_major_payload(self):
        arr = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        blob = ltf.encode(arr)
        assert blob[4] == 1
        assert blob[6 + 8 :] == bytes([1, 2, 3, 4])


class TestErrors:
    def test_bad_magic(self):
        blob = b"XTF1" + ltf.encode(np.zeros(1, dtype=np.float32))[4:]
        with pytest.raises(ltf.LtfError, match="magic"):
            ltf.decode(blob)

    def test_truncated_header(self):
        with pytest.raises(ltf.LtfError):
            ltf.decode(b"LTF1\x00")

    def test_truncated_dims(self):
        blob = ltf.encode(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ltf.LtfError):
            ltf.decode(blob[:8])

    def test_payload_size_mismatch(self):
        blob = ltf.encode(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ltf.LtfError, match="payload"):
            ltf.decode(blob[:-1])
        with pytest.raises(ltf.LtfError, match="payload"):
            ltf.decode(blob + b"\x00")

    def test_unknown_dtype_code(self):
        blob = bytearray(ltf.encode(np.zeros(1, dtype=np.float32)))
        blob[4] = 9
        with pytest.raises(ltf.LtfError, match="dtype"):
            ltf.decode(bytes(blob))

    def test_unsupported_dtype_on_encode(self):
        with pytest.raises(ltf.LtfError):
            ltf.encode(np.zeros(2, dtype=np.complex64))

    def test_ltf_error_is_value_error(self):
        assert issubclass(ltf.LtfError, ValueError)

    def test_read_write_paths(self, tmp_path):
        path = tmp_path / "sub" / "x.ltf"
        path.parent.mkdir()
        arr = np.ones((3, 3), dtype=np.float32)
        ltf.write(path, arr)
        np.testing.assert_array_equal(ltf.read(path), arr)
