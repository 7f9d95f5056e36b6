import struct

import numpy as np
import pytest

from ldnlm.errors import BadMagicError, IntegrityError, ShapeError, TruncatedError, VersionError
from ldnlm.raster import as_raster, decode_ldnr, default_peak, encode_ldnr, read_raster, write_raster


def test_ldnr_layout(rng):
    m = rng.random((3, 5)).astype(np.float32)
    blob = encode_ldnr(m)
    assert blob[:4] == b"LDNR"
    assert struct.unpack("<III", blob[4:16]) == (1, 3, 5)
    assert len(blob) == 16 + 15 * 4
    np.testing.assert_array_equal(np.frombuffer(blob[16:], "<f4").reshape(3, 5), m)


def test_ldnr_round_trip_bit_exact(rng):
    m = rng.standard_normal((7, 4)).astype(np.float32)
    assert decode_ldnr(encode_ldnr(m)).tobytes() == m.tobytes()


def test_ldnr_errors(rng):
    blob = encode_ldnr(rng.random((2, 2)).astype(np.float32))
    with pytest.raises(BadMagicError):
        decode_ldnr(b"XXXX" + blob[4:])
    with pytest.raises(VersionError):
        decode_ldnr(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(TruncatedError):
        decode_ldnr(blob[:-1])
    with pytest.raises(IntegrityError):
        decode_ldnr(blob + b"\0\0\0\0")


def test_png_maps_to_0_255(tmp_path):
    img = np.array([[0, 128], [255, 7]], dtype=np.float32)
    path = tmp_path / "a.png"
    write_raster(path, img)
    back, kind = read_raster(path)
    assert kind == "png"
    np.testing.assert_array_equal(back, img)
    assert default_peak(back, kind) == 255.0


def test_raw_peak_is_reference_max(tmp_path):
    img = np.array([[0.5, 3.0]], dtype=np.float32)
    write_raster(tmp_path / "a.ldnr", img)
    back, kind = read_raster(tmp_path / "a.ldnr")
    assert kind == "ldnr" and default_peak(back, kind) == 3.0


def test_unreadable_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not an image at all")
    with pytest.raises(Exception) as info:
        read_raster(p)
    assert "LDNR" in str(info.value)


def test_validation():
    with pytest.raises(ShapeError):
        as_raster(np.ones(4))
    with pytest.raises(ValueError):
        as_raster([[np.inf]])
    with pytest.raises(ValueError):
        as_raster([[-1.0]])
    assert as_raster([[1, 2]]).dtype == np.float32
