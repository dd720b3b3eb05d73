"""PNG encoder: decodability, determinism, format fields."""

import io
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from brickray.png import encode_png, write_png


def random_image(rng, h, w):
    return rng.integers(0, 256, size=(h, w, 4), dtype=np.uint8)


def test_round_trip_through_pillow():
    rng = np.random.default_rng(17)
    for h, w in [(1, 1), (3, 5), (16, 16), (31, 7)]:
        img = random_image(rng, h, w)
        decoded = np.asarray(Image.open(io.BytesIO(encode_png(img))))
        assert decoded.shape == (h, w, 4)
        assert np.array_equal(decoded, img)


def test_signature_and_ihdr_fields():
    img = np.zeros((2, 3, 4), dtype=np.uint8)
    data = encode_png(img)
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    length, ctype = struct.unpack(">I4s", data[8:16])
    assert ctype == b"IHDR" and length == 13
    w, h, depth, color = struct.unpack(">IIBB", data[16:26])
    assert (w, h, depth, color) == (3, 2, 8, 6)  # 8-bit RGBA


def test_idat_rows_use_filter_zero():
    rng = np.random.default_rng(3)
    img = random_image(rng, 4, 4)
    data = encode_png(img)
    # Collect IDAT payloads and inflate.
    pos = 8
    idat = b""
    while pos < len(data):
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        if ctype == b"IDAT":
            idat += data[pos + 8:pos + 8 + length]
        pos += 12 + length
    raw = zlib.decompress(idat)
    stride = 1 + 4 * 4
    assert len(raw) == stride * 4
    for row in range(4):
        assert raw[row * stride] == 0  # filter byte
        assert raw[row * stride + 1:(row + 1) * stride] == img[row].tobytes()


def test_encoding_is_deterministic():
    rng = np.random.default_rng(23)
    img = random_image(rng, 8, 8)
    assert encode_png(img) == encode_png(img.copy())


def test_rejects_wrong_shape_or_dtype():
    with pytest.raises(ValueError):
        encode_png(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        encode_png(np.zeros((4, 4, 4), dtype=np.float32))


def test_write_png_creates_decodable_file(tmp_path):
    rng = np.random.default_rng(29)
    img = random_image(rng, 5, 5)
    path = tmp_path / "out.png"
    write_png(str(path), img)
    assert np.array_equal(np.asarray(Image.open(path)), img)
