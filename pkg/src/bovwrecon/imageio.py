"""Binary netpbm codecs (PGM P5 / PPM P6) for grayscale images in [0, 1].

Images are handled as 2-D float64 numpy arrays of shape (height, width).
"""

import os
from typing import Tuple, Union

import numpy as np

from .errors import InvalidInputError

PathLike = Union[str, os.PathLike]

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def check_image(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("pixel values must lie in [0, 1]")
    return arr


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise InvalidInputError("truncated netpbm header")
    return data[start:pos], pos


def decode_netpbm(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes into a grayscale float image in [0, 1]."""
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise InvalidInputError(f"unsupported netpbm magic {magic!r} (need P5 or P6)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise InvalidInputError(f"bad netpbm header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise InvalidInputError(f"bad netpbm header {width}x{height} maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - pos < need:
        raise InvalidInputError("truncated netpbm pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64) / maxval
    if channels == 3:
        return np.clip(rgb_to_gray(raw.reshape(height, width, 3)), 0.0, 1.0)
    return raw.reshape(height, width)


def encode_pgm(img: np.ndarray) -> bytes:
    img = check_image(img)
    h, w = img.shape
    px = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + px.tobytes()


def read_image(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_netpbm(data)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def write_pgm(path: PathLike, img: np.ndarray) -> None:
    payload = encode_pgm(img)
    with open(path, "wb") as fh:
        fh.write(payload)
