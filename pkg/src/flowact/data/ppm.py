"""Binary PPM (P6) / PGM (P5) reading and P6 writing."""

import re

import numpy as np


class ImageFormatError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode P6/P5 bytes to a uint8/uint16 array of shape (h, w, 3) or (h, w)."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"unsupported PNM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-numeric PNM header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"bad PNM dimensions or maxval: {width}x{height}, {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    payload = data[pos:pos + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise ImageFormatError("truncated PNM pixel data")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.uint16 if maxval > 255 else np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape), maxval


def read_ppm(path) -> np.ndarray:
    """Read a PPM/PGM file as float64 RGB in [0, 1], shape (h, w, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        arr, maxval = decode_pnm(data)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None
    img = arr.astype(np.float64) / maxval
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img


def to_uint8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(img) -> bytes:
    """Encode an (h, w, 3) image in [0, 1] (or uint8) as 8-bit P6."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected (h, w, 3) image, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def write_ppm(path, img) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
