"""Minimal binary PGM (P5) / PPM (P6) reader and writer, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers after the magic."""
    values = []
    pos = 2
    while len(values) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed header")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed header")
    return values, pos + 1


def decode(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to uint8 [H, W] (gray) or [H, W, 3] (color)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    (width, height, maxval), pos = _tokens(data, 3)
    if width < 1 or height < 1:
        raise FormatError(f"bad size {width}x{height}")
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    pixels = data[pos:pos + size]
    if len(pixels) != size:
        raise FormatError(f"expected {size} pixel bytes, found {len(pixels)}")
    arr = np.frombuffer(pixels, dtype=np.uint8)
    return arr.reshape(height, width, 3) if channels == 3 else arr.reshape(height, width)


def read_pnm(path) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def write_pnm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode(img))
