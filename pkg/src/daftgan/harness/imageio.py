"""Binary PPM (P6) and PGM (P5) with 8-bit samples."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_bytes(image: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> uint8 with round-half-to-even."""
    return np.clip(np.rint((np.asarray(image) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def _read_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    if not data.startswith(magic):
        raise ImageFormatError(f"expected {magic.decode()} header")
    fields, pos = [], len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated or malformed header")
        fields.append(int(data[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images are supported (maxval {maxval})")
    return w, h, pos + 1


def write_ppm(path, image: np.ndarray) -> None:
    """``image`` is [3, H, W] in [-1, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"PPM needs a [3,H,W] image, got {img.shape}")
    raw = to_bytes(img).transpose(1, 2, 0)
    header = f"P6\n{img.shape[2]} {img.shape[1]}\n255\n".encode()
    Path(path).write_bytes(header + raw.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, off = _read_header(data, b"P6")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=off) if len(data) - off >= w * h * 3 else None
    if body is None:
        raise ImageFormatError(f"{path}: pixel data truncated")
    return from_bytes(body.reshape(h, w, 3).transpose(2, 0, 1))


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary mask (1 = hole) written as 255 for holes, 0 elsewhere."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ImageFormatError(f"PGM needs a [H,W] mask, got {m.shape}")
    raw = np.where(m > 0.5, 255, 0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode() + raw.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, off = _read_header(data, b"P5")
    if len(data) - off < w * h:
        raise ImageFormatError(f"{path}: pixel data truncated")
    body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off)
    return (body.reshape(h, w) >= 128).astype(np.float64)
