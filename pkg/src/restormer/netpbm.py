"""Binary Netpbm (P5 grayscale / P6 colour) reader and writer."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

_WHITESPACE = b" \t\n\r\v\f"


@dataclass
class ImageBuffer:
    values: np.ndarray  # H x W x C float32 in [0, 1]
    bit_depth: int = 8

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", pos)
    return data[start:pos], pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _read_token(data, pos)
    if not tok.isdigit():
        raise ParseError(f"invalid {what} {tok!r}", end - len(tok))
    return int(tok), end


def decode(data: bytes) -> ImageBuffer:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6", 0)
    channels = 1 if magic == b"P5" else 3
    width, pos = _read_int(data, 2, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise ParseError("image extents must be positive", pos)
    if maxval not in (255, 65535):
        raise ParseError(f"unsupported maxval {maxval}", pos)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - pos < need:
        raise ParseError(f"truncated body: need {need} bytes, have {len(data) - pos}", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    values = (raw.astype(np.float32) / np.float32(maxval)).reshape(height, width, channels)
    return ImageBuffer(np.clip(values, 0.0, 1.0), 16 if maxval == 65535 else 8)


def encode(buf: ImageBuffer) -> bytes:
    maxval = 65535 if buf.bit_depth == 16 else 255
    if buf.channels not in (1, 3):
        raise ValueError(f"Netpbm supports 1 or 3 channels, got {buf.channels}")
    q = np.floor(buf.values.astype(np.float64) * maxval + 0.5)
    q = np.clip(q, 0, maxval)
    body = q.astype(">u2" if maxval == 65535 else "u1").tobytes()
    magic = "P5" if buf.channels == 1 else "P6"
    return f"{magic}\n{buf.width} {buf.height}\n{maxval}\n".encode("ascii") + body


def load_image(path: str | Path) -> ImageBuffer:
    return decode(Path(path).read_bytes())


def save_image(buf: ImageBuffer, path: str | Path) -> None:
    Path(path).write_bytes(encode(buf))
