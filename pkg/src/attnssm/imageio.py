"""Minimal 8-bit image I/O: binary PPM/PGM and non-interlaced PNG."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

PNG_SIG = b"\x89PNG\r\n\x1a\n"


class ImageError(IOError):
    pass


def _read_pnm(buf: bytes) -> np.ndarray:
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError("truncated PNM header")
        tokens.append(int(buf[start:pos]))
    pos += 1
    w, h, maxval = tokens
    if maxval != 255:
        raise ImageError("only 8-bit PNM is supported")
    ch = 3 if buf[:2] == b"P6" else 1
    if len(buf) < pos + w * h * ch:
        raise ImageError("truncated PNM payload")
    return np.frombuffer(buf, dtype=np.uint8, count=w * h * ch, offset=pos).reshape(h, w, ch)


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _read_png(buf: bytes) -> np.ndarray:
    pos, idat, ihdr = 8, [], None
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise ImageError("truncated PNG chunk")
        n, kind = struct.unpack_from(">I4s", buf, pos)
        data = buf[pos + 8:pos + 8 + n]
        pos += 12 + n
        if kind == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", data)
        elif kind == b"IDAT":
            idat.append(data)
        elif kind == b"IEND":
            break
    if ihdr is None:
        raise ImageError("PNG without IHDR")
    w, h, depth, ctype, _, _, interlace = ihdr
    channels = {0: 1, 2: 3, 4: 2, 6: 4}.get(ctype)
    if depth != 8 or channels is None or interlace:
        raise ImageError("only 8-bit, non-palette, non-interlaced PNG is supported")
    raw = zlib.decompress(b"".join(idat))
    stride = w * channels
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = bytearray(stride)
    for y in range(h):
        ftype = raw[y * (stride + 1)]
        line = bytearray(raw[y * (stride + 1) + 1:(y + 1) * (stride + 1)])
        for i in range(stride):
            a = line[i - channels] if i >= channels else 0
            b = prev[i]
            c = prev[i - channels] if i >= channels else 0
            if ftype == 1:
                line[i] = (line[i] + a) & 255
            elif ftype == 2:
                line[i] = (line[i] + b) & 255
            elif ftype == 3:
                line[i] = (line[i] + ((a + b) >> 1)) & 255
            elif ftype == 4:
                line[i] = (line[i] + _paeth(a, b, c)) & 255
            elif ftype != 0:
                raise ImageError(f"bad PNG filter {ftype}")
        out[y] = np.frombuffer(bytes(line), dtype=np.uint8)
        prev = line
    return out.reshape(h, w, channels)


def read_image(path) -> np.ndarray:
    """RGB float image in [0, 1], shape ``(H, W, 3)``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    if buf.startswith(PNG_SIG):
        img = _read_png(buf)
    elif buf[:2] in (b"P5", b"P6"):
        img = _read_pnm(buf)
    else:
        raise ImageError(f"{path}: unsupported image format")
    if img.shape[2] in (2, 4):
        img = img[..., :-1]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write ``(H, W, 3)`` in [0, 1] as PNG, or PPM for ``.ppm``."""
    path = Path(path)
    u8 = to_uint8(img)
    h, w = u8.shape[:2]
    if path.suffix.lower() in (".ppm", ".pnm"):
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + u8.tobytes())
        return
    raw = b"".join(b"\x00" + u8[y].tobytes() for y in range(h))

    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))

    path.write_bytes(PNG_SIG + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
                     + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))
