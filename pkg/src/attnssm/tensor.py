"""Dense tensor helpers, the counter-based RNG, and the binary tensor format.

Tensors are plain ``numpy.ndarray`` values in row-major (C) order with dtype
float32 or float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


class DimensionError(ValueError):
    """Shapes of the operands are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class NumericError(ArithmeticError):
    """A numerically undefined situation (e.g. zero denominator)."""


class StateError(RuntimeError):
    """An operation was invoked without the intermediates it needs."""


class FormatError(ValueError):
    """Malformed tensor or checkpoint file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


MAGIC = b"ATSM"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax over empty last dimension, shape {x.shape}")
    with np.errstate(over="ignore"):   # x - max may hit -inf; exp(-inf) = 0 is intended
        z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_lastdim(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"log-softmax over empty last dimension, shape {x.shape}")
    with np.errstate(over="ignore"):
        z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# RNG

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngState:
    """Philox-4x64 stream addressed by ``(seed, counter)``.

    The seed is the Philox key and the counter selects a disjoint block of the
    counter space, so distinct counters never share samples.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        # counter occupies the second 64-bit word; the first word is left for
        # Philox's own block increments.
        bitgen = np.random.Philox(key=self.seed & _MASK64,
                                  counter=[0, self.counter & _MASK64, 0, 0])
        return np.random.Generator(bitgen)

    def split(self, *tags: int) -> "RngState":
        """Child stream keyed by integer tags, e.g. ``(layer, step)``."""
        c = self.counter
        for t in tags:
            c = _splitmix64(c ^ _splitmix64(int(t) & _MASK64))
        return RngState(self.seed, c)


# ---------------------------------------------------------------------------
# binary format


def _tensor_header(t: np.ndarray) -> bytes:
    dt = t.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise FormatError(f"unsupported dtype {t.dtype}", 0)
    if t.ndim > 255:
        raise FormatError("rank exceeds 255", 0)
    return struct.pack("<BB", _DTYPE_CODES[dt], t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)


def _tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    body = np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<"))
    return _tensor_header(t) + body.tobytes(order="C")


def _read_tensor(buf: bytes, pos: int) -> tuple[np.ndarray, int]:
    if pos + 2 > len(buf):
        raise FormatError("truncated tensor header", pos)
    code, rank = struct.unpack_from("<BB", buf, pos)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}", pos)
    pos += 2
    if pos + 8 * rank > len(buf):
        raise FormatError("truncated extents", pos)
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dt = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if pos + nbytes > len(buf):
        raise FormatError(f"truncated payload: need {nbytes} bytes", pos)
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos)
    return arr.reshape(shape).astype(dt.newbyteorder("="), copy=True), pos + nbytes


def _check_preamble(buf: bytes) -> int:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic", 0)
    if len(buf) < 8:
        raise FormatError("truncated version", 4)
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    return 8


def save_tensor(t: np.ndarray, path) -> None:
    Path(path).write_bytes(MAGIC + struct.pack("<I", VERSION) + _tensor_bytes(np.asarray(t)))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    pos = _check_preamble(buf)
    t, end = _read_tensor(buf, pos)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor", end)
    return t


def save_checkpoint(records: Iterable[tuple[str, np.ndarray]], path) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, t in records:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(_tensor_bytes(np.asarray(t)))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = _check_preamble(buf)
    out: dict[str, np.ndarray] = {}
    while pos < len(buf):
        if pos + 4 > len(buf):
            raise FormatError("truncated record name length", pos)
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + n > len(buf):
            raise FormatError("truncated record name", pos)
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("record name is not UTF-8", pos) from exc
        pos += n
        out[name], pos = _read_tensor(buf, pos)
    return out
