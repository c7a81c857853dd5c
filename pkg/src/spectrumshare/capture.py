"""IQS1 capture files: raw sensing-symbol I/Q on disk.

Layout (all integers little-endian):
    bytes 0..3    magic "IQS1"
    bytes 4..7    u32 fft_size
    bytes 8..11   u32 symbol count
    bytes 12..15  u32 reserved (zero)
    body          symbols back to back, each sample two float32 (I then Q)

The file carries no frame/slot coordinates; symbols are stored in capture
order.
"""

from __future__ import annotations

import struct
from os import PathLike
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"IQS1"
_HEADER = struct.Struct("<4sIII")


class CaptureError(ValueError):
    """Malformed IQS1 file."""


def write_capture(
    path: str | PathLike | BinaryIO, symbols: Sequence[np.ndarray], fft_size: int
) -> None:
    """Write symbols (each fft_size complex samples) to an IQS1 file."""
    arr = np.asarray(symbols, dtype=np.complex64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or (arr.size and arr.shape[1] != fft_size):
        raise CaptureError(
            f"expected symbols of {fft_size} samples, got shape {arr.shape}"
        )
    header = _HEADER.pack(MAGIC, fft_size, arr.shape[0], 0)
    payload = arr.astype("<c8").tobytes()
    if hasattr(path, "write"):
        path.write(header + payload)
    else:
        with open(path, "wb") as fh:
            fh.write(header + payload)


def read_capture(path: str | PathLike | BinaryIO) -> tuple[int, np.ndarray]:
    """Read an IQS1 file; returns (fft_size, complex64 array of shape (count, fft_size))."""
    if hasattr(path, "read"):
        raw = path.read()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CaptureError("file shorter than the 16-byte IQS1 header")
    magic, fft_size, count, reserved = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CaptureError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if reserved != 0:
        raise CaptureError(f"reserved header word must be 0, got {reserved}")
    if fft_size == 0:
        raise CaptureError("fft_size must be positive")
    expected = _HEADER.size + 8 * fft_size * count
    if len(raw) != expected:
        raise CaptureError(
            f"body length {len(raw) - _HEADER.size} does not match "
            f"{count} symbols of {fft_size} samples"
        )
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    return fft_size, data.reshape(count, fft_size)
