"""Record and replay of raw channel frames.

File layout, all little-endian::

    offset  size  field
    0       4     magic b"SUPR"
    4       2     version (1)
    6       2     sample format code (1 = int16)
    8       4     events per frame
    12      4     channels
    16      4     samples per event
    20      8     sample frequency (float64, Hz)
    28      4     frame count
    32      4     reserved (0)
    36      32    SHA-256 digest of the layout the data was acquired with
    68      ...   frames: int64 timestamp (ns), then events*channels*samples int16
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..errors import FormatError, LayoutMismatchError
from ..frames import RawChannelFrame

MAGIC = b"SUPR"
VERSION = 1
FORMAT_CODES = {1: np.dtype("<i2")}
_HEADER = struct.Struct("<4sHHIIIdII32s")
HEADER_SIZE = _HEADER.size
_TIMESTAMP = struct.Struct("<q")


@dataclass(frozen=True)
class RawFileHeader:
    events: int
    channels: int
    samples: int
    sample_frequency: float
    frame_count: int
    layout_hash: str
    format_code: int = 1
    version: int = VERSION

    @property
    def frame_bytes(self) -> int:
        return _TIMESTAMP.size + self.events * self.channels * self.samples * FORMAT_CODES[self.format_code].itemsize

    @property
    def file_bytes(self) -> int:
        return HEADER_SIZE + self.frame_count * self.frame_bytes

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.version, self.format_code, self.events, self.channels, self.samples,
            self.sample_frequency, self.frame_count, 0, bytes.fromhex(self.layout_hash),
        )


def _header_for(frame: RawChannelFrame, count: int) -> RawFileHeader:
    e, c, s = frame.samples.shape
    return RawFileHeader(e, c, s, float(frame.sample_frequency), count, frame.layout_ref)


def _check_digest(layout_hash: str):
    try:
        if len(bytes.fromhex(layout_hash)) != 32:
            raise ValueError
    except ValueError:
        raise FormatError(f"layout reference {layout_hash!r} is not a SHA-256 hex digest") from None


def write_raw(path, frames: Iterable[RawChannelFrame]) -> Path:
    """Write ``frames`` (same shape, rate and layout) to a single file.

    Deterministic: identical frames give byte-identical files.
    """
    path = Path(path)
    frames = list(frames)
    if not frames:
        raise FormatError("cannot write a raw file without frames; the header needs a frame shape", path)
    with RawFrameWriter(path) as w:
        for f in frames:
            w.write(f)
    return path


class RawFrameWriter:
    """Append frames to a raw file; the frame count is patched in on close."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = None
        self._header: RawFileHeader | None = None
        self.count = 0

    def write(self, frame: RawChannelFrame):
        if self._header is None:
            _check_digest(frame.layout_ref)
            self._header = _header_for(frame, 0)
            try:
                self._fh = open(self.path, "wb")
            except OSError as exc:
                raise OSError(exc.errno, f"cannot write raw file {self.path}: {exc.strerror}") from exc
            self._fh.write(self._header.pack())
        h = self._header
        if (
            frame.samples.shape != (h.events, h.channels, h.samples)
            or float(frame.sample_frequency) != h.sample_frequency
            or frame.layout_ref != h.layout_hash
        ):
            raise FormatError("all frames in a raw file must share shape, sample frequency and layout", self.path)
        self._fh.write(_TIMESTAMP.pack(int(frame.timestamp)))
        self._fh.write(np.ascontiguousarray(frame.samples, dtype="<i2").tobytes())
        self.count += 1

    def close(self):
        if self._fh is None:
            return
        self._fh.seek(0)
        self._fh.write(_header_for_count(self._header, self.count).pack())
        self._fh.close()
        self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _header_for_count(h: RawFileHeader, count: int) -> RawFileHeader:
    return RawFileHeader(h.events, h.channels, h.samples, h.sample_frequency, count, h.layout_hash, h.format_code)


def read_raw_header(path) -> RawFileHeader:
    """Decode and validate the header, including the total file size."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read(HEADER_SIZE)
        size = path.stat().st_size
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read raw file {path}: {exc.strerror}") from exc
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", path, 0)
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"truncated header: expected {HEADER_SIZE} bytes, found {len(blob)}", path, len(blob))
    magic, version, code, e, c, s, fs, count, _reserved, digest = _HEADER.unpack(blob)
    if version != VERSION:
        raise FormatError(f"unknown version {version}", path, 4)
    if code not in FORMAT_CODES:
        raise FormatError(f"unknown sample format code {code}", path, 6)
    for off, name, v in ((8, "events", e), (12, "channels", c), (16, "samples", s)):
        if v < 1:
            raise FormatError(f"{name} must be positive, got {v}", path, off)
    if not (fs > 0 and np.isfinite(fs)):
        raise FormatError(f"sample frequency must be positive, got {fs}", path, 20)
    h = RawFileHeader(e, c, s, fs, count, digest.hex(), code, version)
    if size != h.file_bytes:
        kind = "truncated payload" if size < h.file_bytes else "trailing bytes after payload"
        raise FormatError(
            f"{kind}: header declares {count} frames, expected {h.file_bytes} bytes, found {size}",
            path,
            min(size, h.file_bytes),
        )
    return h


def iter_raw(path, expected_layout_hash: str | None = None) -> Iterator[RawChannelFrame]:
    """Yield the frames of a raw file.

    The header, file size and layout digest are all checked before the first
    frame is produced, so a mismatch never leaks partial data downstream.
    """
    path = Path(path)
    h = read_raw_header(path)
    if expected_layout_hash is not None and h.layout_hash != expected_layout_hash:
        raise LayoutMismatchError(
            f"{path}: recorded with layout {h.layout_hash[:12]}, replaying with {expected_layout_hash[:12]}"
        )
    dtype = FORMAT_CODES[h.format_code]
    n = h.events * h.channels * h.samples
    return _frames(path, h, dtype, n)


def _frames(path, h, dtype, n):
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        for i in range(h.frame_count):
            offset = fh.tell()
            ts_bytes = fh.read(_TIMESTAMP.size)
            payload = fh.read(n * dtype.itemsize)
            if len(ts_bytes) != _TIMESTAMP.size or len(payload) != n * dtype.itemsize:
                raise FormatError(f"frame {i} truncated", path, offset)
            (ts,) = _TIMESTAMP.unpack(ts_bytes)
            samples = np.frombuffer(payload, dtype=dtype).astype(np.int16).reshape(h.events, h.channels, h.samples)
            yield RawChannelFrame(samples, h.sample_frequency, h.layout_hash, ts)


def read_raw(path, expected_layout_hash: str | None = None) -> list[RawChannelFrame]:
    return list(iter_raw(path, expected_layout_hash))
