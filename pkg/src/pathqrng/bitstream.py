"""Bit commitment, packed bit buffers and the on-disk formats.

Formats (all integers little-endian):

* time tags, binary: ``b"PTTG"``, u8 version (1), u8 channel_count,
  u64 record_count, then ``record_count`` records of (u8 channel,
  u64 timestamp).  Timestamps count 4 ps ticks.
* time tags, CSV: header ``channel,timestamp_4ps`` then one record per line.
* bits: ``b"QBIT"``, u8 version (1), u64 bit_length, then the packed
  payload, most significant bit first within each byte.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np
from numba import njit

PathLike = Union[str, Path]

TAG_MAGIC = b"PTTG"
BIT_MAGIC = b"QBIT"
FORMAT_VERSION = 1
FILE_RESOLUTION_PS = 4.0
CSV_HEADER = ("channel", "timestamp_4ps")

_TAG_HEADER = struct.Struct("<4sBBQ")
_BIT_HEADER = struct.Struct("<4sBQ")
_RECORD = np.dtype([("channel", "u1"), ("timestamp", "<u8")])


class FormatError(ValueError):
    """Malformed input file or record stream.

    ``record_index`` is the 0-based index of the first bad record, when the
    problem can be pinned to one.
    """

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"{message} (record {record_index})"
        super().__init__(message)
        self.record_index = record_index


class UnknownChannelError(FormatError):
    pass


@dataclass(eq=False)
class TimeTagStream:
    """Time-ordered detector clicks.

    ``timestamps`` are integer multiples of ``resolution_ps``.
    """

    channels: np.ndarray
    timestamps: np.ndarray
    channel_count: int
    resolution_ps: float = FILE_RESOLUTION_PS

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        if self.channels.shape != self.timestamps.shape or self.channels.ndim != 1:
            raise ValueError("channels and timestamps must be 1-D arrays of equal length")
        if self.channel_count < 1 or self.channel_count > 256:
            raise ValueError(f"channel_count must be in [1, 256], got {self.channel_count}")
        if self.channels.size and int(self.channels.max()) >= self.channel_count:
            bad = int(np.argmax(self.channels >= self.channel_count))
            raise FormatError(f"channel {self.channels[bad]} >= channel_count {self.channel_count}", bad)
        if self.resolution_ps <= 0:
            raise ValueError("resolution_ps must be positive")

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            self.channel_count == other.channel_count
            and self.resolution_ps == other.resolution_ps
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.timestamps, other.timestamps)
        )

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))

    def counts(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=self.channel_count)

    def duration_s(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0]) * self.resolution_ps * 1e-12


class BitBuffer:
    """Packed bit sequence, MSB first; pad bits in the last byte are zero."""

    __slots__ = ("_data", "_bit_length")

    def __init__(self, data=b"", bit_length: int | None = None):
        arr = np.frombuffer(bytes(data), dtype=np.uint8).copy() if isinstance(data, (bytes, bytearray, memoryview)) \
            else np.ascontiguousarray(data, dtype=np.uint8).copy()
        if bit_length is None:
            bit_length = arr.size * 8
        if bit_length < 0 or bit_length > arr.size * 8:
            raise ValueError(f"bit_length {bit_length} does not fit in {arr.size} bytes")
        nbytes = (bit_length + 7) // 8
        arr = arr[:nbytes].copy()
        pad = nbytes * 8 - bit_length
        if pad:
            arr[-1] &= (0xFF << pad) & 0xFF
        arr.setflags(write=False)
        self._data = arr
        self._bit_length = int(bit_length)

    @classmethod
    def from_bits(cls, bits) -> "BitBuffer":
        b = np.asarray(bits, dtype=np.uint8).reshape(-1)
        if b.size and int(b.max()) > 1:
            raise ValueError("bits must be 0 or 1")
        return cls(np.packbits(b), b.size)

    @classmethod
    def from_string(cls, text: str) -> "BitBuffer":
        text = "".join(text.split())
        return cls.from_bits(np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def bit_length(self) -> int:
        return self._bit_length

    def __len__(self) -> int:
        return self._bit_length

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self._data, count=self._bit_length)

    def to_string(self) -> str:
        return (self.to_bits() + ord("0")).tobytes().decode()

    def tobytes(self) -> bytes:
        return self._data.tobytes()

    def slice(self, start: int, stop: int) -> "BitBuffer":
        start, stop, _ = slice(start, stop).indices(self._bit_length)
        stop = max(stop, start)
        if start % 8 == 0:
            return BitBuffer(self._data[start // 8:(stop + 7) // 8], stop - start)
        return BitBuffer.from_bits(self.to_bits()[start:stop])

    def __eq__(self, other):
        if not isinstance(other, BitBuffer):
            return NotImplemented
        return self._bit_length == other._bit_length and np.array_equal(self._data, other._data)

    def __repr__(self):
        preview = self.to_string()[:32] if self._bit_length <= 32 else self.slice(0, 32).to_string() + "..."
        return f"BitBuffer({preview!r}, bit_length={self._bit_length})"


@dataclass(frozen=True)
class CommitmentMap:
    """Channel -> fixed-width bit pattern."""

    patterns: Mapping[int, str]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("commitment map is empty")
        widths = {len(p) for p in self.patterns.values()}
        if len(widths) != 1:
            raise ValueError("all patterns must have the same width")
        (w,) = widths
        if w not in (1, 2, 3):
            raise ValueError(f"pattern width must be 1, 2 or 3, got {w}")
        for ch, p in self.patterns.items():
            if not 0 <= int(ch) < 256:
                raise ValueError(f"channel {ch} out of range")
            if set(p) - {"0", "1"}:
                raise ValueError(f"pattern {p!r} is not a bit string")
        object.__setattr__(self, "patterns", {int(k): v for k, v in self.patterns.items()})

    @property
    def width(self) -> int:
        return len(next(iter(self.patterns.values())))

    @classmethod
    def one_bit(cls) -> "CommitmentMap":
        return cls({0: "0", 1: "1"})

    @classmethod
    def two_bit(cls) -> "CommitmentMap":
        # first bit: which second-stage splitter; second bit: which of its outputs
        return cls({0: "00", 1: "01", 2: "10", 3: "11"})

    def table(self) -> np.ndarray:
        """(256, width) lookup; rows of unmapped channels hold 255."""
        t = np.full((256, self.width), 255, dtype=np.uint8)
        for ch, p in self.patterns.items():
            t[ch] = [int(c) for c in p]
        return t


@njit(cache=True)
def _coincidence_keep(ts, window):
    n = ts.size
    keep = np.ones(n, dtype=np.bool_)
    i = 0
    while i < n:
        j = i + 1
        while j < n and ts[j] - ts[i] <= window:
            j += 1
        if j - i >= 2:
            for k in range(i, j):
                keep[k] = False
        i = j
    return keep


def assign_bits(stream: TimeTagStream, mapping: CommitmentMap, window_ps: float = 0.0) -> BitBuffer:
    """Concatenate the pattern of every retained click, in time order.

    With ``window_ps > 0`` any group of two or more clicks lying within
    ``window_ps`` of the group's first click is dropped entirely.
    """
    if window_ps < 0:
        raise ValueError("coincidence window must be non-negative")
    if not stream.is_sorted():
        bad = int(np.argmax(np.diff(stream.timestamps) < 0)) + 1
        raise FormatError("time tags are not sorted", bad)
    table = mapping.table()
    symbols = table[stream.channels]
    if symbols.size and int(symbols.max()) > 1:
        bad = int(np.argmax(symbols[:, 0] > 1))
        raise UnknownChannelError(f"channel {stream.channels[bad]} has no commitment pattern", bad)
    if window_ps > 0 and len(stream):
        ticks = window_ps / stream.resolution_ps
        keep = _coincidence_keep(stream.timestamps.astype(np.float64), float(ticks))
        symbols = symbols[keep]
    return BitBuffer.from_bits(symbols.reshape(-1))


def _to_file_ticks(stream: TimeTagStream) -> np.ndarray:
    if stream.resolution_ps == FILE_RESOLUTION_PS:
        return stream.timestamps
    return np.rint(stream.timestamps * (stream.resolution_ps / FILE_RESOLUTION_PS)).astype(np.int64)


def write_timetags(path: PathLike, stream: TimeTagStream, fmt: str | None = None) -> None:
    """Write ``stream``; ``fmt`` is ``"binary"`` or ``"csv"`` (default from suffix)."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "binary")
    ticks = _to_file_ticks(stream)
    if ticks.size and int(ticks.min()) < 0:
        raise ValueError("timestamps must be non-negative")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CSV_HEADER) + "\n")
            if ticks.size:
                body = np.column_stack([stream.channels.astype(np.int64), ticks])
                np.savetxt(fh, body, fmt="%d", delimiter=",")
        return
    if fmt != "binary":
        raise ValueError(f"unknown time-tag format {fmt!r}")
    records = np.empty(ticks.size, dtype=_RECORD)
    records["channel"] = stream.channels
    records["timestamp"] = ticks
    with open(path, "wb") as fh:
        fh.write(_TAG_HEADER.pack(TAG_MAGIC, FORMAT_VERSION, stream.channel_count % 256, ticks.size))
        fh.write(records.tobytes())


def read_timetags(path: PathLike, fmt: str | None = None, channel_count: int | None = None) -> TimeTagStream:
    path = Path(path)
    if fmt is None:
        with open(path, "rb") as fh:
            head = fh.read(4)
        fmt = "binary" if head == TAG_MAGIC else ("csv" if path.suffix.lower() == ".csv" else "binary")
    if fmt == "csv":
        return _read_timetags_csv(path, channel_count)
    raw = path.read_bytes()
    if len(raw) < _TAG_HEADER.size:
        if raw[:4] != TAG_MAGIC[: len(raw)]:
            raise FormatError("bad magic")
        raise FormatError("truncated header")
    magic, version, nch, count = _TAG_HEADER.unpack_from(raw)
    if magic != TAG_MAGIC:
        raise FormatError("bad magic")
    if version != FORMAT_VERSION:
        raise FormatError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")
    payload = memoryview(raw)[_TAG_HEADER.size:]
    complete = len(payload) // _RECORD.itemsize
    if complete < count:
        raise FormatError(f"truncated payload: header declares {count} records", complete)
    if len(payload) > count * _RECORD.itemsize:
        raise FormatError("trailing bytes after the last record", count)
    records = np.frombuffer(payload, dtype=_RECORD, count=count)
    nch = nch or 256
    if count and int(records["channel"].max()) >= nch:
        bad = int(np.argmax(records["channel"] >= nch))
        raise FormatError(f"channel {records['channel'][bad]} >= channel_count {nch}", bad)
    if count and int(records["timestamp"].max()) > np.iinfo(np.int64).max:
        raise FormatError("timestamp overflows int64")
    return TimeTagStream(records["channel"].copy(), records["timestamp"].astype(np.int64), nch)


def _read_timetags_csv(path: Path, channel_count: int | None) -> TimeTagStream:
    with open(path, newline="") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise FormatError(f"expected CSV header {','.join(CSV_HEADER)!r}")
    channels, ticks = [], []
    for idx, row in enumerate(reader):
        if not row:
            continue
        try:
            if len(row) != 2:
                raise ValueError
            ch, ts = int(row[0]), int(row[1])
            if not 0 <= ch < 256 or ts < 0:
                raise ValueError
        except ValueError:
            raise FormatError(f"malformed time-tag line {','.join(row)!r}", idx) from None
        channels.append(ch)
        ticks.append(ts)
    if channel_count is None:
        channel_count = (max(channels) + 1) if channels else 1
    return TimeTagStream(np.array(channels, dtype=np.uint8), np.array(ticks, dtype=np.int64), channel_count)


def write_bits(path: PathLike, buffer: BitBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(_BIT_HEADER.pack(BIT_MAGIC, FORMAT_VERSION, buffer.bit_length))
        fh.write(buffer.tobytes())


def read_bits(path: PathLike) -> BitBuffer:
    raw = Path(path).read_bytes()
    if raw[:4] != BIT_MAGIC[: min(4, len(raw))] or len(raw) < 4:
        raise FormatError("bad magic")
    if len(raw) < _BIT_HEADER.size:
        raise FormatError("truncated header")
    _, version, bit_length = _BIT_HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")
    payload = raw[_BIT_HEADER.size:]
    need = (bit_length + 7) // 8
    if len(payload) < need:
        raise FormatError(f"truncated payload: {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise FormatError(f"{len(payload) - need} trailing bytes after payload")
    return BitBuffer(payload, bit_length)
