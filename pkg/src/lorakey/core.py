"""Probe records, RSSI traces, trace CSV I/O and bidirectional alignment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

RSSI_MIN_DBM = -148
RSSI_MAX_DBM = 0
TRACE_HEADER = ("seq", "timestamp_ms", "rssi_dbm", "freq_hz")


class TraceError(ValueError):
    """Base class for malformed trace input."""


class TraceParseError(TraceError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class TraceIntegrityError(TraceError):
    pass


class TraceRangeError(TraceError):
    pass


@dataclass(frozen=True)
class ProbeRecord:
    seq_index: int
    timestamp_ms: int
    rssi_dbm: int
    freq_hz: int

    def __post_init__(self):
        if self.seq_index < 0 or self.timestamp_ms < 0:
            raise TraceRangeError("seq_index and timestamp_ms must be non-negative")
        if not RSSI_MIN_DBM <= self.rssi_dbm <= RSSI_MAX_DBM:
            raise TraceRangeError(
                f"rssi {self.rssi_dbm} dBm outside [{RSSI_MIN_DBM}, {RSSI_MAX_DBM}]"
            )
        if self.freq_hz <= 0:
            raise TraceRangeError("freq_hz must be positive")


@dataclass(frozen=True)
class RssiTrace:
    """RSSI observations of one device, ordered by packet sequence index."""

    device_id: str
    records: tuple[ProbeRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seqs = [r.seq_index for r in self.records]
        for prev, cur in zip(seqs, seqs[1:]):
            if cur == prev:
                raise TraceIntegrityError(f"duplicate seq_index {cur}")
            if cur < prev:
                raise TraceIntegrityError("records not sorted by seq_index")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def seq_indices(self) -> np.ndarray:
        return np.array([r.seq_index for r in self.records], dtype=np.int64)

    @property
    def rssi(self) -> np.ndarray:
        return np.array([r.rssi_dbm for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class AlignedProbes:
    """Probe rounds observed by both parties, paired by sequence index."""

    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    x_a: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    x_b: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        if not len(self.indices) == len(self.x_a) == len(self.x_b):
            raise ValueError("indices, x_a and x_b must have equal lengths")

    def __len__(self) -> int:
        return len(self.indices)


def as_bits(bits: Iterable[int] | np.ndarray) -> np.ndarray:
    """Validate and copy a bit sequence into a ``uint8`` array."""
    arr = np.array(bits, dtype=np.int64).ravel()
    if arr.size and ((arr < 0) | (arr > 1)).any():
        raise ValueError("bit sequences may only contain 0 and 1")
    return arr.astype(np.uint8)


def bits_to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


def str_to_bits(text: str) -> np.ndarray:
    return as_bits([int(ch) for ch in text.strip()])


def parse_trace(text: str | io.TextIOBase, device_id: str = "") -> RssiTrace:
    """Parse a trace in ``seq,timestamp_ms,rssi_dbm,freq_hz`` CSV form.

    Rows may arrive in any order; they are sorted by sequence index.
    Duplicate indices raise :class:`TraceIntegrityError`, out-of-range RSSI
    raises :class:`TraceRangeError` and anything unparseable raises
    :class:`TraceParseError` naming the offending line.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.splitlines()
    if not lines:
        raise TraceParseError(1, "missing header")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != TRACE_HEADER:
        raise TraceParseError(1, f"expected header {','.join(TRACE_HEADER)}")

    records = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise TraceParseError(lineno, f"expected 4 fields, got {len(row)}")
        try:
            seq, ts, rssi, freq = (int(cell.strip()) for cell in row)
        except ValueError:
            raise TraceParseError(lineno, "non-integer field") from None
        try:
            records.append(ProbeRecord(seq, ts, rssi, freq))
        except TraceRangeError as exc:
            raise TraceRangeError(f"line {lineno}: {exc}") from None

    records.sort(key=lambda r: r.seq_index)
    for prev, cur in zip(records, records[1:]):
        if prev.seq_index == cur.seq_index:
            raise TraceIntegrityError(f"duplicate seq_index {cur.seq_index}")
    return RssiTrace(device_id, records)


def serialize_trace(trace: RssiTrace) -> str:
    out = [",".join(TRACE_HEADER)]
    out += [
        f"{r.seq_index},{r.timestamp_ms},{r.rssi_dbm},{r.freq_hz}" for r in trace.records
    ]
    return "\n".join(out) + "\n"


def align_traces(a: RssiTrace, b: RssiTrace) -> AlignedProbes:
    """Pair the probes both devices observed; lost packets simply drop out."""
    idx_a, idx_b = a.seq_indices, b.seq_indices
    common, ia, ib = np.intersect1d(idx_a, idx_b, assume_unique=True, return_indices=True)
    return AlignedProbes(common.astype(np.int64), a.rssi[ia], b.rssi[ib])


def read_index_list(text: str) -> list[int]:
    """Read a kept/dropped index list: integers separated by commas or newlines."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for cell in line.split(","):
            cell = cell.strip()
            if not cell:
                continue
            try:
                out.append(int(cell))
            except ValueError:
                raise TraceParseError(lineno, f"bad index {cell!r}") from None
    return out


def write_index_list(indices: Sequence[int]) -> str:
    return "".join(f"{int(i)}\n" for i in indices)
