"""Trial records and their on-disk formats.

Binary format (little-endian)::

    8 bytes   magic b"CHEREC\\x00\\x01"
    u32       header length h
    h bytes   UTF-8 JSON header (run metadata)
    17 bytes  per record: u64 trial index, u8 flags, u32 t_a, u32 t_b

Flag bits: 0 = Alice setting is a2, 1 = Bob setting is b2, 2 = Alice "+",
3 = Bob "+".  Detect times are ns offsets inside the trial slot;
``0xFFFFFFFF`` marks "no detection".

Text format: a first line ``# {json header}`` followed by one line per
trial, ``index setting_a setting_b outcome_a outcome_b t_a t_b`` with
settings 1/2, outcomes ``+``/``0`` and ``-`` for a missing time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .stats import CountTable

MAGIC = b"CHEREC\x00\x01"
NO_TIME = np.uint32(0xFFFFFFFF)
RECORD_DTYPE = np.dtype([("index", "<u8"), ("flags", "u1"), ("t_a", "<u4"), ("t_b", "<u4")])
_READ_CHUNK = 1 << 20


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    setting_a: int
    setting_b: int
    outcome_a: str
    outcome_b: str
    detect_time_a: int | None
    detect_time_b: int | None


@dataclass
class TrialBatch:
    """Column-oriented block of consecutive trials."""

    index: np.ndarray      # uint64
    setting_a: np.ndarray  # uint8, 1 or 2
    setting_b: np.ndarray
    outcome_a: np.ndarray  # bool, True = "+"
    outcome_b: np.ndarray
    time_a: np.ndarray     # uint32 ns, NO_TIME when absent
    time_b: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    @classmethod
    def empty(cls) -> "TrialBatch":
        return cls(np.empty(0, np.uint64), np.empty(0, np.uint8), np.empty(0, np.uint8),
                   np.empty(0, bool), np.empty(0, bool),
                   np.empty(0, np.uint32), np.empty(0, np.uint32))

    @classmethod
    def concat(cls, batches: Iterable["TrialBatch"]) -> "TrialBatch":
        batches = list(batches)
        if not batches:
            return cls.empty()
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in _FIELDS))

    def counts(self) -> CountTable:
        return CountTable.from_trials(self.setting_a, self.setting_b, self.outcome_a, self.outcome_b)

    def records(self) -> Iterator[TrialRecord]:
        for k in range(len(self)):
            ta, tb = int(self.time_a[k]), int(self.time_b[k])
            yield TrialRecord(
                int(self.index[k]), int(self.setting_a[k]), int(self.setting_b[k]),
                "+" if self.outcome_a[k] else "0", "+" if self.outcome_b[k] else "0",
                None if ta == NO_TIME else ta, None if tb == NO_TIME else tb,
            )

    def equals(self, other: "TrialBatch") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _FIELDS)

    def to_structured(self) -> np.ndarray:
        out = np.empty(len(self), dtype=RECORD_DTYPE)
        out["index"] = self.index
        out["flags"] = ((self.setting_a == 2) | (self.setting_b == 2) << 1
                        | self.outcome_a.astype(np.uint8) << 2 | self.outcome_b.astype(np.uint8) << 3)
        out["t_a"] = self.time_a
        out["t_b"] = self.time_b
        return out

    @classmethod
    def from_structured(cls, rec: np.ndarray) -> "TrialBatch":
        flags = rec["flags"]
        return cls(
            rec["index"].astype(np.uint64),
            (1 + (flags & 1)).astype(np.uint8),
            (1 + ((flags >> 1) & 1)).astype(np.uint8),
            (flags & 4) != 0, (flags & 8) != 0,
            rec["t_a"].astype(np.uint32), rec["t_b"].astype(np.uint32),
        )


_FIELDS = ("index", "setting_a", "setting_b", "outcome_a", "outcome_b", "time_a", "time_b")


def check_batch(batch: TrialBatch, previous_index: int | None = None) -> None:
    """Trial indices must increase strictly; a "+" needs a detect time and a "0" must not have one."""
    idx = batch.index.astype(np.int64)
    if len(idx) and previous_index is not None and idx[0] <= previous_index:
        raise RecordFormatError("trial indices are not strictly increasing")
    if (np.diff(idx) <= 0).any():
        raise RecordFormatError("trial indices are not strictly increasing")
    for side in ("a", "b"):
        out, t = getattr(batch, f"outcome_{side}"), getattr(batch, f"time_{side}")
        if ((t == NO_TIME) == out).any():
            raise RecordFormatError(f"side {side}: detect times must be present exactly for '+' outcomes")


# --- writing --------------------------------------------------------------------

def write_records(path: str | Path, batches: Iterable[TrialBatch], header: dict, fmt: str = "binary") -> CountTable:
    """Stream batches to ``path``; returns the aggregated counts."""
    total = CountTable()
    last = None
    with open(path, "wb") as fh:
        if fmt == "binary":
            head = json.dumps(header, sort_keys=True).encode()
            fh.write(MAGIC + struct.pack("<I", len(head)) + head)
        elif fmt == "text":
            fh.write(("# " + json.dumps(header, sort_keys=True) + "\n").encode())
        else:
            raise ValueError(f"unknown record format {fmt!r}")
        for batch in batches:
            if not len(batch):
                continue
            check_batch(batch, last)
            last = int(batch.index[-1])
            total = total + batch.counts()
            if fmt == "binary":
                fh.write(batch.to_structured().tobytes())
            else:
                fh.write(_format_text(batch).encode())
    return total


def _format_text(batch: TrialBatch) -> str:
    def times(t):
        s = t.astype(str).astype(object)
        s[t == NO_TIME] = "-"
        return s
    cols = [batch.index.astype(str), batch.setting_a.astype(str), batch.setting_b.astype(str),
            np.where(batch.outcome_a, "+", "0"), np.where(batch.outcome_b, "+", "0"),
            times(batch.time_a), times(batch.time_b)]
    return "".join(" ".join(map(str, row)) + "\n" for row in zip(*cols))


# --- reading --------------------------------------------------------------------

def _sniff(fh) -> str:
    first = fh.read(len(MAGIC))
    fh.seek(0)
    if first == MAGIC:
        return "binary"
    if first.startswith(b"#"):
        return "text"
    raise RecordFormatError("not a trial record file")


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, _sniff(fh))


def _read_header(fh, fmt: str) -> dict:
    try:
        if fmt == "binary":
            fh.read(len(MAGIC))
            (n,) = struct.unpack("<I", fh.read(4))
            return json.loads(fh.read(n).decode())
        line = fh.readline().decode()
        return json.loads(line[1:])
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordFormatError(f"corrupt record header: {exc}") from exc


def iter_records(path: str | Path, chunk: int = _READ_CHUNK) -> Iterator[TrialBatch]:
    with open(path, "rb") as fh:
        fmt = _sniff(fh)
        _read_header(fh, fmt)
        if fmt == "binary":
            while True:
                raw = fh.read(chunk * RECORD_DTYPE.itemsize)
                if not raw:
                    break
                if len(raw) % RECORD_DTYPE.itemsize:
                    raise RecordFormatError("truncated record stream")
                yield TrialBatch.from_structured(np.frombuffer(raw, dtype=RECORD_DTYPE))
        else:
            while True:
                lines = [ln for ln in (fh.readline() for _ in range(chunk)) if ln]
                if not lines:
                    break
                yield _parse_text(lines)


def _parse_text(lines: list[bytes]) -> TrialBatch:
    try:
        rows = [ln.split() for ln in lines if ln.strip()]
        if any(len(r) != 7 for r in rows):
            raise RecordFormatError("text record lines need 7 fields")
        cols = list(zip(*rows)) if rows else [()] * 7

        def times(col):
            return np.array([0xFFFFFFFF if t == b"-" else int(t) for t in col], dtype=np.uint32)

        return TrialBatch(
            np.array([int(x) for x in cols[0]], dtype=np.uint64),
            np.array([int(x) for x in cols[1]], dtype=np.uint8),
            np.array([int(x) for x in cols[2]], dtype=np.uint8),
            np.array([x == b"+" for x in cols[3]], dtype=bool),
            np.array([x == b"+" for x in cols[4]], dtype=bool),
            times(cols[5]), times(cols[6]),
        )
    except ValueError as exc:
        if isinstance(exc, RecordFormatError):
            raise
        raise RecordFormatError(f"malformed text record: {exc}") from exc


def read_records(path: str | Path) -> tuple[dict, TrialBatch]:
    header = read_header(path)
    return header, TrialBatch.concat(iter_records(path))


def count_records(path: str | Path) -> tuple[dict, CountTable]:
    """Header plus counts, folding over the file chunk by chunk."""
    header = read_header(path)
    total, last = CountTable(), None
    for batch in iter_records(path):
        check_batch(batch, last)
        if len(batch):
            last = int(batch.index[-1])
        if ((batch.setting_a < 1) | (batch.setting_a > 2) | (batch.setting_b < 1) | (batch.setting_b > 2)).any():
            raise RecordFormatError("settings must be 1 or 2")
        total = total + batch.counts()
    return header, total
