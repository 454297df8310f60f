"""Pulse traces to trial outcomes.

Each side is processed on its own.  A digitized pulse is *recorded* when
its maximum reaches 55 % of the calibrated single-photon height, and
*accepted* as a detection when it reaches 75 %.  Its timestamp is the first
upward crossing of 20 % of the calibrated height, linearly interpolated
between samples.  Accepted timestamps are binned into trial slots of
fixed length from a local offset; there is no coincidence window between
the two sides.

Trace file (little-endian)::

    8 bytes  magic b"CHETRC\\x00\\x01"
    f8       sample period, ns
    f8       calibrated pulse height
    u4       samples per trace
    u1       channel (0 = alice, 1 = bob)
    then per trace: f8 absolute time of the first sample (ns), samples as f4

Setting log (little-endian)::

    8 bytes  magic b"CHESET\\x00\\x01"
    u1       channel
    u8       number of trials
    u1 per trial: setting 1 or 2
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .records import NO_TIME, TrialBatch
from .simulate import SLOT_NS

TRIGGER_LEVEL = 0.55
ACCEPT_LEVEL = 0.75
TIMESTAMP_LEVEL = 0.20
CHANNELS = ("alice", "bob")

TRACE_MAGIC = b"CHETRC\x00\x01"
SETTINGS_MAGIC = b"CHESET\x00\x01"
_TRACE_HEAD = struct.Struct("<ddIB")
_SETTINGS_HEAD = struct.Struct("<BQ")

# synthetic pulse shape
PULSE_WIDTH_NS = 40.0
PRE_TRIGGER_NS = 20.0
TRACE_SAMPLES = 64


class IngestError(ValueError):
    pass


@dataclass
class PulseTrace:
    samples: np.ndarray
    sample_period: float
    calib_height: float
    t0: float = 0.0
    channel: str = "alice"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise IngestError("trace samples must be one-dimensional")
        if not self.calib_height > 0:
            raise IngestError(f"calibrated height must be positive, got {self.calib_height!r}")
        if not self.sample_period > 0:
            raise IngestError(f"sample period must be positive, got {self.sample_period!r}")
        if not np.isfinite(self.samples).all():
            raise IngestError("trace samples must be finite")
        if self.channel not in CHANNELS:
            raise IngestError(f"channel must be one of {CHANNELS}")


@dataclass(frozen=True)
class DetectionEvent:
    timestamp: float
    channel: str
    accepted: bool


def classify_traces(samples: np.ndarray, t0: np.ndarray, sample_period: float,
                    calib_height: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized classification of equal-length traces (one per row).

    Returns ``(recorded, accepted, timestamp)``.  If a trace already starts
    above the timestamp level, its first sample time is used.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] < 2:
        raise IngestError("a trace needs at least 2 samples")
    peak = samples.max(axis=1)
    recorded = peak >= TRIGGER_LEVEL * calib_height
    accepted = peak >= ACCEPT_LEVEL * calib_height
    level = TIMESTAMP_LEVEL * calib_height
    above = samples >= level
    rising = above[:, 1:] & ~above[:, :-1]
    i = np.argmax(rising, axis=1) + 1
    rows = np.arange(len(samples))
    lo, hi = samples[rows, i - 1], samples[rows, i]
    frac = np.where(hi > lo, (level - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    t = np.asarray(t0, float) + (i - 1 + frac) * sample_period
    t = np.where(above[:, 0] | ~rising.any(axis=1), np.asarray(t0, float), t)
    return recorded, accepted, t


def classify_trace(trace: PulseTrace) -> DetectionEvent | None:
    rec, acc, t = classify_traces(trace.samples[None, :], np.array([trace.t0]),
                                  trace.sample_period, trace.calib_height)
    if not rec[0]:
        return None
    return DetectionEvent(float(t[0]), trace.channel, bool(acc[0]))


@dataclass
class SlotAssignment:
    """First accepted timestamp per occupied slot of one channel."""

    slots: np.ndarray
    first_time: np.ndarray
    n_events: int

    def outcomes(self, n_trials: int) -> np.ndarray:
        out = np.zeros(n_trials, bool)
        inside = (self.slots >= 0) & (self.slots < n_trials)
        out[self.slots[inside]] = True
        return out


def assign_slots(events, slot_period: float = SLOT_NS, offset: float = 0.0) -> dict[str, SlotAssignment]:
    """Bin accepted events per channel: slot = floor((t - offset) / period).

    Several events in one slot count as a single "+".
    """
    if not slot_period > 0:
        raise IngestError("slot period must be positive")
    by_channel: dict[str, list[float]] = {}
    for ev in events:
        if ev.channel not in CHANNELS:
            raise IngestError(f"unknown channel {ev.channel!r}")
        times = by_channel.setdefault(ev.channel, [])
        if times and ev.timestamp < times[-1][0]:
            raise IngestError(f"{ev.channel} events are not time-sorted")
        times.append((ev.timestamp, ev.accepted))
    result = {}
    for ch in CHANNELS:
        pairs = by_channel.get(ch, [])
        t = np.array([p[0] for p in pairs if p[1]], dtype=float)
        result[ch] = _slot_times(t, slot_period, offset)
    return result


def _slot_times(t: np.ndarray, slot_period: float, offset: float) -> SlotAssignment:
    if (np.diff(t) < 0).any():
        raise IngestError("events are not time-sorted")
    slot = np.floor((t - offset) / slot_period).astype(np.int64)
    uniq, first = np.unique(slot, return_index=True)
    return SlotAssignment(uniq, t[first], len(t))


# --- files ------------------------------------------------------------------------------

def write_traces(path: str | Path, t0: np.ndarray, samples: np.ndarray, sample_period: float,
                 calib_height: float, channel: str) -> None:
    samples = np.asarray(samples, dtype="<f4")
    if samples.ndim != 2:
        raise IngestError("samples must be a 2-D array (trace, sample)")
    dtype = np.dtype([("t0", "<f8"), ("samples", "<f4", (samples.shape[1],))])
    rec = np.empty(len(samples), dtype=dtype)
    rec["t0"], rec["samples"] = t0, samples
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC + _TRACE_HEAD.pack(sample_period, calib_height, samples.shape[1],
                                                CHANNELS.index(channel)))
        fh.write(rec.tobytes())


def read_traces(path: str | Path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Returns ``(header, t0, samples)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != TRACE_MAGIC:
        raise IngestError(f"{path}: not a trace file")
    try:
        period, calib, n, ch = _TRACE_HEAD.unpack_from(raw, 8)
    except struct.error as exc:
        raise IngestError(f"{path}: truncated trace header") from exc
    if n < 2 or ch >= len(CHANNELS):
        raise IngestError(f"{path}: invalid trace header")
    dtype = np.dtype([("t0", "<f8"), ("samples", "<f4", (n,))])
    body = raw[8 + _TRACE_HEAD.size:]
    if len(body) % dtype.itemsize:
        raise IngestError(f"{path}: truncated trace payload")
    rec = np.frombuffer(body, dtype=dtype)
    header = {"sample_period": period, "calib_height": calib, "samples_per_trace": n,
              "channel": CHANNELS[ch]}
    return header, rec["t0"].copy(), rec["samples"].astype(float)


def write_settings_log(path: str | Path, settings: np.ndarray, channel: str) -> None:
    settings = np.asarray(settings, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(SETTINGS_MAGIC + _SETTINGS_HEAD.pack(CHANNELS.index(channel), len(settings)))
        fh.write(settings.tobytes())


def read_settings_log(path: str | Path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != SETTINGS_MAGIC:
        raise IngestError(f"{path}: not a setting log")
    ch, n = _SETTINGS_HEAD.unpack_from(raw, 8)
    settings = np.frombuffer(raw, dtype=np.uint8, offset=8 + _SETTINGS_HEAD.size)
    if len(settings) != n or ch >= len(CHANNELS):
        raise IngestError(f"{path}: setting log length or channel mismatch")
    if ((settings != 1) & (settings != 2)).any():
        raise IngestError(f"{path}: settings must be 1 or 2")
    return CHANNELS[ch], settings.copy()


# --- synthetic pulses -----------------------------------------------------------------

def raised_cosine(t: np.ndarray, start: float, height: float, width: float = PULSE_WIDTH_NS) -> np.ndarray:
    x = (t - start) / width
    return np.where((x >= 0) & (x <= 1), 0.5 * height * (1 - np.cos(2 * np.pi * x)), 0.0)


def synthetic_traces(arrival: np.ndarray, height: np.ndarray, calib_height: float = 1.0,
                     sample_period: float = 1.0, n_samples: int = TRACE_SAMPLES,
                     width: float = PULSE_WIDTH_NS) -> tuple[np.ndarray, np.ndarray]:
    """Raised-cosine pulses whose 20 % crossing falls at ``arrival`` (absolute ns)."""
    arrival, height = np.asarray(arrival, float), np.asarray(height, float)
    rel = np.clip(TIMESTAMP_LEVEL * calib_height / np.maximum(height, 1e-300), 0, 1)
    rise = width / (2 * np.pi) * np.arccos(1 - 2 * rel)
    start = arrival - rise
    # first sample on the digitizer grid, before the pulse starts
    t0 = np.floor((start - PRE_TRIGGER_NS) / sample_period) * sample_period
    grid = t0[:, None] + np.arange(n_samples) * sample_period
    return t0, raised_cosine(grid, start[:, None], height[:, None], width)


def traces_from_batch(batch: TrialBatch, side: str, rng: np.random.Generator,
                      calib_height: float = 1.0, slot_period: float = SLOT_NS, offset: float = 0.0,
                      height_spread: float = 0.05, jitter_ns: float = 0.0,
                      decoy_rate: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pulse traces for the "+" outcomes of one side, plus blackbody-like decoys.

    Decoys peak between 0.56 and 0.70 of the calibrated height, so they are
    recorded but never accepted.  Returns ``(t0, samples)`` sorted by time.
    """
    out = batch.outcome_a if side == "a" else batch.outcome_b
    times = batch.time_a if side == "a" else batch.time_b
    idx = batch.index[out].astype(float)
    arrival = offset + idx * slot_period + times[out].astype(float)
    if jitter_ns:
        arrival = arrival + rng.normal(0.0, jitter_ns, len(arrival))
    height = calib_height * np.clip(1 + height_spread * rng.standard_normal(len(arrival)), 0.8, None)
    n_decoy = rng.binomial(len(batch), decoy_rate) if decoy_rate else 0
    if n_decoy:
        slots = rng.choice(len(batch), n_decoy, replace=False)
        dec_arr = offset + batch.index[slots].astype(float) * slot_period + rng.uniform(100, 900, n_decoy)
        dec_h = calib_height * rng.uniform(0.56, 0.70, n_decoy)
        arrival, height = np.r_[arrival, dec_arr], np.r_[height, dec_h]
    order = np.argsort(arrival, kind="stable")
    return synthetic_traces(arrival[order], height[order], calib_height)


# --- assembly ------------------------------------------------------------------------------

@dataclass
class IngestSummary:
    traces: dict[str, int]
    recorded: dict[str, int]
    accepted: dict[str, int]
    collapsed: dict[str, int]
    outside: dict[str, int]

    def to_dict(self) -> dict:
        return dict(traces=self.traces, recorded=self.recorded, accepted=self.accepted,
                    collapsed_in_slot=self.collapsed, outside_run=self.outside)


def assemble_trials(settings_a: np.ndarray, settings_b: np.ndarray,
                    traces_a: tuple, traces_b: tuple, slot_period: float = SLOT_NS,
                    offset: float = 0.0) -> tuple[TrialBatch, IngestSummary]:
    """Combine per-side setting logs and trace files into trial records.

    ``traces_*`` are ``(header, t0, samples)`` as returned by :func:`read_traces`.
    """
    n = len(settings_a)
    if len(settings_b) != n:
        raise IngestError(f"setting logs disagree on the number of trials ({n} vs {len(settings_b)})")
    outcomes, times = {}, {}
    summary = IngestSummary({}, {}, {}, {}, {})
    for side, (header, t0, samples) in (("a", traces_a), ("b", traces_b)):
        if len(samples):
            rec, acc, ts = classify_traces(samples, t0, header["sample_period"], header["calib_height"])
        else:
            rec = acc = np.zeros(0, bool)
            ts = np.zeros(0)
        t = ts[acc]
        if (np.diff(t) < 0).any():
            raise IngestError(f"side {side}: traces are not time-sorted")
        slots = _slot_times(t, slot_period, offset)
        inside = (slots.slots >= 0) & (slots.slots < n)
        out = np.zeros(n, bool)
        out[slots.slots[inside]] = True
        tt = np.full(n, NO_TIME, dtype=np.uint32)
        within = slots.first_time[inside] - (offset + slots.slots[inside] * slot_period)
        tt[slots.slots[inside]] = np.rint(within).astype(np.uint32)
        outcomes[side], times[side] = out, tt
        summary.traces[side] = int(len(samples))
        summary.recorded[side] = int(rec.sum())
        summary.accepted[side] = int(acc.sum())
        summary.collapsed[side] = int(len(t) - len(slots.slots))
        summary.outside[side] = int((~inside).sum())
    batch = TrialBatch(np.arange(n, dtype=np.uint64), np.asarray(settings_a, np.uint8),
                       np.asarray(settings_b, np.uint8), outcomes["a"], outcomes["b"],
                       times["a"], times["b"])
    return batch, summary


def ingest_files(settings_a_path, settings_b_path, traces_a_path, traces_b_path,
                 slot_period: float = SLOT_NS, offset: float = 0.0) -> tuple[TrialBatch, IngestSummary]:
    ch_a, sa = read_settings_log(settings_a_path)
    ch_b, sb = read_settings_log(settings_b_path)
    ta, tb = read_traces(traces_a_path), read_traces(traces_b_path)
    if (ch_a, ch_b, ta[0]["channel"], tb[0]["channel"]) != ("alice", "bob", "alice", "bob"):
        raise IngestError("expected Alice's files first and Bob's second")
    return assemble_trials(sa, sb, ta, tb, slot_period, offset)


def export_raw(batch: TrialBatch, directory: str | Path, seed: int = 0, calib_height: float = 1.0,
               slot_period: float = SLOT_NS, offset: float = 0.0, jitter_ns: float = 0.0,
               decoy_rate: float = 0.0) -> dict[str, Path]:
    """Write the setting logs and synthetic trace files that a run would have produced."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = {}
    for side, channel in (("a", "alice"), ("b", "bob")):
        settings = batch.setting_a if side == "a" else batch.setting_b
        paths[f"settings_{side}"] = directory / f"settings_{channel}.bin"
        write_settings_log(paths[f"settings_{side}"], settings, channel)
        t0, samples = traces_from_batch(batch, side, rng, calib_height, slot_period, offset,
                                        jitter_ns=jitter_ns, decoy_rate=decoy_rate)
        paths[f"traces_{side}"] = directory / f"traces_{channel}.bin"
        write_traces(paths[f"traces_{side}"], t0, samples, 1.0, calib_height, channel)
    return paths


def crossing_rise(height_fraction: float, width: float = PULSE_WIDTH_NS) -> float:
    """Time from pulse start to the 20 % crossing for a raised-cosine pulse of the given relative height."""
    return width / (2 * math.pi) * math.acos(1 - 2 * TIMESTAMP_LEVEL / height_fraction)
