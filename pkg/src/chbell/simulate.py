"""Setting generation and quantum trial streams.

Settings come from the parity of ``n`` raw bits, each equal to 1 with
probability ``1/2 + delta``.  By the piling-up lemma the parity deviates
from 1/2 by ``eps = 2^(n-1) delta^n``; that is the largest excess over 1/2
with which anyone can guess a setting.

Two ways of handing that excess to an adversary are modeled:

``reveal`` (default)
    Settings are uniform.  A side channel shows the adversary the true
    setting with probability ``2 eps``; otherwise its guess is a fair coin.
``bias``
    Settings themselves are biased by ``eps`` toward the parity-0 value
    (setting 1 for even ``n``); the adversary always guesses the likelier one.

Trials are 1 us slots.  A detection lands at ``latency + jitter`` ns into
the slot, jitter Gaussian with the pump-pulse FWHM, rounded to whole ns and
clipped to the measurement window.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .config import ConfigError, get_float, get_int, get_str
from .model import EberhardState, ExperimentParams, SettingAngles, outcome_probabilities
from .records import NO_TIME, TrialBatch
from .stats import CountTable
from .streams import normals, uniforms

SLOT_NS = 1000.0
LATENCY_NS = 250.0
PULSE_FWHM_NS = 12.0
WINDOW_NS = (200, 320)
CHUNK = 1 << 20
CHANNEL_MODES = ("reveal", "bias")

_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def parity_epsilon(delta: float, n: int) -> float:
    """Excess predictability of the XOR of ``n`` bits, each 1 with probability 1/2 + delta."""
    if not 0.0 <= delta < 0.5:
        raise ValueError(f"raw bit bias must lie in [0, 1/2), got {delta!r}")
    if int(n) != n or n < 1:
        raise ValueError(f"number of raw bits must be a positive integer, got {n!r}")
    return 2.0 ** (n - 1) * delta ** n


@dataclass(frozen=True)
class RngModel:
    raw_bit_bias: float = 0.0
    bits_per_setting: int = 4
    channel: str = "reveal"

    def __post_init__(self):
        parity_epsilon(self.raw_bit_bias, self.bits_per_setting)
        if self.channel not in CHANNEL_MODES:
            raise ValueError(f"channel must be one of {CHANNEL_MODES}, got {self.channel!r}")

    @property
    def epsilon(self) -> float:
        return parity_epsilon(self.raw_bit_bias, self.bits_per_setting)

    @property
    def p_setting1(self) -> float:
        """Probability of setting 1 (parity 0)."""
        if self.channel == "reveal":
            return 0.5
        return 0.5 + 2.0 ** (self.bits_per_setting - 1) * (-self.raw_bit_bias) ** self.bits_per_setting

    def settings(self, u: np.ndarray) -> np.ndarray:
        return np.where(u < self.p_setting1, 1, 2).astype(np.uint8)

    def guesses(self, settings: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Adversary's guess of each setting; correct with probability 1/2 + epsilon."""
        if self.channel == "bias":
            likely = 1 if self.p_setting1 >= 0.5 else 2
            return np.full(len(settings), likely, dtype=np.uint8)
        reveal = 2.0 * self.epsilon
        coin = np.where((u - reveal) / (1.0 - reveal) < 0.5, 1, 2).astype(np.uint8)
        return np.where(u < reveal, settings, coin).astype(np.uint8)

    def raw_bit_settings(self, n_trials: int, rng: np.random.Generator) -> np.ndarray:
        """Reference path: settings from an explicit XOR of biased raw bits."""
        bits = rng.random((n_trials, self.bits_per_setting)) < 0.5 + self.raw_bit_bias
        parity = np.bitwise_xor.reduce(bits, axis=1)
        return np.where(parity, 2, 1).astype(np.uint8)


def rng_from_config(cfg: dict[str, str]) -> RngModel:
    try:
        return RngModel(
            raw_bit_bias=get_float(cfg, "raw_bit_bias", 0.0),
            bits_per_setting=get_int(cfg, "bits_per_setting", 4),
            channel=get_str(cfg, "guess_channel", "reveal"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def detect_times(seed: int, name: str, start: int, count: int) -> np.ndarray:
    jitter = normals(seed, name, start, count) * (PULSE_FWHM_NS * _FWHM_TO_SIGMA)
    t = np.rint(LATENCY_NS + jitter)
    return np.clip(t, *WINDOW_NS).astype(np.uint32)


class QuantumSource:
    """Draws trials from the model's outcome table with counter-based streams."""

    def __init__(self, params: ExperimentParams, angles: SettingAngles, state: EberhardState,
                 rng: RngModel, seed: int):
        self.table = outcome_probabilities(state, angles, params)
        self.cum = self.table.cumulative()
        self.rng = rng
        self.seed = int(seed)

    def _draw(self, start: int, count: int):
        sa = self.rng.settings(uniforms(self.seed, "setting_a", start, count))
        sb = self.rng.settings(uniforms(self.seed, "setting_b", start, count))
        pair = (sa - 1) * 2 + (sb - 1)
        u = uniforms(self.seed, "outcome", start, count)
        cum = self.cum[pair]
        k = (u >= cum[:, 0]).astype(np.int64) + (u >= cum[:, 1]) + (u >= cum[:, 2])
        return sa, sb, k

    def chunk(self, start: int, count: int) -> TrialBatch:
        sa, sb, k = self._draw(start, count)
        oa = k <= 1           # "++" or "+0"
        ob = (k == 0) | (k == 2)
        ta = np.where(oa, detect_times(self.seed, "time_a", start, count), NO_TIME).astype(np.uint32)
        tb = np.where(ob, detect_times(self.seed, "time_b", start, count), NO_TIME).astype(np.uint32)
        return TrialBatch(np.arange(start, start + count, dtype=np.uint64), sa, sb, oa, ob, ta, tb)

    def chunk_counts(self, start: int, count: int) -> CountTable:
        sa, sb, k = self._draw(start, count)
        code = ((sa.astype(np.int64) - 1) * 2 + (sb - 1)) * 4 + k
        return CountTable(np.bincount(code, minlength=16).reshape(2, 2, 4))

    def iter_chunks(self, n_trials: int, chunk: int = CHUNK) -> Iterator[TrialBatch]:
        for start in range(0, n_trials, chunk):
            yield self.chunk(start, min(chunk, n_trials - start))


def simulate_quantum_run(params: ExperimentParams, angles: SettingAngles, state: EberhardState,
                         rng: RngModel, n_trials: int, seed: int) -> tuple[TrialBatch, CountTable]:
    """Whole run in memory: the trial stream and its counts."""
    if n_trials < 0:
        raise ValueError("n_trials must be non-negative")
    source = QuantumSource(params, angles, state, rng, seed)
    batch = TrialBatch.concat(source.iter_chunks(n_trials))
    return batch, batch.counts()


def quantum_counts(params: ExperimentParams, angles: SettingAngles, state: EberhardState,
                   rng: RngModel, n_trials: int, seed: int, *, chunk: int = CHUNK,
                   workers: int = 1) -> CountTable:
    """Counts only, for long runs; identical to aggregating :func:`simulate_quantum_run`."""
    if n_trials < 0:
        raise ValueError("n_trials must be non-negative")
    source = QuantumSource(params, angles, state, rng, seed)
    spans = [(s, min(chunk, n_trials - s)) for s in range(0, n_trials, chunk)]
    total = CountTable()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            for part in pool.map(lambda sc: source.chunk_counts(*sc), spans):
                total = total + part
    else:
        for s, c in spans:
            total = total + source.chunk_counts(s, c)
    return total
