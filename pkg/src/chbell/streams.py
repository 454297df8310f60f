"""Counter-based random streams.

Every random number used by the simulators is addressed by
``(seed, stream name, index)``.  The stream key is a 128-bit hash of the
seed and the name; the index selects a block of ``BLOCK`` draws through the
Philox counter.  A chunk of trials therefore gets the same numbers no
matter how the run is split or in which order chunks are produced.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

BLOCK = 1 << 16


def stream_key(seed: int, name: str) -> np.ndarray:
    digest = hashlib.blake2b(f"{int(seed)}/{name}".encode(), digest_size=16).digest()
    return np.frombuffer(digest, dtype="<u8").copy()


def _block(key: np.ndarray, block: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=key, counter=int(block) << 64))
    return gen.random(BLOCK)


def uniforms(seed: int, name: str, start: int, count: int) -> np.ndarray:
    """Uniform [0, 1) draws with indices ``start .. start + count - 1`` of a named stream."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    if count == 0:
        return np.empty(0)
    key = stream_key(seed, name)
    first, last = start // BLOCK, (start + count - 1) // BLOCK
    if first == last:
        off = start - first * BLOCK
        return _block(key, first)[off:off + count]
    out = np.empty(count)
    pos = 0
    for b in range(first, last + 1):
        lo = max(start, b * BLOCK) - b * BLOCK
        hi = min(start + count, (b + 1) * BLOCK) - b * BLOCK
        out[pos:pos + hi - lo] = _block(key, b)[lo:hi]
        pos += hi - lo
    return out


def normals(seed: int, name: str, start: int, count: int) -> np.ndarray:
    """Standard normal draws by inversion of the matching uniforms."""
    u = uniforms(seed, name, start, count)
    # u == 0 would map to -inf; nudge it to the smallest positive double
    return ndtri(np.maximum(u, np.finfo(float).tiny))
