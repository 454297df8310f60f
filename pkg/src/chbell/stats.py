"""Count tables, the J estimate, and local-realism p-values.

Win / loss reduction
--------------------
A trial is a *win* if settings are (a1, b1) and both sides click, and a
*loss* for (a1, b2, "+0"), (a2, b1, "0+") or (a2, b2, "++").  With uniform
settings ``J = 4 (P[win] - P[loss])``.

Consider any local strategy fixed before the settings are drawn (it may
depend on the full past record).  A deterministic strategy that can win
(both sides click on setting 1) always has at least one losing setting
pair ``l``, so given an event the win probability is at most
``P(11) / (P(11) + P(l))``.  If each side's setting can be guessed with
probability at most ``1/2 + eps`` independently of the other side, this is
maximized for ``l = (2, 2)`` and equals

    (1/2 + eps)^2 / ((1/2 + eps)^2 + (1/2 - eps)^2)  <=  1/2 + 2 eps.

Mixtures over strategies cannot exceed the largest ratio, so conditional
on the past and on an event happening, a win has probability at most
``q = 1/2 + 2 eps``.

Three p-values are computed from the win count K, loss count L and the
number of trials N:

``binomial_supermartingale`` (reported)
    Each event multiplies ``prod (p1/q)^win ((1-p1)/(1-q))^loss`` by a
    factor with conditional mean <= 1 for any ``p1 >= q``.  Mixing ``p1``
    uniformly over [1/2, 1] (components with ``p1 < q`` are replaced by the
    constant 1) keeps a non-negative supermartingale with initial value 1,
    and Ville's inequality makes ``min(1, 1/M)`` a valid p-value even
    when the adversary decides adaptively how many events to produce.

``binomial_tail``
    ``P[Binomial(K + L, q) >= K]``.  Exact when the number of events does
    not depend on the running score, but a memory-equipped adversary that
    stops producing events once ahead can push its false-rejection rate
    well above the nominal level.  Kept as a comparison figure.

``azuma``
    Azuma-Hoeffding bound on ``(1 - q) K - q L`` over all N trials
    (increments lie in an interval of length 1).  Valid under full memory
    but weak when events are rare.

All tails are evaluated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, betaln, logsumexp, ndtri_exp
from scipy.stats import binom

METHODS = ("binomial_supermartingale", "binomial_tail", "azuma")
REPORTED_METHOD = "binomial_supermartingale"

_LN10 = math.log(10.0)
_EXACT_MAX_N = 2000


class UndefinedEstimateError(ValueError):
    pass


@dataclass(frozen=True)
class CountTable:
    """``counts[i, j, k]``: trials with settings (a_{i+1}, b_{j+1}) and outcome ``OUTCOMES[k]``."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 4), dtype=np.int64))

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (2, 2, 4):
            raise ValueError(f"count table must have shape (2, 2, 4), got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_trials(cls, setting_a, setting_b, outcome_a, outcome_b) -> "CountTable":
        """Aggregate per-trial arrays (settings in {1, 2}, outcomes as click booleans)."""
        sa = np.asarray(setting_a, dtype=np.int64) - 1
        sb = np.asarray(setting_b, dtype=np.int64) - 1
        oa = np.asarray(outcome_a, dtype=bool)
        ob = np.asarray(outcome_b, dtype=bool)
        code = (sa * 2 + sb) * 4 + (~oa) * 2 + (~ob)
        return cls(np.bincount(code, minlength=16).reshape(2, 2, 4))

    def __add__(self, other: "CountTable") -> "CountTable":
        return CountTable(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, CountTable) and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash(self.counts.tobytes())

    def n(self, i: int, j: int, outcome: str) -> int:
        from .model import OUTCOMES
        return int(self.counts[i - 1, j - 1, OUTCOMES.index(outcome)])

    @property
    def pair_totals(self) -> np.ndarray:
        return self.counts.sum(axis=2)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def wins(self) -> int:
        return int(self.counts[0, 0, 0])

    @property
    def losses(self) -> int:
        return int(self.counts[0, 1, 1] + self.counts[1, 0, 2] + self.counts[1, 1, 0])

    def to_dict(self) -> dict:
        from .model import OUTCOMES
        return {
            f"a{i + 1}b{j + 1}": {o: int(self.counts[i, j, k]) for k, o in enumerate(OUTCOMES)}
            for i in range(2) for j in range(2)
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CountTable":
        from .model import OUTCOMES
        counts = np.zeros((2, 2, 4), dtype=np.int64)
        for i in range(2):
            for j in range(2):
                for k, o in enumerate(OUTCOMES):
                    counts[i, j, k] = data[f"a{i + 1}b{j + 1}"][o]
        return cls(counts)


def _conditional_frequencies(counts: CountTable) -> np.ndarray:
    totals = counts.pair_totals
    needed = [(0, 0), (0, 1), (1, 0), (1, 1)]
    missing = [f"a{i + 1}b{j + 1}" for i, j in needed if totals[i, j] == 0]
    if missing:
        raise UndefinedEstimateError(f"no trials for setting pair(s) {', '.join(missing)}")
    return counts.counts / totals[:, :, None]


def j_estimate(counts: CountTable) -> float:
    """Plug-in J from conditional relative frequencies."""
    f = _conditional_frequencies(counts)
    return float(f[0, 0, 0] - f[0, 1, 1] - f[1, 0, 2] - f[1, 1, 0])


def j_standard_error(counts: CountTable) -> float:
    f = _conditional_frequencies(counts)
    n = counts.pair_totals
    terms = [f[0, 0, 0], f[0, 1, 1], f[1, 0, 2], f[1, 1, 0]]
    sizes = [n[0, 0], n[0, 1], n[1, 0], n[1, 1]]
    return math.sqrt(sum(p * (1 - p) / m for p, m in zip(terms, sizes)))


# --- log-space binomial tails ---------------------------------------------------

def _log_upper_series(k: int, n: int, q: float) -> float:
    """log P[X >= k] for a far upper tail: leading pmf times a decreasing-ratio series."""
    head = float(binom.logpmf(k, n, q))
    odds = q / (1.0 - q)
    total, log_term, i = 1.0, 0.0, 0
    while i < n - k:
        m = min(4096, n - k - i)
        idx = np.arange(i, i + m, dtype=float)
        steps = np.log((n - k - idx) / (k + idx + 1.0) * odds)
        cum = log_term + np.cumsum(steps)
        total += float(np.exp(cum).sum())
        log_term = float(cum[-1])
        i += m
        ratio = math.exp(steps[-1])
        if ratio < 1.0 and math.exp(log_term) * ratio / (1.0 - ratio) < 1e-17 * total:
            break
    return head + math.log(total)


def log_binom_sf(k: int, n: int, q: float) -> float:
    """Natural log of ``P[X >= k]`` for ``X ~ Binomial(n, q)``, without underflow."""
    k, n = int(k), int(n)
    if n < 0 or not 0.0 <= q <= 1.0:
        raise ValueError(f"invalid binomial parameters n={n}, q={q}")
    if k <= 0:
        return 0.0
    if k > n or q == 0.0:
        return -math.inf
    if q == 1.0:
        return 0.0
    if n <= _EXACT_MAX_N:
        lp = binom.logpmf(np.arange(n + 1), n, q)
        upper = float(logsumexp(lp[k:]))
        if upper > -math.log(2.0):
            return math.log1p(-math.exp(float(logsumexp(lp[:k]))))
        return upper
    upper = float(betainc(k, n - k + 1, q))
    if upper >= 0.5:
        return math.log1p(-float(betainc(n - k + 1, k, 1.0 - q)))
    if upper > 1e-280:
        return math.log(upper)
    return _log_upper_series(k, n, q)


def log_binom_cdf(k: int, n: int, q: float) -> float:
    """Natural log of ``P[X <= k]``."""
    return log_binom_sf(int(n) - int(k), n, 1.0 - q)


# --- p-values -------------------------------------------------------------------

def win_bound(epsilon: float) -> float:
    """Largest conditional win probability for a local strategy with setting predictability 1/2 + eps."""
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 1/2), got {epsilon!r}")
    return min(0.5 + 2.0 * epsilon, 1.0)


@dataclass(frozen=True)
class PValueResult:
    log10_p: float
    K: int
    L: int
    q: float
    method: str
    n_trials: int | None = None

    @property
    def p(self) -> float:
        return 10.0 ** self.log10_p

    def to_dict(self) -> dict:
        return {"log10_p": self.log10_p, "K": self.K, "L": self.L, "q": self.q,
                "method": self.method, "n_trials": self.n_trials}


def _log_mixture_evidence(K: int, L: int, q: float) -> float:
    # M = (2q - 1) + 2 * int_q^1 (p/q)^K ((1-p)/(1-q))^L dp
    #   = (2q - 1) + 2 B(K+1, L+1) P[Bin(K+L+1, q) <= K] / (q^K (1-q)^L)
    log_integral = (
        math.log(2.0) + betaln(K + 1, L + 1) + log_binom_cdf(K, K + L + 1, q)
        - K * math.log(q) - L * math.log1p(-q)
    )
    if q > 0.5:
        return float(np.logaddexp(math.log(2.0 * q - 1.0), log_integral))
    return log_integral


def pvalue_from_counts(K: int, L: int, epsilon: float, method: str = REPORTED_METHOD,
                       n_trials: int | None = None) -> PValueResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    K, L = int(K), int(L)
    if K < 0 or L < 0:
        raise ValueError("win and loss counts must be non-negative")
    q = win_bound(epsilon)
    if K + L == 0 or q >= 1.0:
        log_p = 0.0
    elif method == "binomial_tail":
        log_p = log_binom_sf(K, K + L, q)
    elif method == "binomial_supermartingale":
        log_p = min(0.0, -_log_mixture_evidence(K, L, q))
    else:
        if n_trials is None:
            raise ValueError("the azuma bound needs the total number of trials")
        excess = (1.0 - q) * K - q * L
        log_p = -2.0 * excess * excess / n_trials if excess > 0 else 0.0
    return PValueResult(log_p / _LN10 + 0.0, K, L, q, method, n_trials)


def pvalue(counts: CountTable, epsilon: float, method: str = REPORTED_METHOD) -> PValueResult:
    """Local-realism p-value for a run; see the module docstring for the methods."""
    return pvalue_from_counts(counts.wins, counts.losses, epsilon, method, counts.total)


def sigma_equivalent(p: float | None = None, *, log10_p: float | None = None) -> float:
    """One-sided Gaussian z with upper tail probability p (give p or log10 p)."""
    if (p is None) == (log10_p is None):
        raise ValueError("give exactly one of p or log10_p")
    if p is not None:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {p!r}")
        log_p = math.log(p)
    else:
        if not log10_p <= 0.0:
            raise ValueError(f"log10 p must be <= 0, got {log10_p!r}")
        log_p = log10_p * _LN10
    return float(-ndtri_exp(log_p))
