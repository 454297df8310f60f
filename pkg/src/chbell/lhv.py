"""Local-hidden-variable adversaries.

A strategy is a list of hidden-variable values ``lambda`` with, per side, the
click probability given ``lambda`` and the *local* setting only
(``response_a[lam, setting - 1]``).  Storing responses as ``(n_lambda, 2)``
arrays makes non-local strategies unrepresentable.

Memory is handled by a policy that picks ``lambda`` for each trial from the
past record of its own run (and, for predictability-exploiting adversaries,
from the setting guesses the RNG model leaks).  Runs are simulated in
lockstep: one numpy step per trial covers many independent runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import NO_TIME, TrialBatch
from .simulate import RngModel, detect_times
from .stats import CountTable
from .streams import uniforms

KINDS = ("deterministic_local", "stochastic_local", "memory_lhv", "predictability_exploiting")


def deterministic_responses() -> tuple[np.ndarray, np.ndarray]:
    """The 16 deterministic local strategies; bits of the index are (A1, A2, B1, B2), A1 most significant."""
    idx = np.arange(16)
    bits = (idx[:, None] >> np.array([3, 2, 1, 0])) & 1
    return bits[:, :2].astype(float), bits[:, 2:].astype(float)


def strategy_index(a1: int, a2: int, b1: int, b2: int) -> int:
    return a1 << 3 | a2 << 2 | b1 << 1 | b2


ALWAYS_PLUS = strategy_index(1, 1, 1, 1)
SILENT = strategy_index(0, 0, 0, 0)


def exact_j(response_a, response_b, weights=None) -> np.ndarray:
    """Exact J of memoryless strategies.

    ``response_a`` and ``response_b`` have shape ``(..., n_lambda, 2)``; the
    result has the leading shape.
    """
    ra, rb = np.asarray(response_a, float), np.asarray(response_b, float)
    a1, a2, b1, b2 = ra[..., 0], ra[..., 1], rb[..., 0], rb[..., 1]
    per_lambda = a1 * b1 - a1 * (1 - b2) - (1 - a2) * b1 - a2 * b2
    if weights is None:
        weights = np.full(per_lambda.shape[-1], 1.0 / per_lambda.shape[-1])
    return (per_lambda * np.asarray(weights, float)).sum(axis=-1)


# --- memory policies --------------------------------------------------------------

class MemoryPolicy:
    """Chooses a strategy index per run and trial; sees only the run's past and the leaked guesses."""

    uses_guesses = False

    def start(self, n_runs: int, n_trials: int) -> dict:
        return {"K": np.zeros(n_runs, np.int64), "L": np.zeros(n_runs, np.int64)}

    def choose(self, state: dict, t: int, guess_a: np.ndarray, guess_b: np.ndarray,
               u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, state: dict, lam, sa, sb, oa, ob) -> None:
        win = (sa == 1) & (sb == 1) & oa & ob
        loss = (((sa == 1) & (sb == 2) & oa & ~ob) | ((sa == 2) & (sb == 1) & ~oa & ob)
                | ((sa == 2) & (sb == 2) & oa & ob))
        state["K"] += win
        state["L"] += loss


@dataclass
class FixedMixture(MemoryPolicy):
    """Memoryless: ``lambda`` drawn from ``weights`` every trial."""

    weights: np.ndarray

    def choose(self, state, t, guess_a, guess_b, u):
        cdf = np.cumsum(self.weights)
        return np.minimum(np.searchsorted(cdf / cdf[-1], u, side="right"), len(cdf) - 1)


@dataclass
class SwitchAt(MemoryPolicy):
    """Uses ``first`` for trials before ``fraction * n_trials`` and ``second`` after."""

    first: MemoryPolicy
    second: MemoryPolicy
    fraction: float = 0.5

    @property
    def uses_guesses(self):
        return self.first.uses_guesses or self.second.uses_guesses

    def start(self, n_runs, n_trials):
        state = super().start(n_runs, n_trials)
        state["switch"] = int(self.fraction * n_trials)
        state["first"] = self.first.start(n_runs, n_trials)
        state["second"] = self.second.start(n_runs, n_trials)
        return state

    def choose(self, state, t, guess_a, guess_b, u):
        if t < state["switch"]:
            return self.first.choose(state["first"], t, guess_a, guess_b, u)
        return self.second.choose(state["second"], t, guess_a, guess_b, u)

    def observe(self, state, lam, sa, sb, oa, ob):
        super().observe(state, lam, sa, sb, oa, ob)
        self.first.observe(state["first"], lam, sa, sb, oa, ob)
        self.second.observe(state["second"], lam, sa, sb, oa, ob)


@dataclass
class RepeatWinner(MemoryPolicy):
    """Replays the deterministic strategy that produced the last win, otherwise a fresh random one."""

    def start(self, n_runs, n_trials):
        state = super().start(n_runs, n_trials)
        state["last"] = np.full(n_runs, ALWAYS_PLUS)
        return state

    def choose(self, state, t, guess_a, guess_b, u):
        fresh = np.minimum((u * 16).astype(np.int64), 15)
        return np.where(u < 0.5, state["last"], fresh)

    def observe(self, state, lam, sa, sb, oa, ob):
        k_before = state["K"].copy()
        super().observe(state, lam, sa, sb, oa, ob)
        state["last"] = np.where(state["K"] > k_before, lam, state["last"])


@dataclass
class StopWhenAhead(MemoryPolicy):
    """Plays ``inner`` until the running win excess reaches ``z`` standard deviations, then stays silent."""

    inner: MemoryPolicy = field(default_factory=lambda: FixedMixture(np.eye(16)[ALWAYS_PLUS]))
    z: float = 2.5
    q: float = 0.5

    @property
    def uses_guesses(self):
        return self.inner.uses_guesses

    def start(self, n_runs, n_trials):
        state = super().start(n_runs, n_trials)
        state["inner"] = self.inner.start(n_runs, n_trials)
        state["stopped"] = np.zeros(n_runs, bool)
        return state

    def choose(self, state, t, guess_a, guess_b, u):
        lam = self.inner.choose(state["inner"], t, guess_a, guess_b, u)
        return np.where(state["stopped"], SILENT, lam)

    def observe(self, state, lam, sa, sb, oa, ob):
        super().observe(state, lam, sa, sb, oa, ob)
        self.inner.observe(state["inner"], lam, sa, sb, oa, ob)
        n = state["K"] + state["L"]
        excess = state["K"] - self.q * n
        ahead = (n > 0) & (excess >= self.z * np.sqrt(self.q * (1 - self.q) * np.maximum(n, 1)))
        state["stopped"] |= ahead


@dataclass
class ExploitGuess(MemoryPolicy):
    """Clicks on both sides only when the guesses say (a1, b1); silent otherwise."""

    uses_guesses = True

    def choose(self, state, t, guess_a, guess_b, u):
        return np.where((guess_a == 1) & (guess_b == 1), ALWAYS_PLUS, SILENT)


# --- strategies ---------------------------------------------------------------------

@dataclass
class AdversaryStrategy:
    kind: str
    response_a: np.ndarray
    response_b: np.ndarray
    policy: MemoryPolicy | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        self.response_a = np.asarray(self.response_a, float)
        self.response_b = np.asarray(self.response_b, float)
        for side, resp in (("Alice", self.response_a), ("Bob", self.response_b)):
            if resp.ndim != 2 or resp.shape[1] != 2:
                raise ValueError(
                    f"{side}'s response must have shape (n_lambda, 2): a click probability per "
                    f"hidden value and local setting; got {resp.shape}"
                )
            if not ((resp >= 0) & (resp <= 1)).all():
                raise ValueError(f"{side}'s click probabilities must lie in [0, 1]")
        if self.response_a.shape != self.response_b.shape:
            raise ValueError("both sides must share the same hidden-variable values")
        n_lambda = len(self.response_a)
        if self.policy is None:
            w = np.full(n_lambda, 1.0 / n_lambda) if self.weights is None else np.asarray(self.weights, float)
            if w.shape != (n_lambda,) or (w < 0).any() or not np.isclose(w.sum(), 1.0):
                raise ValueError("weights must be a probability vector over the hidden values")
            self.weights = w
            self.policy = FixedMixture(w)
        if self.policy.uses_guesses and self.kind != "predictability_exploiting":
            raise ValueError("only predictability_exploiting strategies may read setting guesses")

    @property
    def memoryless(self) -> bool:
        return isinstance(self.policy, FixedMixture)

    def exact_j(self) -> float:
        if not self.memoryless:
            raise ValueError("exact J is defined for memoryless strategies only")
        return float(exact_j(self.response_a, self.response_b, self.policy.weights))


def deterministic_strategy(a1: int, a2: int, b1: int, b2: int) -> AdversaryStrategy:
    ra, rb = deterministic_responses()
    w = np.zeros(16)
    w[strategy_index(a1, a2, b1, b2)] = 1.0
    return AdversaryStrategy("deterministic_local", ra, rb, weights=w)


def stochastic_strategy(response_a, response_b, weights=None) -> AdversaryStrategy:
    return AdversaryStrategy("stochastic_local", response_a, response_b, weights=weights)


def memory_strategy(policy: MemoryPolicy) -> AdversaryStrategy:
    ra, rb = deterministic_responses()
    kind = "predictability_exploiting" if policy.uses_guesses else "memory_lhv"
    return AdversaryStrategy(kind, ra, rb, policy=policy)


# --- simulation ---------------------------------------------------------------------

def local_outcomes(response_a, response_b, lam, setting_a, setting_b, u_a, u_b):
    """Click decisions; Alice's uses only her response row, setting and uniform."""
    oa = u_a < response_a[lam, setting_a - 1]
    ob = u_b < response_b[lam, setting_b - 1]
    return oa, ob


def _run_block(strategy: AdversaryStrategy, rng: RngModel, seed: int,
               n_trials: int, first_run: int, n_runs: int):
    """Simulate runs ``first_run .. first_run + n_runs - 1``; arrays shaped (n_runs, n_trials)."""
    start, count = first_run * n_trials, n_runs * n_trials
    shape = (n_runs, n_trials)

    def draw(name):
        return uniforms(seed, name, start, count).reshape(shape)

    sa = rng.settings(draw("setting_a")).reshape(shape)
    sb = rng.settings(draw("setting_b")).reshape(shape)
    u_lam, u_a, u_b = draw("lambda"), draw("click_a"), draw("click_b")
    policy = strategy.policy
    if policy.uses_guesses:
        ga = rng.guesses(sa.ravel(), draw("guess_a").ravel()).reshape(shape)
        gb = rng.guesses(sb.ravel(), draw("guess_b").ravel()).reshape(shape)
    else:
        ga = gb = np.zeros(shape, np.uint8)

    if strategy.memoryless:
        lam = policy.choose(None, 0, None, None, u_lam)
        oa, ob = local_outcomes(strategy.response_a, strategy.response_b, lam, sa, sb, u_a, u_b)
        return sa, sb, oa, ob

    oa = np.empty(shape, bool)
    ob = np.empty(shape, bool)
    state = policy.start(n_runs, n_trials)
    for t in range(n_trials):
        lam = policy.choose(state, t, ga[:, t], gb[:, t], u_lam[:, t])
        oa[:, t], ob[:, t] = local_outcomes(strategy.response_a, strategy.response_b, lam,
                                            sa[:, t], sb[:, t], u_a[:, t], u_b[:, t])
        policy.observe(state, lam, sa[:, t], sb[:, t], oa[:, t], ob[:, t])
    return sa, sb, oa, ob


def simulate_lhv_run(strategy: AdversaryStrategy, rng: RngModel, n_trials: int,
                     seed: int) -> tuple[TrialBatch, CountTable]:
    """One adversarial run as a trial stream plus its counts."""
    if n_trials < 0:
        raise ValueError("n_trials must be non-negative")
    if n_trials == 0:
        return TrialBatch.empty(), CountTable()
    sa, sb, oa, ob = (x[0] for x in _run_block(strategy, rng, seed, n_trials, 0, 1))
    ta = np.where(oa, detect_times(seed, "time_a", 0, n_trials), NO_TIME).astype(np.uint32)
    tb = np.where(ob, detect_times(seed, "time_b", 0, n_trials), NO_TIME).astype(np.uint32)
    batch = TrialBatch(np.arange(n_trials, dtype=np.uint64), sa, sb, oa, ob, ta, tb)
    return batch, batch.counts()


def lhv_run_counts(strategy: AdversaryStrategy, rng: RngModel, n_runs: int, n_trials: int,
                   seed: int, block_runs: int = 1000) -> np.ndarray:
    """Count tables of many independent runs, shape ``(n_runs, 2, 2, 4)``.

    Run ``k`` here is identical to ``simulate_lhv_run`` with the same seed
    only for ``k = 0``; later runs continue the same streams.
    """
    out = np.zeros((n_runs, 2, 2, 4), np.int64)
    for r0 in range(0, n_runs, block_runs):
        m = min(block_runs, n_runs - r0)
        sa, sb, oa, ob = _run_block(strategy, rng, seed, n_trials, r0, m)
        code = (((sa.astype(np.int64) - 1) * 2 + (sb - 1)) * 4 + (~oa) * 2 + (~ob))
        code += 16 * np.arange(m)[:, None]
        out[r0:r0 + m] = np.bincount(code.ravel(), minlength=16 * m).reshape(m, 2, 2, 4)
    return out


def false_rejection_rate(strategy: AdversaryStrategy, rng: RngModel, n_runs: int, n_trials: int,
                         alphas=(0.1, 0.01), method: str = "binomial_supermartingale",
                         seed: int = 0, epsilon: float | None = None) -> dict[float, float]:
    """Fraction of adversarial runs whose p-value is at most each alpha."""
    from .stats import pvalue_from_counts

    eps = rng.epsilon if epsilon is None else epsilon
    tables = lhv_run_counts(strategy, rng, n_runs, n_trials, seed)
    wins = tables[:, 0, 0, 0]
    losses = tables[:, 0, 1, 1] + tables[:, 1, 0, 2] + tables[:, 1, 1, 0]
    cache: dict[tuple[int, int], float] = {}
    log10_p = np.empty(n_runs)
    for k, (K, L) in enumerate(zip(wins, losses)):
        key = (int(K), int(L))
        if key not in cache:
            cache[key] = pvalue_from_counts(*key, eps, method, n_trials).log10_p
        log10_p[k] = cache[key]
    return {a: float(np.mean(log10_p <= np.log10(a))) for a in alphas}
