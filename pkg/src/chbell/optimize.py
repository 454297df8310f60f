"""Choice of state and analyzer angles, and critical detection efficiency.

Internally the state is parameterized by ``rho`` with ``r = tan(rho)``, so
the amplitudes of |HV> and |VH> are ``sin(rho)`` and ``cos(rho)``.  This
keeps the search bounded when the best state drifts toward a product
state (``|r| -> 0`` or ``|r| -> inf``), which happens near the efficiency
threshold.

The model has three discrete symmetries that leave every outcome
probability unchanged:

* Alice reflection ``(r, a, b) -> (-r, -a, b)``;
* joint reflection ``(r, a, b) -> (r, -a, -b)``;
* quarter turn ``(r, a, b) -> (1/r, a + 90, b + 90)``.

:func:`canonicalize` uses them to report a unique representative with
``b1`` in (-45, 0] (or exactly 45) and ``r <= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .model import (
    P0, PP, ZP,
    EberhardState,
    ExperimentParams,
    SettingAngles,
    _coeffs,
    _j_from_rows,
    _rows,
    j_value,
    outcome_probabilities,
    reduce_angle,
)

N_STARTS = 20
R_RANGE = (0.1, 10.0)
_NM_OPTIONS = dict(xatol=1e-10, fatol=1e-14, maxiter=20000, maxfev=40000)
_RATIO_OPTIONS = dict(xatol=1e-9, fatol=1e-13, maxiter=4000, maxfev=6000)


@dataclass
class OptimizationResult:
    r: float
    angles: SettingAngles
    j_star: float
    trace: list[float] = field(repr=False)
    n_starts: int = N_STARTS
    failed_starts: int = 0
    seed: int | None = None

    @property
    def state(self) -> EberhardState:
        return EberhardState(self.r)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "angles_deg": {"a1": self.angles.a1, "a2": self.angles.a2,
                           "b1": self.angles.b1, "b2": self.angles.b2},
            "j_star": self.j_star,
            "n_starts": self.n_starts,
            "failed_starts": self.failed_starts,
            "iterations": len(self.trace),
            "seed": self.seed,
        }


def canonicalize(r: float, angles: SettingAngles) -> tuple[float, SettingAngles]:
    """Pick the symmetry-equivalent point with ``r <= 0`` and ``b1`` in (-45, 0] or 45."""
    a1, a2, b1, b2 = angles.a1, angles.a2, angles.b1, angles.b2
    if not (-45.0 < b1 <= 45.0) and r != 0.0:
        a1, a2, b1, b2 = (reduce_angle(x + 90.0) for x in (a1, a2, b1, b2))
        r = 1.0 / r
    if r > 0.0:
        r, a1, a2 = -r, -a1, -a2
    if 0.0 < b1 < 45.0:
        a1, a2, b1, b2 = -a1, -a2, -b1, -b2
    return r, SettingAngles(a1, a2, b1, b2)


def _point_rows(x, k):
    rho, a1, a2, b1, b2 = x
    return _rows(math.sin(rho), math.cos(rho), (a1, a2), (b1, b2), k)


def _j_objective(x, k) -> float:
    return _j_from_rows(_point_rows(x, k))


def _win_loss_ratio(x, k) -> float:
    """(J) / (win + loss): same sign as J, but scale-free as the state nears a product state."""
    rows = _point_rows(x, k)
    win = rows[0][0][PP]
    loss = rows[0][1][P0] + rows[1][0][ZP] + rows[1][1][PP]
    total = win + loss
    if not total > 0.0:
        return -1.0
    return (win - loss) / total


def _draw_starts(rng: np.random.Generator, n: int) -> list[np.ndarray]:
    starts = []
    for _ in range(n):
        r = rng.choice([-1.0, 1.0]) * rng.uniform(*R_RANGE)
        angles = np.radians(rng.uniform(-90.0, 90.0, size=4))
        starts.append(np.r_[math.atan(r), angles])
    return starts


def _nelder_mead(fun, x0, trace=None, best=None, options=_NM_OPTIONS):
    """One simplex run maximizing ``fun``; optionally appends best-so-far values to ``trace``."""
    def neg(x):
        value = fun(x)
        return -value if math.isfinite(value) else math.inf

    def callback(intermediate_result):
        if trace is not None:
            best[0] = max(best[0], -intermediate_result.fun)
            trace.append(best[0])

    res = minimize(neg, x0, method="Nelder-Mead", options=options,
                   callback=callback if trace is not None else None)
    return res.x, -res.fun


def optimize_settings(params: ExperimentParams, seed: int = 0, n_starts: int = N_STARTS) -> OptimizationResult:
    """Maximize J over (r, a1, a2, b1, b2) with a seeded multi-start simplex search."""
    k = _coeffs(params)
    scale = params.pair_probability() or 1.0

    def objective(x):
        return _j_objective(x, k) / scale

    rng = np.random.default_rng(seed)
    trace: list[float] = []
    best_so_far = [-math.inf]
    best_x, best_val, failed = None, -math.inf, 0
    for x0 in _draw_starts(rng, n_starts):
        x, val = _nelder_mead(objective, x0, trace, best_so_far)
        if not math.isfinite(val):
            failed += 1
            continue
        if val > best_val:
            best_x, best_val = x, val
    if best_x is None:
        raise RuntimeError("every optimization start failed")

    # restart from the winner until the simplex stops finding improvements
    for _ in range(5):
        x, val = _nelder_mead(objective, best_x, trace, best_so_far)
        improved = val > best_val + 1e-15 * abs(best_val)
        if val > best_val:
            best_x, best_val = x, val
        if not improved:
            break

    rho = math.remainder(best_x[0], math.pi)
    deg = np.degrees(best_x[1:])
    if abs(rho) > math.pi / 4:
        # quarter turn: keeps r finite when the optimum sits at a product state
        r, deg = math.cos(rho) / math.sin(rho), deg + 90.0
    else:
        r = math.tan(rho)
    r, angles = canonicalize(r, SettingAngles(*deg))
    j_star = j_value(outcome_probabilities(EberhardState(r), angles, params))
    return OptimizationResult(
        r=r, angles=angles, j_star=j_star,
        trace=[v * scale for v in trace],
        n_starts=n_starts, failed_starts=failed, seed=seed,
    )


def max_win_loss_ratio(params: ExperimentParams, starts: list[np.ndarray]) -> tuple[float, np.ndarray]:
    """Best value of (win - loss)/(win + loss) over state and angles, from the given starts."""
    k = _coeffs(params)
    best_x, best_val = None, -math.inf
    for x0 in starts:
        x, val = _nelder_mead(lambda x: _win_loss_ratio(x, k), x0, options=_RATIO_OPTIONS)
        if val > best_val:
            best_x, best_val = x, val
    return best_val, best_x


def critical_efficiency(
    visibility: float,
    background: float,
    *,
    pair_rate: float = 1.0,
    pulse_rate: float = 1.0,
    multi_pair_model: str = "none",
    seed: int = 0,
    n_starts: int = 6,
    xtol: float = 1e-6,
) -> float | None:
    """Smallest symmetric efficiency at which some state and angles give J > 0.

    Returns ``None`` when even unit efficiency cannot violate the inequality.
    The default source emits exactly one pair per trial.
    """
    base = ExperimentParams(1.0, 1.0, visibility, background, background,
                            pair_rate, pulse_rate, multi_pair_model)
    starts = _draw_starts(np.random.default_rng(seed), n_starts)
    warm: list[np.ndarray] = []

    def ratio(eta: float) -> float:
        value, x = max_win_loss_ratio(base.symmetric(eta), warm[-1:] + starts)
        if value > 0:
            warm[:] = [x]
        return value

    if ratio(1.0) <= 0.0:
        return None
    lo = 0.5
    if ratio(lo) > 0.0:
        raise RuntimeError(f"violation found at efficiency {lo}; below any known threshold")
    return brentq(ratio, lo, 1.0, xtol=xtol)
