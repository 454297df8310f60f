"""Quantum forward model for a CH-Eberhard test with lossy, noisy detection.

Conventions
-----------
* Basis order for two-photon amplitudes is (HH, HV, VH, VV); the first
  letter is Alice's photon.
* A polarizer at angle ``theta`` (measured from H) transmits
  ``cos(theta)|H> + sin(theta)|V>``.  Outcome "+" is a click behind the
  transmitting port, "0" is no click.
* Visibility ``V`` mixes the pure state with white noise,
  ``V |psi><psi| + (1 - V) I/4``.
* Each arm detects each transmitted photon independently with its system
  efficiency and, independently of photons, registers a background click
  with probability ``background_*`` per trial.
* The number of pairs per trial is either Bernoulli(mu) (``none``: no
  multi-pair emission) or Poisson(mu) (``poissonian``) with
  ``mu = pair_rate / pulse_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, get_float, get_str

OUTCOMES = ("++", "+0", "0+", "00")
PP, P0, ZP, ZZ = range(4)
MULTI_PAIR_MODELS = ("none", "poissonian")


class InvalidParameterError(ValueError):
    pass


def _check_prob(name: str, value: float) -> None:
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {value!r}")


def reduce_angle(deg: float) -> float:
    """Map an angle in degrees onto (-90, 90]; polarization has period 180."""
    red = math.fmod(deg, 180.0)
    if red <= -90.0:
        red += 180.0
    elif red > 90.0:
        red -= 180.0
    return red


@dataclass(frozen=True)
class EberhardState:
    """``(|V>_A|H>_B + r |H>_A|V>_B) / sqrt(1 + r^2)``."""

    r: float

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise InvalidParameterError(f"state parameter r must be finite, got {self.r!r}")

    @property
    def coefficients(self) -> tuple[float, float]:
        """Real amplitudes of |HV> and |VH>."""
        norm = 1.0 / math.sqrt(1.0 + self.r * self.r)
        return self.r * norm, norm


@dataclass(frozen=True)
class SettingAngles:
    """Analyzer angles in degrees, stored reduced onto (-90, 90]."""

    a1: float
    a2: float
    b1: float
    b2: float

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameterError(f"angle {name} must be finite, got {value!r}")
            object.__setattr__(self, name, reduce_angle(float(value)))

    @property
    def alice(self) -> tuple[float, float]:
        return self.a1, self.a2

    @property
    def bob(self) -> tuple[float, float]:
        return self.b1, self.b2

    def radians(self) -> tuple[float, float, float, float]:
        return tuple(math.radians(a) for a in (self.a1, self.a2, self.b1, self.b2))


@dataclass(frozen=True)
class ExperimentParams:
    eta_a: float
    eta_b: float
    visibility: float = 1.0
    background_a: float = 0.0
    background_b: float = 0.0
    pair_rate: float = 1.0
    pulse_rate: float = 1.0
    multi_pair_model: str = "none"

    def __post_init__(self):
        for name in ("eta_a", "eta_b", "visibility", "background_a", "background_b"):
            _check_prob(name, getattr(self, name))
        if self.multi_pair_model not in MULTI_PAIR_MODELS:
            raise InvalidParameterError(
                f"multi_pair_model must be one of {MULTI_PAIR_MODELS}, got {self.multi_pair_model!r}"
            )
        if not (math.isfinite(self.pulse_rate) and self.pulse_rate > 0):
            raise InvalidParameterError(f"pulse_rate must be positive, got {self.pulse_rate!r}")
        if not (math.isfinite(self.pair_rate) and self.pair_rate >= 0):
            raise InvalidParameterError(f"pair_rate must be non-negative, got {self.pair_rate!r}")
        if self.multi_pair_model == "none" and self.mu > 1.0:
            raise InvalidParameterError(
                f"mean pairs per trial {self.mu:g} exceeds 1; use multi_pair_model='poissonian'"
            )

    @property
    def mu(self) -> float:
        """Mean number of pairs per trial."""
        return self.pair_rate / self.pulse_rate

    def pair_probability(self) -> float:
        """Probability that a trial contains at least one pair."""
        if self.multi_pair_model == "poissonian":
            return -math.expm1(-self.mu)
        return self.mu

    def symmetric(self, eta: float) -> "ExperimentParams":
        return ExperimentParams(
            eta, eta, self.visibility, self.background_a, self.background_b,
            self.pair_rate, self.pulse_rate, self.multi_pair_model,
        )


@dataclass(frozen=True)
class OutcomeProbabilityTable:
    """``probs[i, j, k]``: probability of outcome ``OUTCOMES[k]`` given settings (a_{i+1}, b_{j+1})."""

    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (2, 2, 4):
            raise InvalidParameterError(f"probability table must have shape (2, 2, 4), got {probs.shape}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def p(self, i: int, j: int, outcome: str) -> float:
        """Probability of ``outcome`` (e.g. ``"+0"``) for settings ``a_i``, ``b_j`` (1-based)."""
        return float(self.probs[i - 1, j - 1, OUTCOMES.index(outcome)])

    def alice_marginal(self) -> np.ndarray:
        """P(Alice "+") indexed [i, j]."""
        return self.probs[:, :, PP] + self.probs[:, :, P0]

    def bob_marginal(self) -> np.ndarray:
        return self.probs[:, :, PP] + self.probs[:, :, ZP]

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs.reshape(4, 4), axis=1)


def state_vector(state: EberhardState) -> np.ndarray:
    """Complex amplitudes over (HH, HV, VH, VV)."""
    c_hv, c_vh = state.coefficients
    return np.array([0.0, c_hv, c_vh, 0.0], dtype=complex)


# --- scalar core shared by the table builder and the optimizers --------------

def _coeffs(params: ExperimentParams) -> tuple:
    return (
        params.eta_a, params.eta_b, params.visibility,
        params.background_a, params.background_b,
        params.mu, params.multi_pair_model == "poissonian",
    )


def _pair_row(c_hv: float, c_vh: float, alpha: float, beta: float, k: tuple) -> tuple:
    # Every probability is built from non-negative terms: near a product state
    # the CH terms are tiny and differences of O(1) numbers would swamp them.
    eta_a, eta_b, vis, bg_a, bg_b, mu, poisson = k
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    noise = (1.0 - vis) * 0.25
    # polarizer outcomes: t = transmitted, r = reflected (first letter Alice)
    amp_tt = c_hv * ca * sb + c_vh * sa * cb
    amp_tr = c_hv * ca * cb - c_vh * sa * sb
    amp_rt = c_vh * ca * cb - c_hv * sa * sb
    amp_rr = c_hv * sa * cb + c_vh * ca * sb
    t_tt = vis * amp_tt * amp_tt + noise
    t_tr = vis * amp_tr * amp_tr + noise
    t_rt = vis * amp_rt * amp_rt + noise
    t_rr = vis * amp_rr * amp_rr + noise
    miss_a, miss_b = 1.0 - eta_a, 1.0 - eta_b
    # one pair: who registers a photon
    d_ab = eta_a * eta_b * t_tt
    d_a = eta_a * (t_tt * miss_b + t_tr)
    d_b = eta_b * (t_tt * miss_a + t_rt)
    d_none = miss_a * miss_b * t_tt + miss_a * t_tr + miss_b * t_rt + t_rr
    if poisson:
        x_a = eta_a * (t_tt + t_tr)
        x_b = eta_b * (t_tt + t_rt)
        p_p0 = (1.0 - bg_b) * math.exp(-mu * x_b) * -math.expm1(math.log1p(-bg_a) - mu * d_a)
        p_0p = (1.0 - bg_a) * math.exp(-mu * x_a) * -math.expm1(math.log1p(-bg_b) - mu * d_b)
        p_00 = (1.0 - bg_a) * (1.0 - bg_b) * math.exp(-mu * (d_ab + d_a + d_b))
        p_pp = -math.expm1(math.log1p(-bg_a) - mu * x_a) - p_p0
    else:
        empty = 1.0 - mu
        p_pp = mu * (d_ab + d_a * bg_b + d_b * bg_a + d_none * bg_a * bg_b) + empty * bg_a * bg_b
        p_p0 = (1.0 - bg_b) * (mu * (d_a + d_none * bg_a) + empty * bg_a)
        p_0p = (1.0 - bg_a) * (mu * (d_b + d_none * bg_b) + empty * bg_b)
        p_00 = (1.0 - bg_a) * (1.0 - bg_b) * (mu * d_none + empty)
    return p_pp, p_p0, p_0p, p_00


def _rows(c_hv: float, c_vh: float, a: tuple, b: tuple, k: tuple) -> list:
    return [[_pair_row(c_hv, c_vh, a[i], b[j], k) for j in range(2)] for i in range(2)]


def _j_from_rows(rows) -> float:
    return rows[0][0][PP] - rows[0][1][P0] - rows[1][0][ZP] - rows[1][1][PP]


def outcome_probabilities(
    state: EberhardState, angles: SettingAngles, params: ExperimentParams
) -> OutcomeProbabilityTable:
    """Outcome probabilities for all four setting pairs."""
    a1, a2, b1, b2 = angles.radians()
    c_hv, c_vh = state.coefficients
    rows = _rows(c_hv, c_vh, (a1, a2), (b1, b2), _coeffs(params))
    return OutcomeProbabilityTable(np.array(rows, dtype=float))


def j_value(table: OutcomeProbabilityTable) -> float:
    """CH-Eberhard combination; local realism requires ``J <= 0``."""
    return float(_j_from_rows(table.probs))


# --- configuration ------------------------------------------------------------

def params_from_config(cfg: dict[str, str]) -> ExperimentParams:
    try:
        return ExperimentParams(
            eta_a=get_float(cfg, "eta_a"),
            eta_b=get_float(cfg, "eta_b"),
            visibility=get_float(cfg, "visibility", 1.0),
            background_a=get_float(cfg, "background_a", 0.0),
            background_b=get_float(cfg, "background_b", 0.0),
            pair_rate=get_float(cfg, "pair_rate_hz", 1.0),
            pulse_rate=get_float(cfg, "pulse_rate_hz", 1.0),
            multi_pair_model=get_str(cfg, "multi_pair_model", "none"),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def state_from_config(cfg: dict[str, str]) -> EberhardState:
    return EberhardState(get_float(cfg, "r"))


def angles_from_config(cfg: dict[str, str]) -> SettingAngles:
    return SettingAngles(*(get_float(cfg, f"{k}_deg") for k in ("a1", "a2", "b1", "b2")))
