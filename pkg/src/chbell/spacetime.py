"""Light-cone audit of the emission, setting-choice and measurement intervals.

Geometry is one-dimensional: every event has a signed position along the
experiment axis and a time interval in ns relative to the trial clock.

Each interval edge is the sum of delay-budget line items, each with its own
standard deviation.  Uncertainties are combined as root-sum-square,
assuming independent normal errors.

Margin between two events (positive means space-like)::

    |x1 - x2| / c - max(t2_end - t1_start, t1_end - t2_start)

This is the conservative choice: the edge pair closest to light-like
separation is used whatever the temporal order.

Config keys (shared flat format)::

    speed_of_light_m_per_ns = 0.299792458
    position.<event> = metres, std-dev metres
    edge.<event>.<start|end>.<item> = ns, std-dev ns [, note]
    arrival.<event>.<earliest|latest> = ns, std-dev ns [, note]
    cable_delay.<event> = ns, std-dev ns [, note]

Events: ``E`` (emission), ``a``/``b`` (setting choices) and ``A``/``B``
(measurements).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import ConfigError, get_float

C_M_PER_NS = 0.299792458
REQUIRED_EVENTS = ("E", "a", "b", "A", "B")
REQUIRED_PAIRS = (("a", "B"), ("b", "A"), ("a", "E"), ("b", "E"))
SIDE_OF = {"a": "A", "b": "B"}


@dataclass(frozen=True)
class DelayItem:
    label: str
    value: float
    sigma: float
    note: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.value) and math.isfinite(self.sigma)) or self.sigma < 0:
            raise ValueError(f"delay item {self.label!r}: value must be finite and sigma >= 0")


def _rss(items) -> float:
    return math.sqrt(sum(i.sigma ** 2 for i in items))


@dataclass(frozen=True)
class SpacetimeEvent:
    label: str
    position: float
    t_start: float
    t_end: float
    sigma_start: float = 0.0
    sigma_end: float = 0.0
    position_sigma: float = 0.0

    def __post_init__(self):
        if not self.t_start <= self.t_end:
            raise ValueError(f"event {self.label}: t_start {self.t_start} exceeds t_end {self.t_end}")
        if min(self.sigma_start, self.sigma_end, self.position_sigma) < 0:
            raise ValueError(f"event {self.label}: uncertainties must be non-negative")

    @property
    def uncertainty(self) -> float:
        """Largest edge standard deviation, ns."""
        return max(self.sigma_start, self.sigma_end)

    @classmethod
    def from_items(cls, label, position, start_items, end_items, position_sigma=0.0) -> "SpacetimeEvent":
        return cls(label, position,
                   sum(i.value for i in start_items), sum(i.value for i in end_items),
                   _rss(start_items), _rss(end_items), position_sigma)

    def shifted(self, dt: float) -> "SpacetimeEvent":
        return SpacetimeEvent(self.label, self.position, self.t_start + dt, self.t_end + dt,
                              self.sigma_start, self.sigma_end, self.position_sigma)


@dataclass(frozen=True)
class Margin:
    first: str
    second: str
    value: float
    sigma: float
    binding: str  # which edges set the margin

    def to_dict(self) -> dict:
        return {"pair": f"{self.first}-{self.second}", "margin_ns": self.value,
                "sigma_ns": self.sigma, "binding_edges": self.binding}


def light_cone_margin(e1: SpacetimeEvent, e2: SpacetimeEvent, c: float = C_M_PER_NS) -> Margin:
    late2 = e2.t_end - e1.t_start
    late1 = e1.t_end - e2.t_start
    if late2 >= late1:
        dt, s1, s2, binding = late2, e1.sigma_start, e2.sigma_end, f"{e1.label}.start/{e2.label}.end"
    else:
        dt, s1, s2, binding = late1, e1.sigma_end, e2.sigma_start, f"{e1.label}.end/{e2.label}.start"
    value = abs(e1.position - e2.position) / c - dt
    sigma = math.sqrt(s1 ** 2 + s2 ** 2 + (e1.position_sigma ** 2 + e2.position_sigma ** 2) / c ** 2)
    return Margin(e1.label, e2.label, value, sigma, binding)


@dataclass
class SpacetimeConfig:
    events: dict[str, SpacetimeEvent]
    speed_of_light: float = C_M_PER_NS
    items: dict[str, list[DelayItem]] = field(default_factory=dict)
    arrivals: dict[str, tuple[DelayItem, DelayItem]] = field(default_factory=dict)
    cable_delays: dict[str, DelayItem] = field(default_factory=dict)

    def __post_init__(self):
        missing = [e for e in REQUIRED_EVENTS if e not in self.events]
        if missing:
            raise ConfigError(f"space-time config lacks event(s): {', '.join(missing)}")
        if not self.speed_of_light > 0:
            raise ConfigError("speed of light must be positive")


@dataclass
class WindowCheck:
    event: str
    earliest: float
    latest: float
    window: tuple[float, float]

    @property
    def ok(self) -> bool:
        return self.window[0] <= self.earliest and self.latest <= self.window[1]

    def to_dict(self) -> dict:
        return {"event": self.event, "arrival_ns": [self.earliest, self.latest],
                "window_ns": list(self.window), "contained": self.ok}


@dataclass
class AuditReport:
    margins: list[Margin]
    extra_margins: list[Margin]
    windows: list[WindowCheck]
    k_sigma: float
    digitizer_windows: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def non_positive(self) -> list[Margin]:
        return [m for m in self.margins + self.extra_margins if m.value <= 0]

    @property
    def weak(self) -> list[Margin]:
        return [m for m in self.margins + self.extra_margins if 0 < m.value < self.k_sigma * m.sigma]

    @property
    def passed(self) -> bool:
        return not self.non_positive and all(w.ok for w in self.windows)

    def margin(self, first: str, second: str) -> Margin:
        for m in self.margins + self.extra_margins:
            if (m.first, m.second) == (first, second):
                return m
        raise KeyError(f"{first}-{second}")

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "k_sigma": self.k_sigma,
            "margins": [m.to_dict() for m in self.margins],
            "measurement_pair": [m.to_dict() for m in self.extra_margins],
            "window_checks": [w.to_dict() for w in self.windows],
            "digitizer_windows_ns": {k: list(v) for k, v in self.digitizer_windows.items()},
            "flags": {
                "non_positive": [f"{m.first}-{m.second}" for m in self.non_positive],
                "below_k_sigma": [f"{m.first}-{m.second}" for m in self.weak],
            },
        }

    def render(self) -> str:
        lines = ["space-time audit", ""]
        lines.append(f"  {'pair':<6} {'margin/ns':>10} {'sigma/ns':>9}  {'edges':<16} flag")
        for m in self.margins + self.extra_margins:
            flag = "FAIL" if m.value <= 0 else (f"<{self.k_sigma:g} sigma" if m in self.weak else "ok")
            lines.append(f"  {m.first + '-' + m.second:<6} {m.value:10.2f} {m.sigma:9.2f}  {m.binding:<16} {flag}")
        for w in self.windows:
            lines.append(f"  window {w.event}: arrivals [{w.earliest:.1f}, {w.latest:.1f}] ns "
                         f"in [{w.window[0]:.1f}, {w.window[1]:.1f}] ns: {'ok' if w.ok else 'FAIL'}")
        for side, (lo, hi) in self.digitizer_windows.items():
            lines.append(f"  digitizer window {side}: [{lo:.1f}, {hi:.1f}] ns after cable delay")
        lines.append("")
        lines.append("  result: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def verify_config(config: SpacetimeConfig, k_sigma: float = 3.0) -> AuditReport:
    ev, c = config.events, config.speed_of_light
    margins = [light_cone_margin(ev[x], ev[y], c) for x, y in REQUIRED_PAIRS]
    extra = [light_cone_margin(ev["A"], ev["B"], c)]
    windows = []
    for side, (early, late) in sorted(config.arrivals.items()):
        windows.append(WindowCheck(side, early.value, late.value, (ev[side].t_start, ev[side].t_end)))
    digitizer = {side: (ev[side].t_start + d.value, ev[side].t_end + d.value)
                 for side, d in sorted(config.cable_delays.items())}
    return AuditReport(margins, extra, windows, k_sigma, digitizer)


# --- config parsing -------------------------------------------------------------------

def _item(label: str, raw: str) -> DelayItem:
    parts = [p.strip() for p in raw.split(",", 2)]
    try:
        value = float(parts[0])
        sigma = float(parts[1]) if len(parts) > 1 else 0.0
    except ValueError as exc:
        raise ConfigError(f"{label}: expected 'value, sigma[, note]', got {raw!r}") from exc
    return DelayItem(label, value, sigma, parts[2] if len(parts) > 2 else "")


def spacetime_from_config(cfg: dict[str, str]) -> SpacetimeConfig:
    c = get_float(cfg, "speed_of_light_m_per_ns", C_M_PER_NS)
    positions: dict[str, DelayItem] = {}
    edges: dict[tuple[str, str], list[DelayItem]] = {}
    arrivals: dict[str, dict[str, DelayItem]] = {}
    cables: dict[str, DelayItem] = {}
    for key, raw in cfg.items():
        parts = key.split(".")
        if parts[0] == "position" and len(parts) == 2:
            positions[parts[1]] = _item(key, raw)
        elif parts[0] == "edge" and len(parts) == 4 and parts[2] in ("start", "end"):
            edges.setdefault((parts[1], parts[2]), []).append(_item(key, raw))
        elif parts[0] == "arrival" and len(parts) == 3 and parts[2] in ("earliest", "latest"):
            arrivals.setdefault(parts[1], {})[parts[2]] = _item(key, raw)
        elif parts[0] == "cable_delay" and len(parts) == 2:
            cables[parts[1]] = _item(key, raw)
    events = {}
    for name in REQUIRED_EVENTS:
        if name not in positions:
            raise ConfigError(f"missing position.{name}")
        start, end = edges.get((name, "start")), edges.get((name, "end"))
        if not start or not end:
            raise ConfigError(f"event {name} needs edge.{name}.start.* and edge.{name}.end.* items")
        try:
            events[name] = SpacetimeEvent.from_items(name, positions[name].value, start, end,
                                                     positions[name].sigma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    items = {f"{n}.{e}": v for (n, e), v in edges.items()}
    arr = {}
    for side, d in arrivals.items():
        if set(d) != {"earliest", "latest"}:
            raise ConfigError(f"arrival.{side} needs both earliest and latest")
        arr[side] = (d["earliest"], d["latest"])
    return SpacetimeConfig(events, c, items, arr, cables)


def scaled_uncertainties(config: SpacetimeConfig, factor: float) -> SpacetimeConfig:
    """Copy with every line-item and position standard deviation multiplied by ``factor``."""
    events = {
        k: SpacetimeEvent(e.label, e.position, e.t_start, e.t_end, e.sigma_start * factor,
                          e.sigma_end * factor, e.position_sigma * factor)
        for k, e in config.events.items()
    }
    return SpacetimeConfig(events, config.speed_of_light, config.items, config.arrivals, config.cable_delays)
