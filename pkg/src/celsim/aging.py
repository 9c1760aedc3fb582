"""Battery capacity fade and replacement scheduling.

Cycling damage comes from four-point rainflow counting of the state-of-charge
trace; calendar fade is linear in elapsed time. One representative year of
operation is extrapolated over the project horizon to place battery
replacements at the end-of-life threshold, inverter replacements at a fixed
interval, and residual-value credits at the end of the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AgingParameterError

_EPS = 1e-9


@dataclass(frozen=True)
class CycleSet:
    """Rainflow result: one entry per full (count 1.0) or half (0.5) cycle."""

    depth: np.ndarray
    mean: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        for name in ("depth", "mean", "count"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls) -> "CycleSet":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    def __len__(self):
        return self.depth.size

    def __add__(self, other: "CycleSet") -> "CycleSet":
        return CycleSet(np.concatenate([self.depth, other.depth]),
                        np.concatenate([self.mean, other.mean]),
                        np.concatenate([self.count, other.count]))

    @property
    def equivalent_full_cycles(self) -> float:
        return float(np.sum(self.count * self.depth))

    def as_multiset(self) -> list:
        return sorted(zip(self.depth.tolist(), self.mean.tolist(), self.count.tolist()))


def turning_points(series: Sequence[float]) -> np.ndarray:
    """Drop plateaus and monotone interior points, keeping the end points."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x
    keep = np.concatenate([[True], np.diff(x) != 0])
    x = x[keep]
    if x.size < 3:
        return x
    d = np.diff(x)
    reversal = np.sign(d[1:]) != np.sign(d[:-1])
    return np.concatenate([[x[0]], x[1:-1][reversal], [x[-1]]])


def rainflow(soc: Sequence[float]) -> CycleSet:
    """Four-point rainflow count of a SoC trajectory.

    Closed inner loops are counted as full cycles; the unclosed residue is
    counted as half cycles between consecutive residue points.
    """
    depths, means, counts = [], [], []
    stack: list = []
    for point in turning_points(soc).tolist():
        stack.append(point)
        while len(stack) >= 4:
            a, b, c, d = stack[-4:]
            inner = abs(c - b)
            if inner <= abs(b - a) and inner <= abs(d - c):
                depths.append(inner)
                means.append((b + c) / 2.0)
                counts.append(1.0)
                del stack[-3:-1]
            else:
                break
    for a, b in zip(stack[:-1], stack[1:]):
        depths.append(abs(b - a))
        means.append((a + b) / 2.0)
        counts.append(0.5)
    if not depths:
        return CycleSet.empty()
    return CycleSet(np.array(depths), np.array(means), np.array(counts))


@dataclass(frozen=True)
class AgingParams:
    """Fade law ``k_cyc * sum(count * w(mean) * depth**cyc_exponent) + k_cal * years``.

    Defaults are calibrated so that 3000 full-depth cycles or 15 calendar
    years alone each produce 20% fade.
    """

    k_cyc: float = 0.20 / 3000.0
    cyc_exponent: float = 1.1
    k_cal: float = 0.20 / 15.0
    eol_threshold: float = 0.80
    mean_soc_weight: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.k_cyc < 0 or self.k_cal < 0 or self.cyc_exponent <= 0:
            raise AgingParameterError("aging coefficients must be non-negative")
        if not 0 < self.eol_threshold < 1:
            raise AgingParameterError("eol_threshold must lie in (0, 1)")


def cycling_damage(cycles: CycleSet, params: AgingParams = AgingParams()) -> float:
    if len(cycles) == 0:
        return 0.0
    weight = 1.0 if params.mean_soc_weight is None else params.mean_soc_weight(cycles.mean)
    return float(np.sum(cycles.count * weight * cycles.depth ** params.cyc_exponent))


def capacity_fade(cycles: CycleSet, elapsed_years: float,
                  params: AgingParams = AgingParams()) -> float:
    """Fraction of nominal capacity lost, clamped to [0, 1]."""
    if elapsed_years < 0:
        raise ValueError("elapsed_years must be >= 0")
    fade = params.k_cyc * cycling_damage(cycles, params) + params.k_cal * elapsed_years
    return min(max(fade, 0.0), 1.0)


@dataclass(frozen=True)
class ReplacementSchedule:
    """Battery and inverter replacement timing over the project horizon.

    Costs are nominal CHF; the ``*_pv`` fields are discounted to year 0.
    """

    lifetime: int
    annual_fade: float
    battery_life_years: float
    battery_years: tuple
    l_bat: float
    inverter_years: tuple
    battery_residual: float
    inverter_residual: float
    battery_replacement_pv: float
    inverter_replacement_pv: float
    residual_pv: float

    @property
    def battery_builds(self) -> int:
        return 1 + len(self.battery_years)

    def net_replacement_pv(self) -> float:
        return self.battery_replacement_pv + self.inverter_replacement_pv - self.residual_pv

    def annualized(self, annuity_factor: float) -> float:
        return annuity_factor * self.net_replacement_pv()


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= _EPS * max(1.0, abs(x)) else x


def _interval_schedule(life: float, lifetime: float) -> tuple:
    years = []
    k = 1
    while math.isfinite(life) and k * life < lifetime - _EPS:
        years.append(_snap(k * life))
        k += 1
    return tuple(years)


def _residual_fraction(life: float, last_install: float, lifetime: float) -> float:
    if not math.isfinite(life):
        return 0.0
    return max(0.0, 1.0 - (lifetime - last_install) / life)


def schedule_from_fade(
    annual_fade: float,
    lifetime: int = 25,
    discount_rate: float = 0.03,
    eol_threshold: float = 0.80,
    battery_capex: float = 0.0,
    inverter_capex: float = 0.0,
    inverter_life: float = 15.0,
    cycling: bool = False,
) -> ReplacementSchedule:
    """Build a schedule from a stationary annual fade rate."""
    if annual_fade <= 0:
        if cycling:
            raise AgingParameterError("non-positive annual fade with nonzero cycling")
        life = math.inf
    else:
        life = _snap((1.0 - eol_threshold) / annual_fade)
    battery_years = _interval_schedule(life, lifetime)
    n_builds = 1 + len(battery_years)
    l_bat = lifetime / n_builds
    last_bat = battery_years[-1] if battery_years else 0.0
    bat_residual = battery_capex * _residual_fraction(life, last_bat, lifetime)

    inverter_years = _interval_schedule(float(inverter_life), lifetime)
    last_inv = inverter_years[-1] if inverter_years else 0.0
    inv_residual = inverter_capex * _residual_fraction(float(inverter_life), last_inv, lifetime)

    disc = lambda y: (1.0 + discount_rate) ** -y  # noqa: E731
    return ReplacementSchedule(
        lifetime=lifetime,
        annual_fade=annual_fade,
        battery_life_years=life,
        battery_years=battery_years,
        l_bat=l_bat,
        inverter_years=inverter_years,
        battery_residual=bat_residual,
        inverter_residual=inv_residual,
        battery_replacement_pv=sum(battery_capex * disc(y) for y in battery_years),
        inverter_replacement_pv=sum(inverter_capex * disc(y) for y in inverter_years),
        residual_pv=(bat_residual + inv_residual) * disc(lifetime),
    )


def replacement_schedule(
    annual_soc: Optional[Sequence[float]],
    econ,
    params: AgingParams = AgingParams(),
    battery_capex: float = 0.0,
    inverter_capex: float = 0.0,
) -> ReplacementSchedule:
    """Schedule replacements from one representative year of SoC.

    ``annual_soc=None`` means there is no battery. ``econ`` supplies
    ``lifetime``, ``discount_rate`` and ``inverter_life``.
    """
    if annual_soc is None:
        fade, cycling = 0.0, False
    else:
        cycles = rainflow(annual_soc)
        fade = capacity_fade(cycles, 1.0, params)
        cycling = len(cycles) > 0
    return schedule_from_fade(
        fade, econ.lifetime, econ.discount_rate, params.eol_threshold,
        battery_capex, inverter_capex, econ.inverter_life, cycling,
    )
