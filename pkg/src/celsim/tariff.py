"""Time-of-use and irradiance-indexed electricity tariffs (ct/kWh).

Three schedule kinds are supported:

* ``external_double``: the DSO double tariff for grid imports,
* ``internal_double``: the same windows with the distribution grid
  components reduced by 40% for in-community exchange,
* ``internal_dynamic``: a price falling linearly with irradiance between a
  cap and the feed-in floor, decomposed into fixed grid + tax parts and an
  energy residual.

Double-tariff components are kept at two decimals, as billed by the DSO, and summed in
decimal arithmetic, so totals are exact at two decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import TariffError
from .timeseries import TimeAxis

KINDS = ("external_double", "internal_double", "internal_dynamic")
FEED_IN_CT = 11.5
CEL_GRID_REDUCTION = 0.40

_CENT = Decimal("0.01")


def _dec(x) -> Decimal:
    return Decimal(str(x))


def round_ct(x) -> float:
    """Round half-up to 0.01 ct, the billing precision."""
    return float(_dec(x).quantize(_CENT, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PeakOffpeak:
    peak: float
    offpeak: float

    def __post_init__(self):
        if self.peak < 0 or self.offpeak < 0:
            raise TariffError(f"tariff components must be >= 0, got {self}")

    def scaled(self, factor: float) -> "PeakOffpeak":
        return PeakOffpeak(round_ct(_dec(self.peak) * _dec(factor)),
                           round_ct(_dec(self.offpeak) * _dec(factor)))

    def get(self, peak: bool) -> float:
        return self.peak if peak else self.offpeak


DEFAULT_TAXES = {
    "federal": 2.30,
    "winter_reserve": 0.23,
    "cantonal_tax": 0.60,
    "cantonal_emolument": 0.02,
}


@dataclass(frozen=True)
class TariffComponents:
    """Per-kWh components of a double tariff, in ct/kWh."""

    energy: PeakOffpeak = PeakOffpeak(16.68, 11.81)
    regional_grid: PeakOffpeak = PeakOffpeak(14.34, 8.43)
    national_grid: PeakOffpeak = PeakOffpeak(2.32, 1.48)
    taxes: dict = field(default_factory=lambda: dict(DEFAULT_TAXES))

    def __post_init__(self):
        if any(v < 0 for v in self.taxes.values()):
            raise TariffError("tax components must be >= 0")

    @property
    def tax(self) -> float:
        return float(sum((_dec(v) for v in self.taxes.values()), Decimal(0)))

    def grid(self, peak: bool) -> float:
        return float(_dec(self.regional_grid.get(peak)) + _dec(self.national_grid.get(peak)))

    def total(self, peak: bool) -> float:
        return float(_dec(self.energy.get(peak)) + _dec(self.regional_grid.get(peak))
                     + _dec(self.national_grid.get(peak))
                     + sum((_dec(v) for v in self.taxes.values()), Decimal(0)))

    def with_grid_reduction(self, reduction: float = CEL_GRID_REDUCTION) -> "TariffComponents":
        keep = 1.0 - reduction
        return replace(self, regional_grid=self.regional_grid.scaled(keep),
                       national_grid=self.national_grid.scaled(keep))


@dataclass(frozen=True)
class TouWindow:
    """Peak window [peak_start, peak_end) local hours on ``peak_days`` (Mon = 0)."""

    peak_start: float = 17.0
    peak_end: float = 22.0
    peak_days: tuple = (0, 1, 2, 3, 4)

    def is_peak(self, axis: TimeAxis) -> np.ndarray:
        hours = axis.hour_of_day()
        in_hours = (hours >= self.peak_start) & (hours < self.peak_end)
        return in_hours & np.isin(axis.weekday(), self.peak_days)

    def is_peak_at(self, when: datetime) -> bool:
        hour = when.hour + when.minute / 60.0
        return (when.weekday() in self.peak_days) and self.peak_start <= hour < self.peak_end


@dataclass(frozen=True)
class DynamicTariffParams:
    p_max: float = 24.52
    p_min: float = 11.50
    fixed_grid: float = 7.39
    fixed_tax: float = 3.15
    g_ref: float = 1000.0

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise TariffError(f"need 0 <= p_min <= p_max, got {self.p_min}, {self.p_max}")
        if self.g_ref <= 0:
            raise TariffError("g_ref must be positive")
        if self.fixed_grid + self.fixed_tax > self.p_min + 1e-12:
            raise TariffError("fixed grid + tax parts exceed the minimum dynamic price")

    @property
    def fixed(self) -> float:
        return float(_dec(self.fixed_grid) + _dec(self.fixed_tax))


@dataclass(frozen=True)
class TariffSchedule:
    kind: str
    components: Optional[TariffComponents] = None
    tou: TouWindow = TouWindow()
    dynamic: Optional[DynamicTariffParams] = None
    feed_in: float = FEED_IN_CT

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TariffError(f"unknown tariff kind {self.kind!r}")
        if self.kind == "internal_dynamic":
            if self.dynamic is None:
                raise TariffError("dynamic schedule needs DynamicTariffParams")
        elif self.components is None:
            raise TariffError(f"{self.kind} schedule needs TariffComponents")

    @property
    def needs_irradiance(self) -> bool:
        return self.kind == "internal_dynamic"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "feed_in": self.feed_in,
               "tou": {"peak_start": self.tou.peak_start, "peak_end": self.tou.peak_end,
                       "peak_days": list(self.tou.peak_days)}}
        if self.components is not None:
            c = self.components
            out["components"] = {
                name: {"peak": getattr(c, name).peak, "offpeak": getattr(c, name).offpeak}
                for name in ("energy", "regional_grid", "national_grid")
            }
            out["components"]["taxes"] = dict(c.taxes)
        if self.dynamic is not None:
            d = self.dynamic
            out["dynamic"] = {"p_max": d.p_max, "p_min": d.p_min, "fixed_grid": d.fixed_grid,
                              "fixed_tax": d.fixed_tax, "g_ref": d.g_ref}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TariffSchedule":
        try:
            components = None
            if "components" in data:
                c = data["components"]
                components = TariffComponents(
                    energy=PeakOffpeak(**c["energy"]),
                    regional_grid=PeakOffpeak(**c["regional_grid"]),
                    national_grid=PeakOffpeak(**c["national_grid"]),
                    taxes=dict(c.get("taxes", DEFAULT_TAXES)),
                )
            tou = TouWindow()
            if "tou" in data:
                t = data["tou"]
                tou = TouWindow(t.get("peak_start", 17.0), t.get("peak_end", 22.0),
                                tuple(t.get("peak_days", (0, 1, 2, 3, 4))))
            dynamic = DynamicTariffParams(**data["dynamic"]) if "dynamic" in data else None
            return cls(data["kind"], components, tou, dynamic, data.get("feed_in", FEED_IN_CT))
        except (KeyError, TypeError) as exc:
            raise TariffError(f"malformed tariff definition: {exc}") from None


def external_double(components: Optional[TariffComponents] = None) -> TariffSchedule:
    return TariffSchedule("external_double", components or TariffComponents())


def internal_double(components: Optional[TariffComponents] = None,
                    reduction: float = CEL_GRID_REDUCTION) -> TariffSchedule:
    base = components or TariffComponents()
    return TariffSchedule("internal_double", base.with_grid_reduction(reduction))


def internal_dynamic(params: Optional[DynamicTariffParams] = None) -> TariffSchedule:
    return TariffSchedule("internal_dynamic", dynamic=params or DynamicTariffParams())


def default_schedules() -> dict:
    return {"external": external_double(), "internal_double": internal_double(),
            "internal_dynamic": internal_dynamic()}


def load_tariffs(path) -> dict:
    """Read a JSON object mapping names to schedule definitions."""
    data = json.loads(Path(path).read_text())
    if "kind" in data:
        data = {"external": data}
    return {name: TariffSchedule.from_dict(d) for name, d in data.items()}


def save_tariffs(path, schedules: dict) -> None:
    Path(path).write_text(json.dumps({k: s.to_dict() for k, s in schedules.items()}, indent=2))


# --------------------------------------------------------------------------
# Pricing
# --------------------------------------------------------------------------


def _dynamic_price(params: DynamicTariffParams, ghi):
    share = np.clip(np.asarray(ghi, dtype=float) / params.g_ref, 0.0, 1.0)
    return params.p_max - (params.p_max - params.p_min) * share


def _require_ghi(schedule: TariffSchedule, ghi):
    if schedule.needs_irradiance and ghi is None:
        raise TariffError("internal_dynamic pricing requires irradiance")


def _ghi_values(ghi):
    return ghi.values if hasattr(ghi, "values") else ghi


def price_import(schedule: TariffSchedule, axis: TimeAxis, t: int, ghi_t=None) -> float:
    """Import price in ct/kWh at step ``t``."""
    _require_ghi(schedule, ghi_t)
    if schedule.kind == "internal_dynamic":
        return float(_dynamic_price(schedule.dynamic, ghi_t))
    return schedule.components.total(schedule.tou.is_peak_at(axis.timestamp(t)))


def decompose(schedule: TariffSchedule, axis: TimeAxis, t: int, ghi_t=None) -> tuple:
    """(energy, grid, tax) ct/kWh at step ``t``; sums to :func:`price_import`."""
    _require_ghi(schedule, ghi_t)
    if schedule.kind == "internal_dynamic":
        d = schedule.dynamic
        price = float(_dynamic_price(d, ghi_t))
        return price - d.fixed, d.fixed_grid, d.fixed_tax
    c = schedule.components
    peak = schedule.tou.is_peak_at(axis.timestamp(t))
    return c.energy.get(peak), c.grid(peak), c.tax


def import_prices(schedule: TariffSchedule, axis: TimeAxis, ghi=None) -> np.ndarray:
    """Vector of import prices (ct/kWh) over the whole axis."""
    _require_ghi(schedule, ghi)
    if schedule.kind == "internal_dynamic":
        return _dynamic_price(schedule.dynamic, _ghi_values(ghi))
    c = schedule.components
    return np.where(schedule.tou.is_peak(axis), c.total(True), c.total(False))


def decompose_series(schedule: TariffSchedule, axis: TimeAxis, ghi=None) -> tuple:
    """Arrays (energy, grid, tax) in ct/kWh over the whole axis."""
    _require_ghi(schedule, ghi)
    n = axis.n_steps
    if schedule.kind == "internal_dynamic":
        d = schedule.dynamic
        price = _dynamic_price(d, _ghi_values(ghi))
        return price - d.fixed, np.full(n, d.fixed_grid), np.full(n, d.fixed_tax)
    c = schedule.components
    peak = schedule.tou.is_peak(axis)
    energy = np.where(peak, c.energy.peak, c.energy.offpeak)
    grid = np.where(peak, c.grid(True), c.grid(False))
    return energy, grid, np.full(n, c.tax)


def price_export(schedule: TariffSchedule) -> float:
    """Feed-in remuneration in ct/kWh."""
    return schedule.feed_in


# --------------------------------------------------------------------------
# Audit
# --------------------------------------------------------------------------


def check_grid_reduction(external: TariffSchedule, internal: TariffSchedule,
                         reduction: float = CEL_GRID_REDUCTION) -> list:
    """Warnings for internal grid components that differ from the reduced external ones."""
    if internal.kind != "internal_double" or external.components is None:
        return []
    warnings = []
    for name in ("regional_grid", "national_grid"):
        ext = getattr(external.components, name)
        got = getattr(internal.components, name)
        want = ext.scaled(1.0 - reduction)
        for period in ("peak", "offpeak"):
            if getattr(got, period) != getattr(want, period):
                warnings.append(
                    f"{name}.{period}: internal {getattr(got, period):.2f} ct != "
                    f"{1 - reduction:.2f} x {getattr(ext, period):.2f} = {getattr(want, period):.2f} ct"
                )
    return warnings


def audit_table(schedules: dict) -> str:
    """Human-readable decomposition of each schedule for audit."""
    lines = [f"{'schedule':<18}{'period':<10}{'energy':>8}{'grid':>8}{'tax':>8}{'total':>8}"]
    for name, s in schedules.items():
        if s.kind == "internal_dynamic":
            d = s.dynamic
            for label, price in (("ghi=0", d.p_max), ("ghi>=ref", d.p_min)):
                lines.append(f"{name:<18}{label:<10}{price - d.fixed:>8.2f}{d.fixed_grid:>8.2f}"
                             f"{d.fixed_tax:>8.2f}{price:>8.2f}")
        else:
            c = s.components
            for label, peak in (("peak", True), ("offpeak", False)):
                lines.append(f"{name:<18}{label:<10}{c.energy.get(peak):>8.2f}{c.grid(peak):>8.2f}"
                             f"{c.tax:>8.2f}{c.total(peak):>8.2f}")
        lines.append(f"{name:<18}{'feed-in':<10}{'':>24}{s.feed_in:>8.2f}")
    return "\n".join(lines)
