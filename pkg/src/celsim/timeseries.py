"""15-minute time axes, load/meteo profiles and building-level PV production.

Profiles are immutable numpy-backed containers aligned on a :class:`TimeAxis`
that covers exactly one civil year. Loads and meteo can be read from the
two-column CSV format (``timestamp,value``) or synthesized deterministically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import AxisMismatchError, IngestionError, ValidationError

UNITS = ("kW", "W/m2", "degC")
_UNIT_ALIASES = {"W/m²": "W/m2", "°C": "degC", "C": "degC", "kw": "kW"}
NON_NEGATIVE_UNITS = ("kW", "W/m2")

MAX_ROOF_SHARE = 0.70


def _canonical_unit(unit: str) -> str:
    unit = _UNIT_ALIASES.get(unit, unit)
    if unit not in UNITS:
        raise ValidationError(f"unknown unit {unit!r}; expected one of {UNITS}")
    return unit


@dataclass(frozen=True)
class TimeAxis:
    """Regular time grid spanning exactly one civil year from ``start``."""

    start: datetime
    step_minutes: int = 15
    n_steps: int = 35040

    def __post_init__(self):
        if self.step_minutes <= 0 or 60 % self.step_minutes:
            raise ValidationError(f"step_minutes={self.step_minutes} must divide 60")
        span = _one_year_after(self.start) - self.start
        expected = int(span / timedelta(minutes=self.step_minutes))
        if self.n_steps != expected:
            raise ValidationError(
                f"axis of {self.n_steps} steps does not span one civil year "
                f"from {self.start.isoformat()} ({expected} steps expected)"
            )

    @classmethod
    def for_year(cls, year: int, step_minutes: int = 15) -> "TimeAxis":
        start = datetime(year, 1, 1)
        span = _one_year_after(start) - start
        return cls(start, step_minutes, int(span / timedelta(minutes=step_minutes)))

    @property
    def ts_hours(self) -> float:
        """Step duration in hours (0.25 for 15-minute data)."""
        return self.step_minutes / 60.0

    @property
    def steps_per_day(self) -> int:
        return 24 * 60 // self.step_minutes

    def timestamps(self) -> np.ndarray:
        start = np.datetime64(self.start, "m")
        return start + np.arange(self.n_steps) * np.timedelta64(self.step_minutes, "m")

    def timestamp(self, t: int) -> datetime:
        if not 0 <= t < self.n_steps:
            raise IndexError(f"step {t} outside axis of {self.n_steps} steps")
        return self.start + timedelta(minutes=self.step_minutes * t)

    def hour_of_day(self) -> np.ndarray:
        """Fractional local hour at the start of each step."""
        ts = self.timestamps()
        minutes = (ts - ts.astype("datetime64[D]")).astype("timedelta64[m]").astype(np.int64)
        return minutes / 60.0

    def weekday(self) -> np.ndarray:
        """Day of week per step, Monday = 0."""
        days = self.timestamps().astype("datetime64[D]").astype(np.int64)
        return (days + 3) % 7  # 1970-01-01 was a Thursday

    def day_of_year(self) -> np.ndarray:
        ts = self.timestamps()
        year_start = ts.astype("datetime64[Y]").astype("datetime64[D]")
        return (ts.astype("datetime64[D]") - year_start).astype(np.int64)


def _one_year_after(start: datetime) -> datetime:
    try:
        return start.replace(year=start.year + 1)
    except ValueError:  # 29 February
        return start.replace(year=start.year + 1, day=28) + timedelta(days=1)


@dataclass(frozen=True, eq=False)
class Profile:
    """A validated series aligned on ``axis``; the array is read-only."""

    axis: TimeAxis
    values: np.ndarray
    unit: str = "kW"

    def __post_init__(self):
        unit = _canonical_unit(self.unit)
        object.__setattr__(self, "unit", unit)
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.axis.n_steps:
            raise ValidationError(
                f"profile has {values.size} values, axis has {self.axis.n_steps} steps"
            )
        if np.isnan(values).any():
            raise ValidationError("profile contains missing values")
        if unit in NON_NEGATIVE_UNITS and (values < 0).any():
            idx = int(np.flatnonzero(values < 0)[0])
            raise ValidationError(
                f"negative {unit} value {values[idx]} at {self.axis.timestamp(idx).isoformat()}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def energy_kwh(self) -> float:
        """Integral over the axis (kWh for kW profiles)."""
        return math.fsum(self.values) * self.axis.ts_hours

    def annual_mwh(self) -> float:
        return self.energy_kwh() / 1000.0

    def scaled(self, factor: float) -> "Profile":
        return Profile(self.axis, self.values * factor, self.unit)

    def __add__(self, other: "Profile") -> "Profile":
        check_same_axis(self, other)
        if self.unit != other.unit:
            raise ValidationError(f"cannot add {self.unit} and {other.unit} profiles")
        return Profile(self.axis, self.values + other.values, self.unit)


def check_same_axis(*profiles: Profile) -> TimeAxis:
    axis = profiles[0].axis
    for p in profiles[1:]:
        if p.axis != axis:
            raise AxisMismatchError(f"time axes differ: {axis} vs {p.axis}")
    return axis


def zeros(axis: TimeAxis, unit: str = "kW") -> Profile:
    return Profile(axis, np.zeros(axis.n_steps), unit)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def ingest_profile(path, unit: str = "kW", step_minutes: int = 15) -> Profile:
    """Read a ``timestamp,value`` CSV into a :class:`Profile`.

    Timestamps are ISO-8601 local times, strictly increasing at
    ``step_minutes`` spacing, and must cover exactly one civil year.

    Raises
    ------
    IngestionError
        Bad header, unparsable row, duplicate timestamp or gap.
    ValidationError
        Negative values for kW or W/m2 profiles.
    """
    unit = _canonical_unit(unit)
    path = Path(path)
    step = timedelta(minutes=step_minutes)
    values: list[float] = []
    start = prev = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "value"]:
            raise IngestionError(f"{path}: header must be 'timestamp,value', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestionError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from None
            raw = row[1].strip()
            if not raw:
                raise IngestionError(f"{path}:{lineno}: missing value at {ts.isoformat()}")
            try:
                value = float(raw)
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad value {raw!r}") from None
            if prev is None:
                start = ts
            else:
                delta = ts - prev
                if delta == timedelta(0):
                    raise IngestionError(f"{path}:{lineno}: duplicate timestamp {ts.isoformat()}")
                if delta > step:
                    raise IngestionError(
                        f"{path}:{lineno}: gap at {(prev + step).isoformat()}"
                    )
                if delta != step:
                    raise IngestionError(
                        f"{path}:{lineno}: timestamp {ts.isoformat()} not increasing "
                        f"at {step_minutes}-minute spacing"
                    )
            if unit in NON_NEGATIVE_UNITS and value < 0:
                raise ValidationError(
                    f"{path}:{lineno}: negative {unit} value {value} at {ts.isoformat()}"
                )
            values.append(value)
            prev = ts
    if start is None:
        raise IngestionError(f"{path}: no data rows")
    try:
        axis = TimeAxis(start, step_minutes, len(values))
    except ValidationError as exc:
        raise IngestionError(f"{path}: {exc}") from None
    return Profile(axis, np.asarray(values), unit)


def write_profile(path, profile: Profile) -> None:
    """Write a profile in the ingestion CSV format (round-trips exactly)."""
    ts = profile.axis.timestamps().astype(datetime)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "value"])
        for stamp, v in zip(ts, profile.values):
            writer.writerow([stamp.isoformat(timespec="minutes"), repr(float(v))])


# --------------------------------------------------------------------------
# Synthetic profiles
# --------------------------------------------------------------------------

# Hourly relative demand, local time 00..23.
_RESIDENTIAL_HOURLY = np.array([
    0.45, 0.38, 0.35, 0.34, 0.35, 0.42, 0.70, 0.95, 0.85, 0.70, 0.65, 0.70,
    0.80, 0.72, 0.62, 0.62, 0.75, 1.05, 1.40, 1.50, 1.40, 1.15, 0.85, 0.60,
])
_NONRESIDENTIAL_HOURLY = np.array([
    0.30, 0.30, 0.30, 0.30, 0.30, 0.35, 0.55, 0.90, 1.20, 1.30, 1.30, 1.30,
    1.20, 1.25, 1.30, 1.30, 1.25, 1.05, 0.75, 0.50, 0.40, 0.35, 0.32, 0.30,
])
_WEEKDAY_FACTORS = {
    "residential": np.array([0.97, 0.97, 0.97, 0.97, 1.0, 1.08, 1.08]),
    "nonresidential": np.array([1.0, 1.0, 1.0, 1.0, 0.95, 0.45, 0.40]),
}
ARCHETYPES = ("residential", "nonresidential")


def _diurnal(template: np.ndarray, hours: np.ndarray) -> np.ndarray:
    # periodic linear interpolation between hourly points centred on the half hour
    x = np.concatenate([[-0.5], np.arange(24) + 0.5, [24.5]])
    y = np.concatenate([[template[-1]], template, [template[0]]])
    return np.interp(hours, x, y)


def synthesize_load(
    annual_mwh: float,
    archetype: str,
    seed: int,
    axis: Optional[TimeAxis] = None,
) -> Profile:
    """Deterministic synthetic demand scaled to ``annual_mwh``.

    The shape is a fixed diurnal template (evening-peaked residential or
    midday-plateau non-residential) times weekday/weekend and seasonal
    factors, with seeded multiplicative noise at day and step level.
    """
    if not annual_mwh > 0:
        raise ValidationError(f"annual_mwh must be > 0, got {annual_mwh}")
    if archetype not in ARCHETYPES:
        raise ValidationError(f"unknown archetype {archetype!r}; expected one of {ARCHETYPES}")
    axis = axis or TimeAxis.for_year(2025)
    rng = np.random.default_rng(seed)
    hours = axis.hour_of_day()
    template = _RESIDENTIAL_HOURLY if archetype == "residential" else _NONRESIDENTIAL_HOURLY
    shape = _diurnal(template, hours)
    shape *= _WEEKDAY_FACTORS[archetype][axis.weekday()]
    doy = axis.day_of_year()
    shape *= 1.0 + 0.22 * np.cos(2 * np.pi * (doy - 15) / 365.0)
    n_days = int(doy.max()) + 1
    day_noise = rng.lognormal(0.0, 0.12, n_days)[doy]
    step_noise = rng.lognormal(0.0, 0.25, axis.n_steps)
    shape *= day_noise * step_noise
    values = shape * (annual_mwh * 1000.0 / (shape.sum() * axis.ts_hours))
    return Profile(axis, values, "kW")


@dataclass(frozen=True)
class Meteo:
    """Global horizontal irradiance (W/m2) and outdoor temperature (degC)."""

    ghi: Profile
    temp: Profile

    def __post_init__(self):
        check_same_axis(self.ghi, self.temp)
        if self.ghi.unit != "W/m2" or self.temp.unit != "degC":
            raise ValidationError("meteo expects ghi in W/m2 and temp in degC")

    @property
    def axis(self) -> TimeAxis:
        return self.ghi.axis


def synthesize_meteo(
    axis: Optional[TimeAxis] = None,
    seed: int = 0,
    latitude: float = 46.52,
    longitude: float = 6.66,
    utc_offset_h: float = 1.0,
) -> Meteo:
    """Seeded irradiance/temperature year for a mid-latitude site.

    Clear-sky GHI follows the Haurwitz model on a simple solar-position
    calculation; daily clearness indices are drawn from a season-dependent
    beta distribution. Defaults approximate Pully (Vaud).
    """
    axis = axis or TimeAxis.for_year(2025)
    rng = np.random.default_rng(seed)
    doy = axis.day_of_year()
    # sun position evaluated mid-step
    hours = axis.hour_of_day() + axis.ts_hours / 2
    gamma = 2 * np.pi * doy / 365.0
    decl = (0.006918 - 0.399912 * np.cos(gamma) + 0.070257 * np.sin(gamma)
            - 0.006758 * np.cos(2 * gamma) + 0.000907 * np.sin(2 * gamma))
    eot_min = 229.18 * (0.000075 + 0.001868 * np.cos(gamma) - 0.032077 * np.sin(gamma)
                        - 0.014615 * np.cos(2 * gamma) - 0.040849 * np.sin(2 * gamma))
    solar_time = hours + (longitude / 15.0 - utc_offset_h) + eot_min / 60.0
    hour_angle = np.radians(15.0 * (solar_time - 12.0))
    lat = np.radians(latitude)
    cos_z = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)
    cos_z = np.clip(cos_z, 0.0, None)
    with np.errstate(divide="ignore", over="ignore"):
        clear = np.where(cos_z > 0.01, 1098.0 * cos_z * np.exp(-0.057 / np.maximum(cos_z, 1e-3)), 0.0)
    n_days = int(doy.max()) + 1
    summer = 0.5 - 0.5 * np.cos(2 * np.pi * (np.arange(n_days) - 10) / 365.0)
    clearness = rng.beta(1.2 + 2.3 * summer, 1.6 - 0.6 * summer)
    clearness = 0.12 + 0.88 * clearness
    flicker = np.clip(1.0 + 0.15 * rng.standard_normal(axis.n_steps), 0.3, 1.3)
    ghi = np.clip(clear * clearness[doy] * np.where(clearness[doy] < 0.9, flicker, 1.0), 0.0, None)

    day_anom = np.zeros(n_days)
    eps = rng.normal(0.0, 1.6, n_days)
    for d in range(1, n_days):
        day_anom[d] = 0.7 * day_anom[d - 1] + eps[d]
    temp = (10.8 - 9.0 * np.cos(2 * np.pi * (doy - 18) / 365.0)
            + (2.0 + 3.0 * clearness[doy]) * np.sin(2 * np.pi * (hours - 9.0) / 24.0)
            + day_anom[doy])
    return Meteo(Profile(axis, ghi, "W/m2"), Profile(axis, temp, "degC"))


# --------------------------------------------------------------------------
# PV
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PvDesign:
    """Rooftop array: ``n_modules`` identical modules of ``p_nom_w`` watts.

    Defaults describe a SunPower SPR-315E-WHT with typical crystalline
    temperature behaviour. ``derate`` is a single scalar for orientation and
    system losses.
    """

    n_modules: int
    roof_area: float = math.inf
    p_nom_w: float = 315.0
    module_area: float = 1.6310
    temp_coeff: float = -0.004
    noct: float = 45.0
    derate: float = 1.0

    def __post_init__(self):
        if int(self.n_modules) != self.n_modules or self.n_modules < 0:
            raise ValidationError(f"n_modules must be a non-negative integer, got {self.n_modules}")
        object.__setattr__(self, "n_modules", int(self.n_modules))
        if self.installed_area > MAX_ROOF_SHARE * self.roof_area + 1e-9:
            raise ValidationError(
                f"{self.n_modules} modules cover {self.installed_area:.2f} m2, more than "
                f"{MAX_ROOF_SHARE:.0%} of the {self.roof_area:.2f} m2 roof"
            )

    @classmethod
    def max_for_roof(cls, roof_area: float, **kwargs) -> "PvDesign":
        """Largest array fitting on 70% of ``roof_area``."""
        module_area = kwargs.get("module_area", cls.module_area)
        n = math.floor(MAX_ROOF_SHARE * roof_area / module_area + 1e-9)
        return cls(n_modules=max(n, 0), roof_area=roof_area, **kwargs)

    @property
    def installed_area(self) -> float:
        return self.n_modules * self.module_area

    @property
    def kwp(self) -> float:
        return self.n_modules * self.p_nom_w / 1000.0

    def with_modules(self, n_modules: int) -> "PvDesign":
        return PvDesign(n_modules, self.roof_area, self.p_nom_w, self.module_area,
                        self.temp_coeff, self.noct, self.derate)


def cell_temperature(ghi: np.ndarray, temp: np.ndarray, noct: float) -> np.ndarray:
    return temp + ghi * (noct - 20.0) / 800.0


def pv_production(design: Optional[PvDesign], ghi: Profile, temp: Profile) -> Profile:
    """AC-side output in kW using the NOCT cell-temperature model."""
    axis = check_same_axis(ghi, temp)
    if design is None or design.n_modules == 0:
        return zeros(axis)
    g = ghi.values
    t_cell = cell_temperature(g, temp.values, design.noct)
    power = (design.n_modules * design.p_nom_w * (g / 1000.0)
             * (1.0 + design.temp_coeff * (t_cell - 25.0)) * design.derate / 1000.0)
    return Profile(axis, np.clip(power, 0.0, None), "kW")


# --------------------------------------------------------------------------
# Buildings
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Building:
    id: str
    bus_id: str
    load: Profile
    roof_area: float = 0.0
    pv: Optional[PvDesign] = None
    archetype: str = "residential"

    def __post_init__(self):
        if self.load.unit != "kW":
            raise ValidationError(f"building {self.id}: load must be in kW")

    @property
    def annual_load_mwh(self) -> float:
        return self.load.annual_mwh()

    def max_pv(self, **kwargs) -> Optional[PvDesign]:
        if self.roof_area <= 0:
            return None
        design = PvDesign.max_for_roof(self.roof_area, **kwargs)
        return design if design.n_modules > 0 else None

    def with_pv(self, pv: Optional[PvDesign]) -> "Building":
        return Building(self.id, self.bus_id, self.load, self.roof_area, pv, self.archetype)

    def production(self, meteo: Meteo) -> Profile:
        return pv_production(self.pv, meteo.ghi, meteo.temp)
