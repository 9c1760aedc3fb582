"""Cost-minimal PV/battery dispatch and TOTEX-based sizing.

The annual dispatch of a building (or of the aggregated community "virtual
building") is a linear program over 15-minute steps: grid import/export,
battery charge/discharge and stored energy, with exogenous import/export
prices. It is solved with HiGHS through :func:`scipy.optimize.linprog`.

Sizing wraps the dispatch in an outer integer golden-section search over
battery capacity (and PV capacity in ``min_totex`` mode), scoring each
candidate by TOTEX = OPEX + R * CAPEX.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import tariff as tf
from .aging import AgingParams, ReplacementSchedule, replacement_schedule
from .errors import AxisMismatchError, InfeasibleError, SizingError, ValidationError
from .timeseries import Building, Meteo, Profile, PvDesign, TimeAxis, check_same_axis, pv_production

log = logging.getLogger(__name__)

DEFAULT_SOC_HOLDING_COST = 1e-5  # CHF per kWh stored per hour; tie-breaker only


def annuity(r: float, lifetime: int) -> float:
    """Capital recovery factor r(1+r)^L / ((1+r)^L - 1); 1/L when r = 0."""
    if r < 0 or lifetime < 1:
        raise ValueError(f"need r >= 0 and L >= 1, got r={r}, L={lifetime}")
    if r == 0:
        return 1.0 / lifetime
    g = (1.0 + r) ** lifetime
    return r * g / (g - 1.0)


@dataclass(frozen=True)
class EconomicParams:
    lifetime: int = 25
    discount_rate: float = 0.03
    pv_maintenance: float = 0.01      # fraction of PV CAPEX per year
    c_mod: float = 1.05               # CHF/W
    c_fw: float = 10049.0             # CHF, PV fixed cost
    c_bat_sp: float = 229.0           # CHF/kWh
    c_bat_fix: float = 0.0            # CHF
    c_bat_charge: float = 0.0         # CHF/kWh
    c_bat_discharge: float = 0.0      # CHF/kWh
    inverter_life: float = 15.0       # years
    inverter_share: float = 0.40      # inverter cost as a share of c_fw

    @property
    def annuity(self) -> float:
        return annuity(self.discount_rate, self.lifetime)

    @property
    def inverter_cost(self) -> float:
        return self.inverter_share * self.c_fw


@dataclass(frozen=True)
class BatteryDesign:
    """Usable capacity and operating limits. Power limits default to C/2."""

    capacity_kwh: float = 0.0
    p_max_charge: Optional[float] = None
    p_max_discharge: Optional[float] = None
    eta_c: float = 0.95
    eta_d: float = 0.95
    soc_min: float = 0.0
    soc_max: float = 1.0
    soc_0: Optional[float] = None

    def __post_init__(self):
        if self.capacity_kwh < 0:
            raise ValidationError("battery capacity must be >= 0")
        if self.p_max_charge is None:
            object.__setattr__(self, "p_max_charge", self.capacity_kwh / 2.0)
        if self.p_max_discharge is None:
            object.__setattr__(self, "p_max_discharge", self.capacity_kwh / 2.0)
        if self.soc_0 is None:
            object.__setattr__(self, "soc_0", self.soc_min)
        if self.p_max_charge < 0 or self.p_max_discharge < 0:
            raise ValidationError("battery power limits must be >= 0")
        if not 0 < self.eta_c <= 1 or not 0 < self.eta_d <= 1:
            raise ValidationError("battery efficiencies must lie in (0, 1]")
        if not 0 <= self.soc_min <= self.soc_0 <= self.soc_max <= 1:
            raise ValidationError(
                f"need 0 <= soc_min <= soc_0 <= soc_max <= 1, got "
                f"{self.soc_min}, {self.soc_0}, {self.soc_max}"
            )

    @property
    def present(self) -> bool:
        return self.capacity_kwh > 0

    def resized(self, capacity_kwh: float) -> "BatteryDesign":
        return BatteryDesign(capacity_kwh, eta_c=self.eta_c, eta_d=self.eta_d,
                             soc_min=self.soc_min, soc_max=self.soc_max, soc_0=self.soc_0)


NO_BATTERY = BatteryDesign(0.0)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DispatchPlan:
    """Per-step powers (kW) and end-of-step state of charge (fraction)."""

    load: np.ndarray
    pv: np.ndarray
    p_imp: np.ndarray
    p_exp: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray
    soc: np.ndarray
    ts_hours: float
    battery: BatteryDesign = NO_BATTERY
    pv_design: Optional[PvDesign] = None
    axis: Optional[TimeAxis] = None
    lp_gap: float = 0.0

    def __post_init__(self):
        n = len(self.load)
        for name in ("load", "pv", "p_imp", "p_exp", "p_ch", "p_dis", "soc"):
            arr = _readonly(getattr(self, name))
            if arr.size != n:
                raise AxisMismatchError(f"{name} has {arr.size} steps, expected {n}")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.load.size

    @property
    def net_grid(self) -> np.ndarray:
        """Import minus export (kW); positive means drawing from the grid."""
        return self.p_imp - self.p_exp

    @property
    def battery_net(self) -> np.ndarray:
        """Charge minus discharge (kW), i.e. the battery seen as a load."""
        return self.p_ch - self.p_dis

    def soc_trace(self) -> np.ndarray:
        return np.concatenate([[self.battery.soc_0], self.soc])

    def balance_residual(self) -> float:
        lhs = self.load + self.p_ch + self.p_exp
        rhs = self.pv + self.p_dis + self.p_imp
        return float(np.max(np.abs(lhs - rhs))) if len(self) else 0.0

    def soc_residual(self) -> float:
        b = self.battery
        if not b.present:
            return float(np.max(np.abs(self.soc))) if len(self) else 0.0
        prev = self.soc_trace()[:-1]
        step = (b.eta_c * self.p_ch - self.p_dis / b.eta_d) * self.ts_hours / b.capacity_kwh
        return float(np.max(np.abs(self.soc - prev - step)))

    def imported_kwh(self) -> float:
        return float(np.sum(self.p_imp) * self.ts_hours)

    def exported_kwh(self) -> float:
        return float(np.sum(self.p_exp) * self.ts_hours)


@dataclass(frozen=True)
class CostBreakdown:
    """Annual cost terms (CHF/yr); CAPEX terms are upfront CHF."""

    ox_ge: float
    ox_bo: float
    ox_pm: float
    cx_pv: float
    cx_bat: float
    lifetime: int
    l_bat: float
    annuity: float
    schedule: Optional[ReplacementSchedule] = None

    @property
    def opex(self) -> float:
        return self.ox_ge + self.ox_bo + self.ox_pm

    @property
    def capex(self) -> float:
        return self.cx_pv + (self.lifetime / self.l_bat) * self.cx_bat

    @property
    def totex(self) -> float:
        return self.opex + self.annuity * self.capex

    @property
    def replacement_opex(self) -> float:
        """Annualized explicit battery/inverter replacements net of residuals."""
        return self.schedule.annualized(self.annuity) if self.schedule else 0.0


class DispatchResult(NamedTuple):
    plan: DispatchPlan
    cost: CostBreakdown


# --------------------------------------------------------------------------
# Cost terms
# --------------------------------------------------------------------------


def grid_cost_arrays(p_imp, p_exp, price_imp, price_exp, ts_hours: float) -> float:
    """Sum of (P_imp * t_imp - P_exp * t_exp) * TS with prices in CHF/kWh."""
    p_imp, p_exp = np.asarray(p_imp, float), np.asarray(p_exp, float)
    price_imp = np.broadcast_to(np.asarray(price_imp, float), p_imp.shape)
    price_exp = np.broadcast_to(np.asarray(price_exp, float), p_exp.shape)
    return float(np.sum(p_imp * price_imp - p_exp * price_exp) * ts_hours)


def grid_cost(plan: DispatchPlan, import_tariff: tf.TariffSchedule,
              export_tariff: Optional[tf.TariffSchedule] = None, ghi=None) -> float:
    """Annual grid-exchange cost OX_ge in CHF for a plan on a time axis."""
    if plan.axis is None:
        raise AxisMismatchError("plan has no time axis; use grid_cost_arrays")
    if plan.axis.n_steps != len(plan):
        raise AxisMismatchError("plan length differs from its axis")
    if ghi is not None and hasattr(ghi, "axis") and ghi.axis != plan.axis:
        raise AxisMismatchError("irradiance axis differs from plan axis")
    export_tariff = export_tariff or import_tariff
    price_imp = tf.import_prices(import_tariff, plan.axis, ghi) / 100.0
    price_exp = tf.price_export(export_tariff) / 100.0
    return grid_cost_arrays(plan.p_imp, plan.p_exp, price_imp, price_exp, plan.ts_hours)


def battery_operation_cost(plan: DispatchPlan, econ: EconomicParams) -> float:
    return float(np.sum(plan.p_dis * econ.c_bat_discharge + plan.p_ch * econ.c_bat_charge)
                 * plan.ts_hours)


def capex_pv(design: Optional[PvDesign], econ: EconomicParams) -> float:
    if design is None or design.n_modules == 0:
        return 0.0
    return design.n_modules * design.p_nom_w * econ.c_mod + econ.c_fw


def capex_battery(battery: BatteryDesign, econ: EconomicParams) -> float:
    if not battery.present:
        return 0.0
    return battery.capacity_kwh * econ.c_bat_sp + econ.c_bat_fix


def cost_breakdown(
    plan: DispatchPlan,
    ox_ge: float,
    econ: EconomicParams,
    aging: AgingParams = AgingParams(),
) -> CostBreakdown:
    cx_pv = capex_pv(plan.pv_design, econ)
    cx_bat = capex_battery(plan.battery, econ)
    schedule = replacement_schedule(
        plan.soc_trace() if plan.battery.present else None, econ, aging,
        battery_capex=cx_bat, inverter_capex=econ.inverter_cost if cx_pv > 0 else 0.0,
    )
    return CostBreakdown(
        ox_ge=ox_ge,
        ox_bo=battery_operation_cost(plan, econ),
        ox_pm=econ.pv_maintenance * cx_pv,
        cx_pv=cx_pv,
        cx_bat=cx_bat,
        lifetime=econ.lifetime,
        l_bat=schedule.l_bat,
        annuity=econ.annuity,
        schedule=schedule,
    )


# --------------------------------------------------------------------------
# Dispatch LP
# --------------------------------------------------------------------------


def passthrough_plan(load, pv, ts_hours: float, **kwargs) -> DispatchPlan:
    """Dispatch without storage: the grid covers the residual load."""
    load = np.asarray(load, float)
    pv = np.asarray(pv, float)
    net = load - pv
    zeros = np.zeros_like(net)
    return DispatchPlan(load, pv, np.maximum(net, 0.0), np.maximum(-net, 0.0),
                        zeros, zeros, zeros, ts_hours, **kwargs)


def solve_dispatch(
    load: Sequence[float],
    pv: Sequence[float],
    battery: BatteryDesign,
    price_import: Sequence[float],
    price_export,
    ts_hours: float,
    econ: Optional[EconomicParams] = None,
    soc_holding_cost: float = DEFAULT_SOC_HOLDING_COST,
    import_cap: Optional[float] = None,
    **plan_kwargs,
) -> DispatchPlan:
    """Minimise grid + battery operation cost over the horizon.

    Prices are CHF/kWh per step. The state of charge obeys
    ``E[t] = E[t-1] + (eta_c * P_ch - P_dis / eta_d) * TS`` and must end at
    or above its initial level. A tiny holding cost on stored energy breaks
    ties between equally priced charging steps in favour of charging late.

    Raises
    ------
    InfeasibleError
        When an import cap makes the residual load unservable.
    """
    load = np.asarray(load, float)
    pv = np.asarray(pv, float)
    n = load.size
    price_import = np.broadcast_to(np.asarray(price_import, float), (n,)).copy()
    price_export = np.broadcast_to(np.asarray(price_export, float), (n,)).copy()
    if pv.size != n:
        raise AxisMismatchError(f"load has {n} steps, pv has {pv.size}")
    econ = econ or EconomicParams()

    if not battery.present:
        plan = passthrough_plan(load, pv, ts_hours, battery=battery, **plan_kwargs)
        if import_cap is not None and np.any(plan.p_imp > import_cap + 1e-9):
            raise InfeasibleError("residual load exceeds the import cap")
        return plan

    cap = battery.capacity_kwh
    e0 = battery.soc_0 * cap
    eye = sp.identity(n, format="csr")
    zero = sp.csr_matrix((n, n))
    shift = eye - sp.eye(n, k=-1, format="csr")
    a_eq = sp.vstack([
        sp.hstack([eye, -eye, -eye, eye, zero]),
        sp.hstack([zero, zero, -battery.eta_c * ts_hours * eye, (ts_hours / battery.eta_d) * eye, shift]),
    ]).tocsc()
    b_soc = np.zeros(n)
    b_soc[0] = e0
    b_eq = np.concatenate([load - pv, b_soc])
    a_ub = sp.csr_matrix(([-1.0], ([0], [5 * n - 1])), shape=(1, 5 * n))
    b_ub = np.array([-e0])
    c = np.concatenate([
        price_import * ts_hours,
        -price_export * ts_hours,
        np.full(n, econ.c_bat_charge * ts_hours),
        np.full(n, econ.c_bat_discharge * ts_hours),
        np.full(n, soc_holding_cost * ts_hours),
    ])
    lower = np.concatenate([np.zeros(4 * n), np.full(n, battery.soc_min * cap)])
    upper = np.concatenate([
        # Imports can only feed load or battery, exports only come from PV or
        # battery; this keeps the LP bounded when export pays more than import.
        np.minimum(load + battery.p_max_charge, np.inf if import_cap is None else import_cap),
        pv + battery.p_max_discharge,
        np.full(n, battery.p_max_charge),
        np.full(n, battery.p_max_discharge),
        np.full(n, battery.soc_max * cap),
    ])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=np.column_stack([lower, upper]), method="highs")
    if res.status == 2:
        raise InfeasibleError("dispatch problem is infeasible")
    if res.status != 0:
        raise InfeasibleError(f"dispatch LP failed: {res.message}")
    x = res.x
    gap = _duality_gap(res, b_eq, b_ub, lower, upper)

    ch = np.clip(x[2 * n:3 * n], 0.0, battery.p_max_charge)
    dis = np.clip(x[3 * n:4 * n], 0.0, battery.p_max_discharge)
    # Rebuild the grid flows and energy from the battery decisions so that the
    # balance and SoC recursion hold to round-off.
    net = load - pv + ch - dis
    energy = e0 + np.cumsum((battery.eta_c * ch - dis / battery.eta_d) * ts_hours)
    return DispatchPlan(load, pv, np.maximum(net, 0.0), np.maximum(-net, 0.0), ch, dis,
                        energy / cap, ts_hours, battery=battery, lp_gap=gap, **plan_kwargs)


def _duality_gap(res, b_eq, b_ub, lower, upper) -> float:
    dual = float(b_eq @ res.eqlin.marginals + b_ub @ res.ineqlin.marginals)
    lo_m, up_m = res.lower.marginals, res.upper.marginals
    finite_up = np.isfinite(upper)
    dual += float(lower @ lo_m + upper[finite_up] @ up_m[finite_up])
    return abs(res.fun - dual) / max(1.0, abs(res.fun))


def optimize_dispatch(
    load: Profile,
    pv_prod: Profile,
    battery: BatteryDesign,
    import_tariff: tf.TariffSchedule,
    econ: EconomicParams = EconomicParams(),
    pv_design: Optional[PvDesign] = None,
    aging: AgingParams = AgingParams(),
    ghi: Optional[Profile] = None,
    export_tariff: Optional[tf.TariffSchedule] = None,
    **kwargs,
) -> DispatchResult:
    """Optimal annual dispatch plus its TOTEX breakdown on a profile axis."""
    axis = check_same_axis(load, pv_prod)
    export_tariff = export_tariff or import_tariff
    price_imp = tf.import_prices(import_tariff, axis, ghi) / 100.0
    price_exp = tf.price_export(export_tariff) / 100.0
    plan = solve_dispatch(load.values, pv_prod.values, battery, price_imp, price_exp,
                          axis.ts_hours, econ, axis=axis, pv_design=pv_design, **kwargs)
    ox_ge = grid_cost_arrays(plan.p_imp, plan.p_exp, price_imp, price_exp, axis.ts_hours)
    return DispatchResult(plan, cost_breakdown(plan, ox_ge, econ, aging))


# --------------------------------------------------------------------------
# Sizing
# --------------------------------------------------------------------------


class SizingResult(NamedTuple):
    pv: Optional[PvDesign]
    battery: BatteryDesign
    cost: CostBreakdown
    plan: DispatchPlan


def integer_golden_min(f: Callable[[int], float], lo: int, hi: int) -> int:
    """Argmin of a unimodal function over integers in [lo, hi] (memoised)."""
    if hi < lo:
        raise SizingError(f"empty search interval [{lo}, {hi}]")
    cache: dict = {}

    def g(k):
        if k not in cache:
            cache[k] = f(k)
        return cache[k]

    inv_phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    while b - a > 3:
        c = int(round(b - inv_phi * (b - a)))
        d = int(round(a + inv_phi * (b - a)))
        if c == d:
            d = c + 1
        if g(c) <= g(d):
            b = d
        else:
            a = c
    return min(range(a, b + 1), key=lambda k: (g(k), k))


def default_battery_bound(load: Profile, pv: Profile) -> int:
    """Upper battery search bound: the largest daily energy need or surplus."""
    per_day = load.axis.steps_per_day
    days = load.values.size // per_day
    net = (load.values - pv.values)[: days * per_day].reshape(days, per_day)
    need = np.clip(net, 0, None).sum(axis=1).max() * load.axis.ts_hours
    surplus = np.clip(-net, 0, None).sum(axis=1).max() * load.axis.ts_hours
    return max(1, int(math.ceil(max(need, surplus))))


def size_building(
    building: Building,
    meteo: Meteo,
    import_tariff: tf.TariffSchedule,
    econ: EconomicParams = EconomicParams(),
    mode: str = "min_totex",
    aging: AgingParams = AgingParams(),
    battery_template: BatteryDesign = NO_BATTERY,
    allow_pv: bool = True,
    allow_battery: bool = True,
    battery_max_kwh: Optional[float] = None,
    battery_step_kwh: float = 1.0,
    pv_step_kwp: float = 0.5,
) -> SizingResult:
    """Choose PV and battery capacities minimising TOTEX.

    ``max_pv`` fixes the array at the 70% roof bound and sizes only the
    battery; ``min_totex`` also searches PV capacity in ``pv_step_kwp``
    increments up to that bound.
    """
    if mode not in ("min_totex", "max_pv"):
        raise SizingError(f"unknown sizing mode {mode!r}")
    if battery_step_kwh <= 0 or pv_step_kwp <= 0:
        raise SizingError("search steps must be positive")
    if battery_max_kwh is not None and battery_max_kwh < 0:
        raise SizingError("battery_max_kwh must be >= 0")

    max_design = building.max_pv() if allow_pv else None
    if mode == "max_pv" or max_design is None:
        pv_candidates = [max_design]
    else:
        per_module = max_design.p_nom_w / 1000.0
        counts = sorted({min(max_design.n_modules, int(round(k * pv_step_kwp / per_module)))
                         for k in range(int(math.floor(max_design.kwp / pv_step_kwp + 1e-9)) + 1)}
                        | {max_design.n_modules})
        pv_candidates = [None if c == 0 else max_design.with_modules(c) for c in counts]
    if not pv_candidates:
        raise SizingError("empty PV search grid")

    def evaluate_pv(design):
        prod = pv_production(design, meteo.ghi, meteo.temp)
        if allow_battery:
            bound = battery_max_kwh if battery_max_kwh is not None else default_battery_bound(building.load, prod)
            n_max = int(math.floor(bound / battery_step_kwh + 1e-9))
        else:
            n_max = 0
        results: dict = {}

        def totex_for(k):
            batt = battery_template.resized(k * battery_step_kwh)
            results[k] = optimize_dispatch(building.load, prod, batt, import_tariff, econ,
                                           pv_design=design, aging=aging)
            return results[k].cost.totex

        best_k = integer_golden_min(totex_for, 0, n_max)
        return results[best_k]

    best: Optional[DispatchResult] = None
    cache: dict = {}

    def pv_totex(i):
        cache[i] = evaluate_pv(pv_candidates[i])
        return cache[i].cost.totex

    best_i = integer_golden_min(pv_totex, 0, len(pv_candidates) - 1)
    best = cache[best_i]
    log.debug("building %s sized: pv=%s battery=%.1f kWh totex=%.2f", building.id,
              best.plan.pv_design.kwp if best.plan.pv_design else 0.0,
              best.plan.battery.capacity_kwh, best.cost.totex)
    return SizingResult(best.plan.pv_design, best.plan.battery, best.cost, best.plan)


def community_battery_size(designs: Sequence[BatteryDesign]) -> float:
    """Central battery capacity: the sum of the per-building optima."""
    return float(sum(d.capacity_kwh for d in designs))


def aggregate_virtual_building(
    members: Sequence[Building],
    meteo: Meteo,
    extra_load: Optional[Profile] = None,
    extra_pv: Optional[Profile] = None,
) -> tuple:
    """Element-wise sums of member load and PV into one virtual building."""
    if not members and extra_load is None and extra_pv is None:
        raise ValidationError("virtual building needs at least one member")
    axis = meteo.axis
    load = np.zeros(axis.n_steps)
    pv = np.zeros(axis.n_steps)
    for b in members:
        if b.load.axis != axis:
            raise AxisMismatchError(f"building {b.id} load axis differs from meteo axis")
        load += b.load.values
        pv += b.production(meteo).values
    for extra, acc in ((extra_load, load), (extra_pv, pv)):
        if extra is not None:
            check_same_axis(extra, meteo.ghi)
            acc += extra.values
    return Profile(axis, load, "kW"), Profile(axis, pv, "kW")
