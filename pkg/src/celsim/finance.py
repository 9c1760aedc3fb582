"""Economic KPIs: ledgers, LCOE, profit, IRR, bills and DSO revenue loss.

Internal exchange settlement works per step on members' net grid positions
(positive = deficit). The volume exchanged inside the community is the
smaller of total surplus and total deficit, split pro-rata by volume on both
sides. Importers pay the full internal price; exporters receive its energy
component; the grid and tax components stay with the DSO, so money is
conserved exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import tariff as tf
from .aging import ReplacementSchedule
from .errors import AxisMismatchError, IrrUndefinedError, ValidationError
from .timeseries import TimeAxis


def discount_factors(n: int, r: float) -> np.ndarray:
    return (1.0 + r) ** -np.arange(n, dtype=float)


@dataclass(frozen=True, eq=False)
class CashflowLedger:
    """Yearly cash flows indexed by year ``t = 0..L``.

    ``costs`` are outflows (investment, maintenance, net grid cost; negative
    entries are credits), ``revenues`` inflows, ``energy_mwh`` the load served.
    """

    costs: np.ndarray
    energy_mwh: np.ndarray
    revenues: Optional[np.ndarray] = None

    def __post_init__(self):
        costs = np.array(self.costs, dtype=float)
        energy = np.array(self.energy_mwh, dtype=float)
        revenues = np.zeros_like(costs) if self.revenues is None else np.array(self.revenues, dtype=float)
        if not (costs.shape == energy.shape == revenues.shape) or costs.ndim != 1:
            raise ValidationError("ledger columns must be 1-D and of equal length")
        if costs.size == 0:
            raise ValidationError("ledger needs at least one year")
        for arr in (costs, energy, revenues):
            arr.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "energy_mwh", energy)
        object.__setattr__(self, "revenues", revenues)

    @property
    def horizon(self) -> int:
        return self.costs.size - 1

    @property
    def net(self) -> np.ndarray:
        return self.revenues - self.costs

    @classmethod
    def annual(cls, upfront: float, annual_cost: float, annual_energy_mwh: float,
               lifetime: int, extra: Optional[dict] = None) -> "CashflowLedger":
        """Upfront cost in year 0, constant cost and energy in years 1..L.

        ``extra`` maps year -> additional cost (replacements, residual credits).
        """
        costs = np.full(lifetime + 1, float(annual_cost))
        costs[0] = upfront
        energy = np.full(lifetime + 1, float(annual_energy_mwh))
        energy[0] = 0.0
        for year, amount in (extra or {}).items():
            if not 0 <= year <= lifetime:
                raise ValidationError(f"year {year} outside the horizon 0..{lifetime}")
            costs[year] += amount
        return cls(costs, energy)


def replacement_entries(schedule: Optional[ReplacementSchedule], battery_capex: float,
                        inverter_capex: float) -> dict:
    """Nominal replacement costs and end-of-horizon residual credits by year.

    Fractional replacement times are booked in the year they fall into.
    """
    out: dict = {}
    if schedule is None:
        return out

    def book(year, amount):
        y = min(schedule.lifetime, max(1, math.ceil(year - 1e-9)))
        out[y] = out.get(y, 0.0) + amount

    for y in schedule.battery_years:
        book(y, battery_capex)
    for y in schedule.inverter_years:
        book(y, inverter_capex)
    credit = schedule.battery_residual + schedule.inverter_residual
    if credit:
        book(schedule.lifetime, -credit)
    return out


def lcoe(ledger: CashflowLedger, r: float) -> float:
    """Discounted cost over discounted served energy, in CHF/kWh."""
    disc = discount_factors(ledger.costs.size, r)
    energy = float(np.sum(ledger.energy_mwh * disc))
    if energy <= 0:
        raise ValidationError("LCOE undefined: zero discounted energy")
    return float(np.sum(ledger.costs * disc)) / energy / 1000.0


def npv(flows: Sequence[float], r: float) -> float:
    flows = np.asarray(flows, dtype=float)
    return float(np.sum(flows * discount_factors(flows.size, r)))


def profit(baseline: CashflowLedger, scenario: CashflowLedger, r: float) -> float:
    """NPV of the cost savings of ``scenario`` relative to ``baseline``."""
    if baseline.horizon != scenario.horizon:
        raise ValidationError(
            f"horizon mismatch: baseline {baseline.horizon} vs scenario {scenario.horizon}"
        )
    return npv(baseline.costs - scenario.costs, r)


class IrrResult(NamedTuple):
    rate: float
    multiple_roots: bool


def irr_detail(net_flows: Sequence[float], lo: float = -0.99, hi: float = 1.0,
               tol: float = 1e-10, scan: int = 400) -> IrrResult:
    """Smallest NPV root in ``(lo, hi)`` by bisection, flagging multiple roots."""
    flows = np.asarray(net_flows, dtype=float)
    nonzero = flows[flows != 0]
    if nonzero.size == 0 or np.all(nonzero > 0) or np.all(nonzero < 0):
        raise IrrUndefinedError("cash flows have no sign change")
    grid = np.linspace(lo, hi, scan + 1)
    values = np.array([npv(flows, g) for g in grid])
    brackets = []
    for k in range(scan):
        if values[k] == 0.0:
            brackets.append((grid[k], grid[k]))
        elif values[k] * values[k + 1] < 0:
            brackets.append((grid[k], grid[k + 1]))
    if values[-1] == 0.0:
        brackets.append((grid[-1], grid[-1]))
    if not brackets:
        raise IrrUndefinedError(f"no IRR in ({lo}, {hi})")
    a, b = brackets[0]
    fa = npv(flows, a)
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = npv(flows, m)
        if fm == 0.0:
            a = b = m
            break
        if (fa < 0) == (fm < 0):
            a, fa = m, fm
        else:
            b = m
    multiple = len(brackets) > 1
    if multiple:
        warnings.warn(f"{len(brackets)} IRR roots found; reporting the smallest", RuntimeWarning)
    return IrrResult(0.5 * (a + b), multiple)


def irr(net_flows: Sequence[float]) -> float:
    """Internal rate of return of yearly net flows (year 0 first)."""
    return irr_detail(net_flows).rate


def discounted_payback(net_flows: Sequence[float], r: float) -> Optional[float]:
    """First year in which cumulative discounted net flow turns non-negative."""
    flows = np.asarray(net_flows, dtype=float)
    cum = np.cumsum(flows * discount_factors(flows.size, r))
    hits = np.flatnonzero(cum >= 0)
    return float(hits[0]) if hits.size else None


# --------------------------------------------------------------------------
# Settlement and bills
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExchangeSettlement:
    """Per-step internal exchange (kWh) with member allocations and CHF flows.

    ``alloc_import``/``alloc_export`` have shape (steps, members). Payment
    arrays are CHF per step and member.
    """

    exchange_kwh: np.ndarray
    alloc_import: np.ndarray
    alloc_export: np.ndarray
    residual_import: np.ndarray
    residual_export: np.ndarray
    price_energy: np.ndarray
    price_grid: np.ndarray
    price_tax: np.ndarray

    @property
    def total_exchange_kwh(self) -> float:
        return float(self.exchange_kwh.sum())

    def payments(self) -> np.ndarray:
        """CHF paid by each member for internal imports."""
        price = (self.price_energy + self.price_grid + self.price_tax)[:, None] / 100.0
        return (self.alloc_import * price).sum(axis=0)

    def receipts(self) -> np.ndarray:
        """CHF received by each member for internal exports."""
        return (self.alloc_export * self.price_energy[:, None] / 100.0).sum(axis=0)

    def dso_retained(self) -> float:
        """Grid and tax components of internal trades, collected by the DSO."""
        price = (self.price_grid + self.price_tax)[:, None] / 100.0
        return float((self.alloc_import * price).sum())


def pro_rata(volumes: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Split ``total[t]`` across columns of ``volumes`` in proportion to volume."""
    denom = volumes.sum(axis=1, keepdims=True)
    share = np.divide(volumes, denom, out=np.zeros_like(volumes), where=denom > 0)
    return share * total[:, None]


def settle_exchange(
    member_net_kw,
    internal: tf.TariffSchedule,
    axis: TimeAxis,
    ghi=None,
    allocate=pro_rata,
) -> ExchangeSettlement:
    """Settle simultaneous surpluses and deficits inside the community.

    ``member_net_kw`` has shape (steps, members): import minus export of each
    member at its meter. ``allocate`` is the repartition key; the default is
    pro-rata by volume.
    """
    net = np.asarray(member_net_kw, dtype=float)
    if net.ndim == 1:
        net = net[:, None]
    if net.shape[0] != axis.n_steps:
        raise AxisMismatchError(f"member flows have {net.shape[0]} steps, axis has {axis.n_steps}")
    ts = axis.ts_hours
    deficit = np.maximum(net, 0.0) * ts
    surplus = np.maximum(-net, 0.0) * ts
    exchange = np.minimum(deficit.sum(axis=1), surplus.sum(axis=1))
    alloc_imp = allocate(deficit, exchange)
    alloc_exp = allocate(surplus, exchange)
    energy, grid, tax = tf.decompose_series(internal, axis, ghi)
    return ExchangeSettlement(
        exchange_kwh=exchange,
        alloc_import=alloc_imp,
        alloc_export=alloc_exp,
        residual_import=np.maximum(deficit - alloc_imp, 0.0),
        residual_export=np.maximum(surplus - alloc_exp, 0.0),
        price_energy=np.broadcast_to(energy, exchange.shape).astype(float),
        price_grid=np.broadcast_to(grid, exchange.shape).astype(float),
        price_tax=np.broadcast_to(tax, exchange.shape).astype(float),
    )


@dataclass(frozen=True)
class BillBreakdown:
    """Annual bill components in CHF. ``*_cel`` terms price internal imports."""

    energy: float
    tax: float
    grid: float
    energy_cel: float = 0.0
    tax_cel: float = 0.0
    grid_cel: float = 0.0
    feed_in_revenue: float = 0.0
    internal_revenue: float = 0.0

    def __post_init__(self):
        for name in ("energy", "tax", "grid", "energy_cel", "tax_cel", "grid_cel"):
            if getattr(self, name) < -1e-9:
                raise ValidationError(f"bill component {name} is negative")

    @property
    def external(self) -> float:
        return self.energy + self.tax + self.grid

    @property
    def internal(self) -> float:
        return self.energy_cel + self.tax_cel + self.grid_cel

    @property
    def total(self) -> float:
        """Bill with CEL; equals the bill without CEL when internal terms are 0."""
        return self.external + self.internal

    @property
    def net_cost(self) -> float:
        return self.total - self.feed_in_revenue - self.internal_revenue

    def __add__(self, other: "BillBreakdown") -> "BillBreakdown":
        return BillBreakdown(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple:
        return (self.energy, self.tax, self.grid, self.energy_cel, self.tax_cel, self.grid_cel,
                self.feed_in_revenue, self.internal_revenue)

    def as_dict(self) -> dict:
        return {"energy": self.energy, "tax": self.tax, "grid": self.grid,
                "energy_cel": self.energy_cel, "tax_cel": self.tax_cel, "grid_cel": self.grid_cel,
                "feed_in_revenue": self.feed_in_revenue, "internal_revenue": self.internal_revenue,
                "bill": self.total, "net_cost": self.net_cost}


ZERO_BILL = BillBreakdown(0.0, 0.0, 0.0)


def external_components(external: tf.TariffSchedule, axis: TimeAxis) -> tuple:
    energy, grid, tax = tf.decompose_series(external, axis)
    return (np.broadcast_to(energy, (axis.n_steps,)) / 100.0,
            np.broadcast_to(grid, (axis.n_steps,)) / 100.0,
            np.broadcast_to(tax, (axis.n_steps,)) / 100.0)


def bills_without_cel(member_net_kw, external: tf.TariffSchedule, axis: TimeAxis) -> list:
    """Per-member bills when every kWh is traded with the DSO."""
    net = np.atleast_2d(np.asarray(member_net_kw, dtype=float).T).T
    e, g, x = external_components(external, axis)
    imp = np.maximum(net, 0.0) * axis.ts_hours
    exp = np.maximum(-net, 0.0) * axis.ts_hours
    feed = tf.price_export(external) / 100.0
    return [BillBreakdown(float(imp[:, m] @ e), float(imp[:, m] @ x), float(imp[:, m] @ g),
                          feed_in_revenue=float(exp[:, m].sum() * feed))
            for m in range(net.shape[1])]


def bills_with_cel(settlement: ExchangeSettlement, external: tf.TariffSchedule,
                   axis: TimeAxis) -> list:
    """Per-member bills splitting residual DSO trades from internal trades."""
    e, g, x = external_components(external, axis)
    pe, pg, px = (settlement.price_energy / 100.0, settlement.price_grid / 100.0,
                  settlement.price_tax / 100.0)
    feed = tf.price_export(external) / 100.0
    imp, exp = settlement.residual_import, settlement.residual_export
    ai, ae = settlement.alloc_import, settlement.alloc_export
    return [BillBreakdown(
        energy=float(imp[:, m] @ e), tax=float(imp[:, m] @ x), grid=float(imp[:, m] @ g),
        energy_cel=float(ai[:, m] @ pe), tax_cel=float(ai[:, m] @ px), grid_cel=float(ai[:, m] @ pg),
        feed_in_revenue=float(exp[:, m].sum() * feed),
        internal_revenue=float(ae[:, m] @ pe),
    ) for m in range(imp.shape[1])]


def revenue_loss(bill_no_cel: BillBreakdown, bill_cel: BillBreakdown) -> float:
    """DSO income forgone: ``Bill_noCEL - (Bill_CEL - E_energy_CEL)``."""
    return bill_no_cel.total - (bill_cel.total - bill_cel.energy_cel)


def total_cost(energy_charges: float, power_charges: float = 0.0) -> float:
    """Annual total cost: capacity charges plus volumetric energy charges."""
    return power_charges + energy_charges


def sum_bills(bills: Sequence[BillBreakdown]) -> BillBreakdown:
    out = ZERO_BILL
    for b in bills:
        out = out + b
    return out
