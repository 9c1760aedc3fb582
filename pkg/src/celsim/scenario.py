"""Scenario definitions and the end-to-end simulation pipeline.

A scenario picks community members on the feeder, equips a share of them
with roof-filling PV, optionally adds a central battery (sized as the sum of
per-building optima unless given) and a large virtual consumer or producer,
then runs: community dispatch on the aggregated virtual building, internal
settlement, nodal power flow and KPI extraction.

Dispatch always sees the external tariff, so the choice of internal tariff
changes settlements but never the physical flows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import finance as fin
from .aging import AgingParams, replacement_schedule
from .dataset import (
    Dataset, large_consumer_load, large_producer_design, read_dataset, synthetic_dataset,
)
from .dispatch import (
    BatteryDesign, CostBreakdown, DispatchPlan, EconomicParams, capex_battery, capex_pv,
    optimize_dispatch, passthrough_plan, size_building,
)
from .errors import CelsimError, ScenarioError, ValidationError
from .powerflow import FlowResult, run_year, voltage_stats
from .timeseries import Building, Profile, pv_production

log = logging.getLogger(__name__)

ALLOCATIONS = ("end_of_line", "random")
BATTERY_MODES = ("none", "central")
PLACEMENTS = ("up", "down")
INTERNAL_TARIFFS = {"double": "internal_double", "dynamic": "internal_dynamic"}
EXTRA_ACTORS = ("none", "large_consumer", "large_producer")
BATTERY_ID = "battery"

SUMMARY_COLUMNS = (
    "scenario_id", "status", "members", "pv_buildings", "pv_kwp", "battery_kwh",
    "internal_tariff", "extra_actor", "totex_chf", "capex_chf", "opex_chf", "lcoe_chf_kwh",
    "irr", "profit_chf", "payback_years", "bill_no_cel_chf", "bill_cel_chf",
    "revenue_loss_chf", "revenue_loss_pct", "load_mwh", "pv_mwh", "exchange_mwh",
    "import_mwh", "export_mwh", "max_feed_in_kw", "max_drawn_kw", "cel_max_feed_in_kw",
    "cel_max_drawn_kw", "max_line_loading_pct", "v_min_pu", "v_max_pu",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """One point of the experiment grid.

    ``member_fraction`` selects ``floor(fraction * n_buildings)`` members
    unless ``members`` lists them explicitly. ``pv_penetration`` is the share
    of members (rounded down) receiving roof-filling PV, lowest
    PV-to-load ratio first. ``cel=False`` describes the stand-alone case with
    no internal exchange.
    """

    id: str
    member_fraction: float = 1.0
    members: Optional[tuple] = None
    allocation: str = "end_of_line"
    seed: int = 0
    pv_penetration: float = 1.0
    pv_mode: str = "max_pv"
    cel: bool = True
    battery: str = "none"
    placement: str = "down"
    battery_kwh: Optional[float] = None
    battery_search_max_kwh: Optional[float] = None
    internal_tariff: str = "double"
    extra_actor: str = "none"

    def __post_init__(self):
        if not self.id:
            raise ValidationError("scenario id must be non-empty")
        if self.members is not None:
            object.__setattr__(self, "members", tuple(str(m) for m in self.members))
        elif not 0 < self.member_fraction <= 1:
            raise ValidationError("member_fraction must lie in (0, 1]")
        if self.allocation not in ALLOCATIONS:
            raise ValidationError(f"allocation must be one of {ALLOCATIONS}")
        if not 0 <= self.pv_penetration <= 1:
            raise ValidationError("pv_penetration must lie in [0, 1]")
        if self.pv_mode not in ("max_pv",):
            raise ValidationError("pv_mode must be 'max_pv'")
        if self.battery not in BATTERY_MODES:
            raise ValidationError(f"battery must be one of {BATTERY_MODES}")
        if self.placement not in PLACEMENTS:
            raise ValidationError(f"placement must be one of {PLACEMENTS}")
        if self.battery == "central" and not self.cel:
            raise ValidationError("a central battery requires a community (cel=true)")
        if self.battery_kwh is not None and self.battery_kwh < 0:
            raise ValidationError("battery_kwh must be >= 0")
        if self.internal_tariff not in INTERNAL_TARIFFS:
            raise ValidationError(f"internal_tariff must be one of {tuple(INTERNAL_TARIFFS)}")
        if self.extra_actor not in EXTRA_ACTORS:
            raise ValidationError(f"extra_actor must be one of {EXTRA_ACTORS}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("members") is not None:
            data["members"] = tuple(data["members"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["members"] is not None:
            d["members"] = list(d["members"])
        return d


@dataclass(frozen=True)
class SweepSpec:
    """PV-to-load ratio sweep over a fixed community.

    Members receive PV one at a time in ``order`` (default: lowest
    PV-to-load ratio first); every prefix of the order is one sweep point.
    """

    id: str
    member_fraction: float = 1.0
    members: Optional[tuple] = None
    allocation: str = "end_of_line"
    seed: int = 0
    order: Optional[tuple] = None
    battery: bool = False
    battery_kwh: float = 0.0
    internal_tariff: str = "double"

    def __post_init__(self):
        if self.members is not None:
            object.__setattr__(self, "members", tuple(str(m) for m in self.members))
        if self.order is not None:
            object.__setattr__(self, "order", tuple(str(m) for m in self.order))
        if self.battery and self.battery_kwh <= 0:
            raise ValidationError("a battery sweep needs battery_kwh > 0")
        if self.internal_tariff not in INTERNAL_TARIFFS:
            raise ValidationError(f"internal_tariff must be one of {tuple(INTERNAL_TARIFFS)}")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown sweep keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("members", "order"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def community_spec(self) -> ScenarioSpec:
        return ScenarioSpec(self.id, self.member_fraction, self.members, self.allocation, self.seed)


# --------------------------------------------------------------------------
# Selection
# --------------------------------------------------------------------------


def member_count(n_buildings: int, fraction: float) -> int:
    return int(math.floor(fraction * n_buildings + 1e-9))


def select_members(dataset: Dataset, spec: ScenarioSpec) -> List[Building]:
    """Community members, ordered as selected.

    ``end_of_line`` ranks buildings by electrical distance of their bus from
    the transformer, farthest first; ``random`` draws a seeded uniform sample.
    """
    by_id = {b.id: b for b in dataset.buildings}
    if spec.members is not None:
        missing = [m for m in spec.members if m not in by_id]
        if missing:
            raise ValidationError(f"unknown member ids: {missing}")
        if not spec.members:
            raise ValidationError("explicit member list is empty")
        return [by_id[m] for m in spec.members]
    n = member_count(len(dataset.buildings), spec.member_fraction)
    if n == 0:
        raise ValidationError(f"member_fraction {spec.member_fraction} selects no building")
    if spec.allocation == "random":
        rng = np.random.default_rng(spec.seed)
        picks = rng.choice(len(dataset.buildings), size=n, replace=False)
        return [dataset.buildings[k] for k in picks]
    dist = dataset.network.electrical_distance()
    ranked = sorted(enumerate(dataset.buildings), key=lambda kb: (-dist[kb[1].bus_id], kb[0]))
    return [b for _, b in ranked[:n]]


def pv_to_load_ratio(building: Building, dataset: Dataset) -> float:
    design = building.max_pv()
    if design is None:
        return math.inf
    pv = pv_production(design, dataset.meteo.ghi, dataset.meteo.temp).annual_mwh()
    return pv / building.annual_load_mwh


def pv_order(members: Sequence[Building], dataset: Dataset) -> List[Building]:
    """PV-capable members, lowest PV-to-load ratio first."""
    capable = [b for b in members if b.max_pv() is not None]
    return sorted(capable, key=lambda b: (pv_to_load_ratio(b, dataset), b.id))


def choose_pv_buildings(members: Sequence[Building], penetration: float,
                        dataset: Dataset) -> List[Building]:
    n = member_count(len(members), penetration)
    return pv_order(members, dataset)[:n]


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class KpiReport:
    scenario_id: str
    spec: dict
    members: list
    pv_buildings: list
    pv_kwp: float
    battery_kwh: float
    economic: dict
    technical: dict
    bills: list = field(default_factory=list)

    def summary_row(self, status: str = "ok") -> dict:
        e, t = self.economic, self.technical
        row = {
            "scenario_id": self.scenario_id, "status": status, "members": len(self.members),
            "pv_buildings": len(self.pv_buildings), "pv_kwp": self.pv_kwp,
            "battery_kwh": self.battery_kwh, "internal_tariff": self.spec["internal_tariff"],
            "extra_actor": self.spec["extra_actor"],
        }
        for key in ("totex_chf", "capex_chf", "opex_chf", "lcoe_chf_kwh", "irr", "profit_chf",
                    "payback_years", "bill_no_cel_chf", "bill_cel_chf", "revenue_loss_chf",
                    "revenue_loss_pct", "load_mwh", "pv_mwh", "exchange_mwh", "import_mwh",
                    "export_mwh"):
            row[key] = e.get(key)
        for key in ("max_feed_in_kw", "max_drawn_kw", "cel_max_feed_in_kw", "cel_max_drawn_kw",
                    "max_line_loading_pct", "v_min_pu", "v_max_pu"):
            row[key] = t.get(key)
        return row

    def to_dict(self) -> dict:
        return {"scenario_id": self.scenario_id, "spec": self.spec, "members": self.members,
                "pv_buildings": self.pv_buildings, "pv_kwp": self.pv_kwp,
                "battery_kwh": self.battery_kwh, "economic": self.economic,
                "technical": self.technical}


@dataclass(eq=False)
class ScenarioResult:
    spec: ScenarioSpec
    report: KpiReport
    plan: DispatchPlan
    participants: list
    member_net_kw: np.ndarray
    settlement: Optional[fin.ExchangeSettlement]
    flow: FlowResult
    cost: CostBreakdown


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------


def _production_cache(dataset: Dataset) -> Dict[str, Profile]:
    cache = getattr(dataset, "_pv_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(dataset, "_pv_cache", cache)
    return cache


def max_pv_production(building: Building, dataset: Dataset) -> Profile:
    cache = _production_cache(dataset)
    if building.id not in cache:
        cache[building.id] = pv_production(building.max_pv(), dataset.meteo.ghi, dataset.meteo.temp)
    return cache[building.id]


def individual_battery_optima(pv_buildings: Sequence[Building], dataset: Dataset,
                              econ: EconomicParams, aging: AgingParams,
                              search_max_kwh: Optional[float] = None) -> List[BatteryDesign]:
    """Per-building TOTEX-optimal batteries with roof-filling PV."""
    external = dataset.tariffs["external"]
    out = []
    for b in pv_buildings:
        res = size_building(b, dataset.meteo, external, econ, mode="max_pv", aging=aging,
                            battery_max_kwh=search_max_kwh)
        log.info("building %s: optimal battery %.0f kWh", b.id, res.battery.capacity_kwh)
        out.append(res.battery)
    return out


def battery_bus(dataset: Dataset, members: Sequence[Building], placement: str) -> str:
    """``up``: bus of the largest PV member nearest the transformer; ``down``: farthest bus."""
    dist = dataset.network.electrical_distance()
    if placement == "down":
        return max(dist, key=lambda bus: (dist[bus], bus))
    capable = [b for b in members if b.max_pv() is not None] or list(members)
    biggest = max(b.max_pv().kwp if b.max_pv() else 0.0 for b in capable)
    top = [b for b in capable if (b.max_pv().kwp if b.max_pv() else 0.0) == biggest]
    return min(top, key=lambda b: (dist[b.bus_id], b.id)).bus_id


def _ledgers(econ: EconomicParams, capex: float, annual_cost: float, served_mwh: float,
             baseline_cost: float, extras: dict):
    scen = fin.CashflowLedger.annual(capex, annual_cost, served_mwh, econ.lifetime, extras)
    base = fin.CashflowLedger.annual(0.0, baseline_cost, served_mwh, econ.lifetime)
    return base, scen


def run_scenario(spec: ScenarioSpec, dataset: Dataset,
                 econ: EconomicParams = EconomicParams(),
                 aging: AgingParams = AgingParams()) -> ScenarioResult:
    """Run the full pipeline; module errors are re-raised as :class:`ScenarioError`."""
    try:
        return _run_scenario(spec, dataset, econ, aging)
    except CelsimError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(spec.id, exc) from exc


def _run_scenario(spec, dataset, econ, aging) -> ScenarioResult:
    axis = dataset.axis
    ts = axis.ts_hours
    external = dataset.tariffs["external"]
    internal = dataset.tariffs[INTERNAL_TARIFFS[spec.internal_tariff]]
    members = select_members(dataset, spec)
    pv_members = choose_pv_buildings(members, spec.pv_penetration, dataset)
    pv_ids = {b.id for b in pv_members}
    designs = {b.id: b.max_pv() for b in pv_members}

    participants, loads, pvs = [], [], []
    for b in members:
        participants.append(b.id)
        loads.append(b.load.values)
        pvs.append(max_pv_production(b, dataset).values if b.id in pv_ids else np.zeros(axis.n_steps))
    if spec.extra_actor == "large_consumer":
        participants.append("large_consumer")
        loads.append(large_consumer_load(axis, spec.seed + 7).values)
        pvs.append(np.zeros(axis.n_steps))
    elif spec.extra_actor == "large_producer":
        participants.append("large_producer")
        loads.append(np.zeros(axis.n_steps))
        pvs.append(pv_production(large_producer_design(), dataset.meteo.ghi, dataset.meteo.temp).values)
    loads, pvs = np.array(loads).T, np.array(pvs).T
    extra_pv_capex = capex_pv(large_producer_design(), econ) if spec.extra_actor == "large_producer" else 0.0

    # Community dispatch on the virtual building.
    battery = BatteryDesign(0.0)
    if spec.battery == "central":
        if spec.battery_kwh is not None:
            capacity = spec.battery_kwh
        else:
            capacity = sum(d.capacity_kwh for d in individual_battery_optima(
                pv_members, dataset, econ, aging, spec.battery_search_max_kwh))
        battery = BatteryDesign(float(capacity))
    v_load, v_pv = loads.sum(axis=1), pvs.sum(axis=1)
    if battery.present:
        res = optimize_dispatch(Profile(axis, v_load, "kW"), Profile(axis, v_pv, "kW"), battery,
                                external, econ, aging=aging)
        plan = res.plan
    else:
        plan = passthrough_plan(v_load, v_pv, ts, axis=axis)

    net = loads - pvs
    if battery.present:
        participants.append(BATTERY_ID)
        net = np.column_stack([net, plan.p_ch - plan.p_dis])

    # Settlement and bills on identical member flows.
    bills_plain = fin.bills_without_cel(net, external, axis)
    settlement = None
    if spec.cel:
        settlement = fin.settle_exchange(net, internal, axis, dataset.meteo.ghi)
        bills_cel = fin.bills_with_cel(settlement, external, axis)
    else:
        bills_cel = bills_plain
    total_plain, total_cel = fin.sum_bills(bills_plain), fin.sum_bills(bills_cel)
    loss = sum(fin.revenue_loss(a, b) for a, b in zip(bills_plain, bills_cel))

    # Costs: CAPEX of all PV systems and the battery, OPEX from settled bills.
    cx_pv = sum(capex_pv(d, econ) for d in designs.values()) + extra_pv_capex
    cx_bat = capex_battery(battery, econ)
    n_inverters = len(designs) + (1 if extra_pv_capex else 0)
    schedule = replacement_schedule(plan.soc_trace() if battery.present else None, econ, aging,
                                    battery_capex=cx_bat,
                                    inverter_capex=n_inverters * econ.inverter_cost)
    grid_cost = total_cel.net_cost
    ox_bo = float(np.sum(plan.p_ch * econ.c_bat_charge + plan.p_dis * econ.c_bat_discharge) * ts)
    cost = CostBreakdown(ox_ge=grid_cost, ox_bo=ox_bo, ox_pm=econ.pv_maintenance * cx_pv,
                         cx_pv=cx_pv, cx_bat=cx_bat, lifetime=econ.lifetime,
                         l_bat=schedule.l_bat, annuity=econ.annuity, schedule=schedule)

    served_mwh = float(loads.sum() * ts / 1000.0)
    e_ext, g_ext, x_ext = fin.external_components(external, axis)
    baseline_cost = float(loads.sum(axis=1) @ (e_ext + g_ext + x_ext) * ts)
    extras = fin.replacement_entries(schedule, cx_bat, n_inverters * econ.inverter_cost)
    base_ledger, scen_ledger = _ledgers(econ, cx_pv + cx_bat, cost.opex, served_mwh,
                                        baseline_cost, extras)
    savings = base_ledger.costs - scen_ledger.costs
    try:
        irr_value = fin.irr(savings)
    except CelsimError:
        irr_value = None
    capex_total = cx_pv + cx_bat

    economic = {
        "totex_chf": cost.totex,
        "capex_chf": cost.capex,
        "opex_chf": cost.opex,
        "ox_ge_chf": cost.ox_ge,
        "ox_bo_chf": cost.ox_bo,
        "ox_pm_chf": cost.ox_pm,
        "cx_pv_chf": cx_pv,
        "cx_bat_chf": cx_bat,
        "l_bat_years": schedule.l_bat,
        "battery_replacement_years": list(schedule.battery_years),
        "inverter_replacement_years": list(schedule.inverter_years),
        "replacement_opex_chf": cost.replacement_opex,
        "lcoe_chf_kwh": fin.lcoe(scen_ledger, econ.discount_rate) if served_mwh > 0 else None,
        "irr": irr_value,
        "profit_chf": fin.profit(base_ledger, scen_ledger, econ.discount_rate),
        "payback_years": fin.discounted_payback(savings, econ.discount_rate) if capex_total > 0 else None,
        "total_cost_chf": fin.total_cost(total_cel.total),
        "bill_grid_only_chf": baseline_cost,
        "bill_no_cel_chf": total_plain.total,
        "bill_cel_chf": total_cel.total,
        "bill_components": total_cel.as_dict(),
        "revenue_loss_chf": loss,
        "revenue_loss_pct": 100.0 * loss / total_plain.total if total_plain.total > 0 else 0.0,
        "load_mwh": served_mwh,
        "pv_mwh": float(pvs.sum() * ts / 1000.0),
        "exchange_mwh": settlement.total_exchange_kwh / 1000.0 if settlement else 0.0,
        "import_mwh": plan.imported_kwh() / 1000.0,
        "export_mwh": plan.exported_kwh() / 1000.0,
    }

    # Nodal power flow: every building on the feeder, members with their PV.
    building_kw = {}
    for b in dataset.buildings:
        prod = max_pv_production(b, dataset).values if b.id in pv_ids else 0.0
        building_kw[b.id] = b.load.values - prod
    extra = {}
    if battery.present:
        extra[battery_bus(dataset, members, spec.placement)] = plan.p_ch - plan.p_dis
    flow = run_year(dataset.network, building_kw, extra)
    vm = flow.vm
    cel_net = net.sum(axis=1) - (loads[:, len(members):].sum(axis=1) - pvs[:, len(members):].sum(axis=1))
    lines = flow.line_table()
    technical = {
        "max_feed_in_kw": flow.max_feed_in(),
        "max_drawn_kw": flow.max_drawn(),
        "cel_max_feed_in_kw": float(max(0.0, -cel_net.min())),
        "cel_max_drawn_kw": float(max(0.0, cel_net.max())),
        "max_transformer_kva": float(flow.transformer_kva.max()),
        "losses_mwh": float(flow.losses_kw.sum() * ts / 1000.0),
        "max_line_loading_pct": max(l["max_loading_pct"] for l in lines),
        "v_min_pu": float(vm.min()),
        "v_max_pu": float(vm.max()),
        "battery_bus": next(iter(extra), None),
        "lines": lines,
    }

    bill_rows = []
    for pid, a, b in zip(participants, bills_plain, bills_cel):
        row = {"participant": pid}
        row.update({f"no_cel_{k}": v for k, v in a.as_dict().items()})
        row.update({f"cel_{k}": v for k, v in b.as_dict().items()})
        row["revenue_loss"] = fin.revenue_loss(a, b)
        bill_rows.append(row)

    report = KpiReport(
        scenario_id=spec.id, spec=spec.to_dict(), members=[b.id for b in members],
        pv_buildings=[b.id for b in pv_members],
        pv_kwp=sum(d.kwp for d in designs.values()) + (large_producer_design().kwp if extra_pv_capex else 0.0),
        battery_kwh=battery.capacity_kwh, economic=economic, technical=technical, bills=bill_rows,
    )
    return ScenarioResult(spec, report, plan, participants, net, settlement, flow, cost)


# --------------------------------------------------------------------------
# Ratio sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    n_pv: int
    added: Optional[str]
    pv_mwh: float
    load_mwh: float
    ratio: float
    exchange_mwh: float


def ratio_sweep(sweep: SweepSpec, dataset: Dataset,
                econ: EconomicParams = EconomicParams(),
                aging: AgingParams = AgingParams()) -> List[SweepPoint]:
    """Internal exchange at each prefix of the PV-addition order."""
    axis = dataset.axis
    ts = axis.ts_hours
    members = select_members(dataset, sweep.community_spec())
    by_id = {b.id: b for b in members}
    if sweep.order is not None:
        bad = [m for m in sweep.order if m not in by_id or by_id[m].max_pv() is None]
        if bad:
            raise ValidationError(f"sweep order lists non-member or roofless buildings: {bad}")
        order = [by_id[m] for m in sweep.order]
    else:
        order = pv_order(members, dataset)
    if not order:
        raise ValidationError("sweep needs at least two points (one PV-capable member)")
    internal = dataset.tariffs[INTERNAL_TARIFFS[sweep.internal_tariff]]
    index = {b.id: k for k, b in enumerate(members)}
    loads = np.array([b.load.values for b in members]).T
    pvs = np.zeros_like(loads)
    load_mwh = float(loads.sum() * ts / 1000.0)
    battery = BatteryDesign(sweep.battery_kwh) if sweep.battery else None
    points = []
    for k in range(len(order) + 1):
        if k:
            b = order[k - 1]
            pvs[:, index[b.id]] = max_pv_production(b, dataset).values
        net = loads - pvs
        if battery is not None and pvs.any():
            res = optimize_dispatch(Profile(axis, loads.sum(axis=1), "kW"),
                                    Profile(axis, pvs.sum(axis=1), "kW"), battery,
                                    dataset.tariffs["external"], econ, aging=aging)
            net = np.column_stack([net, res.plan.p_ch - res.plan.p_dis])
        settlement = fin.settle_exchange(net, internal, axis, dataset.meteo.ghi)
        pv_mwh = float(pvs.sum() * ts / 1000.0)
        points.append(SweepPoint(k, order[k - 1].id if k else None, pv_mwh, load_mwh,
                                 pv_mwh / load_mwh, settlement.total_exchange_kwh / 1000.0))
        log.debug("sweep %s point %d: ratio %.3f exchange %.3f MWh", sweep.id, k,
                  points[-1].ratio, points[-1].exchange_mwh)
    return points


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def write_scenario_outputs(result: ScenarioResult, out_dir) -> Path:
    """Write kpi.json, bills.csv, flows.csv, voltages.csv and lines.csv."""
    out = Path(out_dir) / result.spec.id
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    (out / "kpi.json").write_text(
        json.dumps(rep.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8")

    if rep.bills:
        header = list(rep.bills[0])
        _write_csv(out / "bills.csv", header, ([r[h] for h in header] for r in rep.bills))

    plan, flow = result.plan, result.flow
    axis = plan.axis
    stamps = np.datetime_as_string(axis.timestamps(), unit="m")
    exchange = (result.settlement.exchange_kwh if result.settlement is not None
                else np.zeros(len(plan)))
    vm = flow.vm
    _write_csv(out / "flows.csv",
               ["timestamp", "load_kw", "pv_kw", "import_kw", "export_kw", "charge_kw",
                "discharge_kw", "soc", "exchange_kwh", "transformer_p_kw", "v_min_pu", "v_max_pu"],
               zip(stamps, plan.load, plan.pv, plan.p_imp, plan.p_exp, plan.p_ch, plan.p_dis,
                   plan.soc, exchange, flow.p_slack_kw, vm.min(axis=1), vm.max(axis=1)))

    stats = voltage_stats(vm, flow.net.buses)
    _write_csv(out / "voltages.csv",
               ["bus", "p95_over_pu", "p95_under_pu", "n_over", "n_under", "q1", "median", "q3",
                "whisker_lo", "whisker_hi"],
               ([s.bus, s.p95_over, s.p95_under, s.n_over, s.n_under,
                 *(asdict(s.box).values() if s.box else [None] * 5)] for s in stats))
    lines = rep.technical["lines"]
    _write_csv(out / "lines.csv", ["line", "max_loading_pct", "median_loading_pct"],
               ([l["line"], l["max_loading_pct"], l["median_loading_pct"]] for l in lines))
    return out


def write_sweep(points: Sequence[SweepPoint], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, ["n_pv", "added", "pv_mwh", "load_mwh", "pv_to_load_ratio", "exchange_mwh"],
               ([p.n_pv, p.added, p.pv_mwh, p.load_mwh, p.ratio, p.exchange_mwh] for p in points))
    return path


def write_summary(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, SUMMARY_COLUMNS, ([r.get(c) for c in SUMMARY_COLUMNS] for r in rows))
    return path


# --------------------------------------------------------------------------
# Batch execution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSource:
    """Picklable recipe for a dataset, rebuilt (and cached) in each worker."""

    kind: str = "synthetic"
    seed: int = 2025
    path: Optional[str] = None
    network: Optional[str] = None
    tariffs: Optional[str] = None

    def load(self) -> Dataset:
        if self.kind == "synthetic":
            ds = synthetic_dataset(self.seed)
        elif self.kind == "directory":
            ds = _read_cached(self.path, self.network, self.tariffs)
        else:
            raise ValidationError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "synthetic" and (self.network or self.tariffs):
            from .powerflow import load_network
            from .tariff import load_tariffs
            net = load_network(self.network) if self.network else ds.network
            tariffs = load_tariffs(self.tariffs) if self.tariffs else ds.tariffs
            ds = Dataset(net, ds.buildings, ds.meteo, tariffs)
        return ds


_DIR_CACHE: dict = {}


def _read_cached(path, network, tariffs) -> Dataset:
    key = (path, network, tariffs)
    if key not in _DIR_CACHE:
        _DIR_CACHE[key] = read_dataset(path, network, tariffs)
    return _DIR_CACHE[key]


@dataclass
class BatchOutcome:
    scenario_id: str
    ok: bool
    row: dict
    error: Optional[str] = None


def _run_one(args) -> BatchOutcome:
    spec, source, econ, aging, out_dir = args
    try:
        result = run_scenario(spec, source.load(), econ, aging)
        if out_dir is not None:
            write_scenario_outputs(result, out_dir)
        return BatchOutcome(spec.id, True, result.report.summary_row())
    except CelsimError as exc:
        log.error("%s", exc)
        return BatchOutcome(spec.id, False, {"scenario_id": spec.id, "status": f"failed: {exc}"},
                            str(exc))


def run_batch(specs: Sequence[ScenarioSpec], source: DatasetSource,
              econ: EconomicParams = EconomicParams(), aging: AgingParams = AgingParams(),
              out_dir=None, jobs: int = 1) -> List[BatchOutcome]:
    """Run scenarios, in parallel when ``jobs > 1``; results keep input order."""
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValidationError("scenario ids must be unique")
    tasks = [(s, source, econ, aging, out_dir) for s in specs]
    if jobs <= 1 or len(tasks) <= 1:
        outcomes = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    if out_dir is not None:
        write_summary([o.row for o in outcomes], Path(out_dir) / "summary.csv")
    return outcomes


def with_internal_tariff(spec: ScenarioSpec, tariff: str, new_id: Optional[str] = None) -> ScenarioSpec:
    return replace(spec, internal_tariff=tariff, id=new_id or f"{spec.id}-{tariff}")
