"""celsim: techno-economic simulator for local electricity communities."""

from .aging import AgingParams, CycleSet, capacity_fade, rainflow, replacement_schedule
from .dataset import Dataset, synthetic_dataset
from .dispatch import (
    BatteryDesign, CostBreakdown, DispatchPlan, EconomicParams, annuity, grid_cost,
    optimize_dispatch, size_building,
)
from .finance import CashflowLedger, irr, lcoe, profit, revenue_loss, settle_exchange
from .powerflow import LvNetwork, run_year, solve_step, voltage_stats
from .scenario import ScenarioSpec, SweepSpec, ratio_sweep, run_scenario
from .tariff import TariffSchedule, decompose, price_export, price_import
from .timeseries import Building, Profile, PvDesign, TimeAxis, ingest_profile, pv_production

__version__ = "0.1.0"

__all__ = [
    "AgingParams", "CycleSet", "capacity_fade", "rainflow", "replacement_schedule",
    "Dataset", "synthetic_dataset",
    "BatteryDesign", "CostBreakdown", "DispatchPlan", "EconomicParams", "annuity", "grid_cost",
    "optimize_dispatch", "size_building",
    "CashflowLedger", "irr", "lcoe", "profit", "revenue_loss", "settle_exchange",
    "LvNetwork", "run_year", "solve_step", "voltage_stats",
    "ScenarioSpec", "SweepSpec", "ratio_sweep", "run_scenario",
    "TariffSchedule", "decompose", "price_export", "price_import",
    "Building", "Profile", "PvDesign", "TimeAxis", "ingest_profile", "pv_production",
]
