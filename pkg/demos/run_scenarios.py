"""Compare the double and dynamic internal tariffs for a 30% community.

Flows are identical in both runs; only the money changes hands
differently. Run with ``python3 demos/run_scenarios.py``.
"""

from celsim import ScenarioSpec, run_scenario, synthetic_dataset

ds = synthetic_dataset(seed=2025)
common = dict(member_fraction=0.3, battery="central", battery_kwh=40.0)
keys = ("totex_chf", "lcoe_chf_kwh", "exchange_mwh", "bill_no_cel_chf", "bill_cel_chf",
        "revenue_loss_pct")

for tariff in ("double", "dynamic"):
    res = run_scenario(ScenarioSpec(f"cel30-{tariff}", internal_tariff=tariff, **common), ds)
    row = res.report.summary_row()
    print(f"{row['scenario_id']}: {row['members']} members, {row['pv_kwp']:.0f} kWp PV")
    for k in keys:
        print(f"  {k:18s} {row[k]:.4g}")
    t = res.report.technical
    print(f"  voltage range      {t['v_min_pu']:.4f} .. {t['v_max_pu']:.4f} p.u.")
