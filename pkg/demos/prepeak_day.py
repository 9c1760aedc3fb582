"""Show the battery charging from the grid ahead of the evening peak.

On a dull winter weekday the optimal dispatch of a 40 kWh battery imports
more before 17:00 than a building without storage, then discharges through
the peak window. Run with ``python3 demos/prepeak_day.py``.
"""

import numpy as np

from celsim import synthetic_dataset
from celsim import tariff as tf
from celsim.dispatch import BatteryDesign, passthrough_plan, solve_dispatch
from celsim.scenario import max_pv_production

ds = synthetic_dataset(seed=2025)
axis = ds.axis
ghi = ds.meteo.ghi.values.reshape(-1, 96)
weekday = axis.weekday()[::96]
day = min((k for k in range(45) if weekday[k] < 5), key=lambda k: ghi[k].sum())
rows = slice(day * 96, (day + 1) * 96)

b = ds.building("3")
load = b.load.values[rows]
pv = max_pv_production(b, ds).values[rows]
price = tf.import_prices(ds.tariffs["external"], axis)[rows] / 100.0

plan = solve_dispatch(load, pv, BatteryDesign(40.0), price, 0.115, axis.ts_hours)
base = passthrough_plan(load, pv, axis.ts_hours)

print(f"day {axis.timestamp(day * 96):%Y-%m-%d}, building {b.id}")
print(" hour  price  import(no batt)  import(batt)   soc")
for h in range(12, 24):
    s = slice(4 * h, 4 * h + 4)
    print(f"{h:5d} {100 * price[s].mean():6.2f} {base.p_imp[s].mean():16.2f}"
          f" {plan.p_imp[s].mean():13.2f} {max(plan.soc[4 * h + 3], 0.0):6.2f}")
cost_base = float(np.sum(base.p_imp * price) * axis.ts_hours)
cost_plan = float(np.sum(plan.p_imp * price - plan.p_exp * 0.115) * axis.ts_hours)
print(f"energy cost: {cost_base:.2f} CHF without battery, {cost_plan:.2f} CHF with")
