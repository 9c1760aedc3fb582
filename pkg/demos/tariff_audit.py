"""Print the 2025 tariff decomposition and a day of dynamic prices.

Run with ``python3 demos/tariff_audit.py``.
"""

import numpy as np

from celsim import tariff as tf
from celsim.timeseries import TimeAxis

schedules = tf.default_schedules()
print(tf.audit_table(schedules))
print()

# A 40% cut on the distribution grid charge gives the internal double tariff.
warnings = tf.check_grid_reduction(schedules["external"], schedules["internal_double"])
print("grid-reduction check:", "ok" if not warnings else warnings)

# The dynamic price falls linearly with irradiance down to the feed-in floor.
axis = TimeAxis.for_year(2025)
ghi = np.array([0.0, 250.0, 500.0, 750.0, 1000.0, 1200.0])
dyn = schedules["internal_dynamic"]
print("\nghi W/m2   price   energy   grid   tax  (ct/kWh)")
for g in ghi:
    e, grid, tax = tf.decompose(dyn, axis, 0, g)
    print(f"{g:8.0f} {tf.price_import(dyn, axis, 0, g):7.2f} {e:8.2f} {grid:6.2f} {tax:5.2f}")
