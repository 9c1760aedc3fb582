"""Sweep the PV-to-load ratio of the full village and locate peak exchange.

Buildings receive PV one at a time; internal exchange first grows, then
falls once most members are net producers at the same hours. Takes about
ten seconds. Run with ``python3 demos/ratio_sweep.py``.
"""

from celsim import SweepSpec, ratio_sweep, synthetic_dataset

ds = synthetic_dataset(seed=2025)
points = ratio_sweep(SweepSpec("full"), ds)
best = max(points, key=lambda p: p.exchange_mwh)
print(" n_pv  ratio  exchange MWh")
for p in points:
    mark = "  <- max" if p is best else ""
    print(f"{p.n_pv:5d} {p.ratio:6.2f} {p.exchange_mwh:13.1f}{mark}")
