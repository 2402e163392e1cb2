"""Pack statistics and the resistance-temperature fit on synthetic data.

The measured pack cannot be reproduced here, so the per-position capacity
and resistance means only serve as generator parameters.

Run:  python3 docs/examples/04_pack_statistics.py
"""

import numpy as np

from cellscreen.diagnostics import CellMetrics, fit_rt, pack_stats
from cellscreen.ecm import RT_COEFFICIENTS, ResistanceLaw

rng = np.random.default_rng(2024)
q_means, q_sds = (218.80, 218.96, 218.95), (0.64, 0.52, 0.52)

modules = []
for _ in range(36):
    q = rng.normal(q_means, q_sds)
    # energy tracks capacity through a slightly varying mean voltage
    e = q * rng.normal(3.68, 0.002, 3)
    modules.append([CellMetrics(q_ah=a, e_wh=b) for a, b in zip(q, e)])

report = pack_stats(modules)
print(report.render())

# r(T) points near three chamber setpoints, a little above each from self-heating
law = ResistanceLaw(RT_COEFFICIENTS)
points = []
for soc in (0.9, 0.65, 0.4):
    for setpoint in (15.0, 25.0, 35.0):
        for temp in setpoint + rng.uniform(0.0, 4.0, 108):
            points.append((temp, soc, 1000 * law(temp, soc) + rng.normal(0.0, 0.009)))

fit = fit_rt(points)
print("\nSOC    a1 [ohm*degC]  a2 [degC]  a3 [ohm]   rmse [mOhm]")
for soc, c in sorted(fit.levels.items(), reverse=True):
    print(f"{soc:4.2f}   {c.a1:.5f}       {c.a2:8.4f}  {c.a3:.6f}   {c.rmse_mohm:.4f}")
print(f"\nr(25 degC, 90% SOC) = {1000 * float(fit.predict(25.0, 0.9)):.4f} mOhm")
