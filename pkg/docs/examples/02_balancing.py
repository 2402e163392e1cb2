"""How far passive balancing gets during one CC-CV charge.

Run:  python3 docs/examples/02_balancing.py
"""

import numpy as np

from cellscreen.ecm import CellParams, ResistanceLaw, soc_derivative_closed
from cellscreen.mbh import MbhConfig
from cellscreen.modulesim import ModuleConfig, ThermalConfig
from cellscreen.protocol import TestPlan, cccv_charge, run_plan

cells = tuple(
    CellParams(capacity_ah=q, r0_law=ResistanceLaw.constant(r))
    for q, r in zip((218.80, 218.96, 218.95), (2.185e-4, 1.996e-4, 2.181e-4))
)
module = ModuleConfig(cells=cells, thermal=ThermalConfig(sensor_noise_sd=0.0))
plan = TestPlan(tuple(cccv_charge()), name="cccv")
r_b = MbhConfig().balancer.r_bleed

# The bleed resistor draws about OCV / R_b from a closed Cell.
print(f"bleed current at 4.1 V: {4.1 / r_b * 1e3:.0f} mA")

for spread in (0.001, 0.01):
    socs = (0.30, 0.30 + spread / 2, 0.30 + spread)
    log = run_plan(plan, module, initial_socs=socs)
    cv = np.isin(log["segment_id"], [sid for sid, s in log.segments.items() if s.kind == "CV"])
    v_end = log.v_cells[cv][-1]
    closed = log.switches.sum(axis=1)
    print(f"\nSOC spread {spread:.1%}: charge lasted {log.time[-1] / 3600:.2f} h")
    print(f"  spread at CV end: {(v_end.max() - v_end.min()) * 1e3:.1f} mV")
    print(f"  switch duty per Cell: {np.round(log.switches.mean(axis=0), 3)}")
    print(f"  most switches closed at once: {closed.max()}")
    # Ah the bleed needs to remove vs the time available
    need_h = spread * 219.0 / (4.1 / r_b)
    print(f"  hours of bleeding needed to absorb the spread: {need_h:.1f}")

# With R_b * I_m equal to the OCV the closed branch carries the whole current
# and the Cell stops charging.
cell = cells[0]
ocv = cell.ocv_at(0.6)
print(f"\ndSOC/dt at R_b * I_m = OCV: {soc_derivative_closed(cell, 0.6, ocv / r_b, r_b, 25.0):.3e} 1/s")
