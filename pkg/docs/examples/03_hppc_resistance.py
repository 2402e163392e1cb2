"""Recover pulse resistance from a simulated HPPC block.

Run:  python3 docs/examples/03_hppc_resistance.py   (about 15 s)
"""

from cellscreen.ecm import CellParams, ResistanceLaw
from cellscreen.mbh import MbhConfig
from cellscreen.modulesim import ModuleConfig, ThermalConfig
from cellscreen.diagnostics import pulse_analysis
from cellscreen.protocol import hppc_plan, run_plan

r_true = (0.2185, 0.1996, 0.2181)  # mOhm
cells = tuple(
    CellParams(capacity_ah=q, r0_law=ResistanceLaw.constant(r / 1000))
    for q, r in zip((218.80, 218.96, 218.95), r_true)
)
module = ModuleConfig(cells=cells, thermal=ThermalConfig(sensor_noise_sd=0.05))
log = run_plan(hppc_plan(25.0), module, seed=1, initial_socs=(0.5, 0.5, 0.5))

cfg = MbhConfig()
lsb = cfg.adc.native_step / cfg.divider.scale
print(f"pulse order: {log.meta['pulse_order']}")
print(f"one corrected LSB on a 12.24 A pulse is {lsb / 12.24 * 1e3:.3f} mOhm of resistance\n")

print("SOC    cell  r [mOhm]  discharge  charge   injected")
for soc in (0.9, 0.65, 0.4):
    for j in range(3):
        res = pulse_analysis(log, j + 1, soc)
        print(f"{soc:4.2f}   {j + 1}     {res.r_mohm:.4f}    {res.r_discharge_mohm:.4f}   "
              f"{res.r_charge_mohm:.4f}   {r_true[j]:.4f}")

# The voltage step is read one sample after the current edge because the
# board's frames reach the cycler one period late.
res = pulse_analysis(log, 1, 0.9)
print(f"\nfirst pulse: I = {res.amps[0]:.2f} A, dV = {res.delta_v[0] * 1e3:.2f} mV")
