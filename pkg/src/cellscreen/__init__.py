"""Simulation and diagnostics for screening 4P3S battery modules.

Modules: ``ecm`` (lumped Cell model), ``modulesim`` (three Cells in series
with bleed branches), ``mbh`` (measurement and balancing board), ``can``
(frame codec), ``protocol`` (cycler test plans), ``diagnostics`` (capacity,
energy, resistance, pack statistics), ``logio`` (log files), ``campaign``
and ``cli``.
"""

from .diagnostics import VoltageWindow, fit_rt, pack_stats, voltage_window
from .ecm import CellParams, OcvCurve, ResistanceLaw
from .logio import TestLog, read_log, write_log
from .mbh import MbhConfig
from .modulesim import ModuleConfig, ThermalConfig
from .protocol import TestPlan, preset, run_plan

__version__ = "0.1.0"

__all__ = [
    "CellParams",
    "MbhConfig",
    "ModuleConfig",
    "OcvCurve",
    "ResistanceLaw",
    "TestLog",
    "TestPlan",
    "ThermalConfig",
    "VoltageWindow",
    "fit_rt",
    "pack_stats",
    "preset",
    "read_log",
    "run_plan",
    "voltage_window",
    "write_log",
]
