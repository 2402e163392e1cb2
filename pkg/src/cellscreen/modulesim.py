"""Three Cells in series: switch-dependent dynamics, module voltage, temperatures."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .ecm import (
    SECONDS_PER_HOUR,
    CellParams,
    CellState,
    SocSaturationError,
    default_cells,
)

DEFAULT_R_BLEED = 67.5


class ProtocolViolation(RuntimeError):
    """The simulation left the envelope a valid test protocol guarantees."""

    def __init__(self, message: str, cell: Optional[int] = None):
        self.cell = cell
        super().__init__(message)


@dataclass(frozen=True)
class ThermalConfig:
    """Module temperature model and the three surface thermocouples.

    ``mode`` is ``"prescribed"`` (temperature follows ``setpoint`` or the
    piecewise-linear ``trajectory`` of ``(time_s, temp_c)`` points) or
    ``"lumped"`` (first-order heat balance against the chamber setpoint).
    ``cell_offsets`` shift the temperature each Cell's resistance is
    evaluated at; they do not affect the surface readings.
    """

    mode: str = "prescribed"
    setpoint: float = 25.0
    thermal_resistance: float = 0.1
    thermal_capacitance: float = 8000.0
    sensor_noise_sd: float = 0.05
    sensor_offsets: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cell_offsets: tuple[float, float, float] = (0.0, 0.0, 0.0)
    trajectory: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.mode not in ("prescribed", "lumped"):
            raise ValueError(f"unknown thermal mode {self.mode!r}")
        if self.mode == "lumped" and not (self.thermal_resistance > 0 and self.thermal_capacitance > 0):
            raise ValueError("lumped thermal mode needs positive resistance and capacitance")
        if self.sensor_noise_sd < 0:
            raise ValueError("sensor_noise_sd must be non-negative")
        if len(self.sensor_offsets) != 3 or len(self.cell_offsets) != 3:
            raise ValueError("expected three sensor offsets and three Cell offsets")

    def prescribed_temp(self, time_s: float) -> float:
        if not self.trajectory:
            return self.setpoint
        ts = [p[0] for p in self.trajectory]
        ys = [p[1] for p in self.trajectory]
        return float(np.interp(time_s, ts, ys))


@dataclass(frozen=True)
class ModuleConfig:
    cells: tuple[CellParams, CellParams, CellParams] = field(default_factory=default_cells)
    interconnect_r: float = 0.0
    thermal: ThermalConfig = field(default_factory=ThermalConfig)

    def __post_init__(self):
        if len(self.cells) != 3:
            raise ValueError(f"a module holds exactly 3 Cells, got {len(self.cells)}")
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.interconnect_r < 0:
            raise ValueError("interconnect_r must be non-negative")


@dataclass(frozen=True)
class ModuleState:
    """Instantaneous module snapshot.

    Electrical fields are consistent with ``i_module`` and ``switches`` at the
    stored SOCs, i.e. they describe the Cells while that current flows.
    """

    cell_states: tuple[CellState, CellState, CellState]
    v_module: float
    i_module: float
    temp_module: float
    t_sensors: tuple[float, float, float]
    switches: tuple[bool, bool, bool] = (False, False, False)
    time_s: float = 0.0
    i_bleed: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heat_w: float = 0.0

    @property
    def socs(self) -> tuple[float, float, float]:
        return tuple(c.soc for c in self.cell_states)

    @property
    def v_cells(self) -> tuple[float, float, float]:
        return tuple(c.v_terminal for c in self.cell_states)


def _cell_temps(config: ModuleConfig, temp_module: float) -> list[float]:
    return [temp_module + off for off in config.thermal.cell_offsets]


def snapshot(
    config: ModuleConfig,
    socs: Sequence[float],
    i_module: float,
    switches: Sequence[bool] = (False, False, False),
    temp_module: Optional[float] = None,
    *,
    r_bleed: float = DEFAULT_R_BLEED,
    t_sensors: Optional[Sequence[float]] = None,
    time_s: float = 0.0,
) -> ModuleState:
    """Evaluate Cell currents and voltages for a module current and switch triple."""
    if temp_module is None:
        temp_module = config.thermal.setpoint
    temps = _cell_temps(config, temp_module)
    states = []
    bleed = []
    heat = 0.0
    for j, (p, soc, closed, temp) in enumerate(zip(config.cells, socs, switches, temps)):
        ocv = p.ocv_at(soc)
        r0 = p.r0(temp, soc)
        if closed:
            i_cell = (r_bleed * i_module - ocv) / (r0 + r_bleed)
            v = ocv + r0 * i_cell
            i_b = i_module - i_cell
            heat += v * v / r_bleed
        else:
            i_cell = i_module
            v = ocv + r0 * i_module
            i_b = 0.0
        heat += r0 * i_cell * i_cell
        states.append(CellState(soc=soc, i_cell=i_cell, v_terminal=v))
        bleed.append(i_b)
    r_ic = config.interconnect_r
    heat += 2.0 * r_ic * i_module * i_module
    v_module = states[0].v_terminal + states[1].v_terminal + states[2].v_terminal + 2.0 * r_ic * i_module
    if t_sensors is None:
        t_sensors = tuple(temp_module + off for off in config.thermal.sensor_offsets)
    return ModuleState(
        cell_states=tuple(states),
        v_module=v_module,
        i_module=i_module,
        temp_module=temp_module,
        t_sensors=tuple(t_sensors),
        switches=tuple(bool(s) for s in switches),
        time_s=time_s,
        i_bleed=tuple(bleed),
        heat_w=heat,
    )


def initial_state(
    config: ModuleConfig,
    socs: Sequence[float],
    *,
    temp_module: Optional[float] = None,
    r_bleed: float = DEFAULT_R_BLEED,
) -> ModuleState:
    """At-rest state at thermal equilibrium with the chamber."""
    if temp_module is None:
        temp_module = config.thermal.prescribed_temp(0.0)
    return snapshot(config, socs, 0.0, temp_module=temp_module, r_bleed=r_bleed)


def sensor_temps(
    thermal: ThermalConfig,
    temp_module: float,
    rng_seed: int | np.random.Generator | None = None,
) -> tuple[float, float, float]:
    """Three thermocouple readings: module temperature + fixed offset + noise."""
    base = [temp_module + off for off in thermal.sensor_offsets]
    if thermal.sensor_noise_sd == 0:
        return tuple(base)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, thermal.sensor_noise_sd, 3)
    return tuple(float(b + n) for b, n in zip(base, noise))


def thermal_step(thermal: ThermalConfig, temp: float, heat_w: float, dt: float) -> float:
    """Forward-Euler step of C dT/dt = (T_set - T)/R + heat."""
    r, c = thermal.thermal_resistance, thermal.thermal_capacitance
    return temp + dt * ((thermal.setpoint - temp) / (r * c) + heat_w / c)


def delta_t_max(readings: Sequence[float]) -> float:
    """Spread of the thermocouple triple."""
    return max(readings) - min(readings)


def cv_current(
    config: ModuleConfig,
    state: ModuleState,
    v_target: float,
    switches: Sequence[bool],
    *,
    r_bleed: float = DEFAULT_R_BLEED,
) -> float:
    """Module current that holds the module terminal voltage at ``v_target``.

    Every Cell voltage is affine in the module current for a fixed switch
    state, so the ideal voltage source has a closed-form current.
    """
    temps = _cell_temps(config, state.temp_module)
    alpha = 0.0
    beta = 2.0 * config.interconnect_r
    for p, cs, closed, temp in zip(config.cells, state.cell_states, switches, temps):
        ocv = p.ocv_at(cs.soc)
        r0 = p.r0(temp, cs.soc)
        if closed:
            k = r_bleed / (r0 + r_bleed)
            alpha += ocv * k
            beta += r0 * k
        else:
            alpha += ocv
            beta += r0
    return (v_target - alpha) / beta


def step(
    config: ModuleConfig,
    state: ModuleState,
    i_module: float,
    switches: Sequence[bool],
    dt: float,
    rng: Optional[np.random.Generator] = None,
    *,
    r_bleed: float = DEFAULT_R_BLEED,
) -> ModuleState:
    """Advance the module by ``dt`` seconds under ``i_module`` and ``switches``.

    Cells with an open switch carry the module current; closed-switch Cells
    share it with their bleed resistor.  The returned snapshot is evaluated at
    the new SOCs with the same current and switches still applied.  Sensor
    noise draws from ``rng``; without one the readings are noiseless.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    switches = tuple(bool(s) for s in switches)
    if state.i_module != i_module or state.switches != switches:
        state = snapshot(
            config, state.socs, i_module, switches, state.temp_module,
            r_bleed=r_bleed, t_sensors=state.t_sensors, time_s=state.time_s,
        )
    new_socs = []
    for j, (p, cs) in enumerate(zip(config.cells, state.cell_states)):
        soc = cs.soc + cs.i_cell * dt / (SECONDS_PER_HOUR * p.capacity_ah)
        h = p.soc_headroom
        if not (-h <= soc <= 1.0 + h):
            raise ProtocolViolation(f"Cell {j + 1} SOC saturated at {soc:.6f}", cell=j + 1) from SocSaturationError(j + 1, soc)
        new_socs.append(soc)

    th = config.thermal
    t_new = state.time_s + dt
    if th.mode == "lumped":
        temp = thermal_step(th, state.temp_module, state.heat_w, dt)
    else:
        temp = th.prescribed_temp(t_new)
    if rng is None:
        sensors = tuple(temp + off for off in th.sensor_offsets)
    else:
        sensors = sensor_temps(th, temp, rng)
    return snapshot(
        config, new_socs, i_module, switches, temp,
        r_bleed=r_bleed, t_sensors=sensors, time_s=t_new,
    )


def with_cells(config: ModuleConfig, cells: Sequence[CellParams]) -> ModuleConfig:
    return replace(config, cells=tuple(cells))
