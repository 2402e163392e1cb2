"""Offline Cell metrics from cycler logs.

Capacity and energy are integrated over a voltage window common to every
Cell of every module; resistance comes from the ohmic step at each HPPC
pulse onset; a hyperbolic law r(T) = a1/(T - a2) + a3 is fitted per SOC level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize

from .logio import TestLog

V_MIN = 3.3
V_MAX = 4.2
N_PULSES = 8
PRE_PULSE_MAX_A = 0.6
EDGE_MIN_A = 5.0
MAX_LATENCY_SAMPLES = 3


class DiagnosticError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class VoltageWindow:
    v_lower: float
    v_upper: float

    def __post_init__(self):
        if not self.v_lower < self.v_upper:
            raise DiagnosticError(f"empty voltage window [{self.v_lower}, {self.v_upper}]")


@dataclass
class PulseResult:
    r_mohm: float
    r_discharge_mohm: float
    r_charge_mohm: float
    mean_temp_c: float
    edges: list[int]
    delta_v: list[float]
    amps: list[float]


@dataclass
class CellMetrics:
    q_ah: float = math.nan
    e_wh: float = math.nan
    r_mohm: dict[tuple[float, float], float] = field(default_factory=dict)
    mean_pulse_temp: dict[tuple[float, float], float] = field(default_factory=dict)


@dataclass(frozen=True)
class ModuleMetrics:
    q_module_ah: float
    e_module_wh: float
    weakest_index: int
    tie: bool = False


@dataclass(frozen=True)
class RtCoefficients:
    a1: float
    a2: float
    a3: float
    rmse_mohm: float
    n_points: int

    def __call__(self, temp):
        return self.a1 / (np.asarray(temp, dtype=float) - self.a2) + self.a3


@dataclass(frozen=True)
class RtFit:
    levels: dict[float, RtCoefficients]

    def predict(self, temp, soc: float):
        return self.levels[soc](temp)


# --------------------------------------------------------------------------- window


def capacity_traces(log: TestLog, tag: str = "capacity") -> np.ndarray:
    mask = log.mask(tag)
    if not mask.any():
        raise DiagnosticError(f"log has no {tag!r} segment")
    return log.v_cells[mask]


def voltage_window(
    logs: Sequence[TestLog], v_max: float = V_MAX, v_min: float = V_MIN, tag: str = "capacity"
) -> VoltageWindow:
    """Largest interval every Cell of every module traverses during the capacity test.

    Upper bound starts at ``v_max`` and is lowered to each trace's maximum;
    lower bound starts at ``v_min`` and is raised to each trace's minimum.
    """
    if not logs:
        raise DiagnosticError("no logs given")
    upper, lower = v_max, v_min
    for log in logs:
        traces = capacity_traces(log, tag)
        for j in range(traces.shape[1]):
            upper = min(float(traces[:, j].max()), upper)
            lower = max(float(traces[:, j].min()), lower)
    return VoltageWindow(lower, upper)


# --------------------------------------------------------------------------- capacity / energy


def _crossing_time(t: np.ndarray, v: np.ndarray, level: float, start: int) -> tuple[float, int]:
    """First downward crossing of ``level`` at or after ``start``, linearly interpolated."""
    below = np.flatnonzero(v[start:] <= level)
    if below.size == 0:
        return math.nan, -1
    i = start + int(below[0])
    if i == 0 or v[i] == level:
        return float(t[i]), i
    v0, v1 = v[i - 1], v[i]
    w = (v0 - level) / (v0 - v1)
    return float(t[i - 1] + w * (t[i] - t[i - 1])), i


def window_integral(t: np.ndarray, y: np.ndarray, t0: float, tf: float) -> float:
    """Trapezoidal integral of the piecewise-linear ``y(t)`` over [t0, tf]."""
    if tf <= t0:
        raise DiagnosticError(f"empty integration interval [{t0}, {tf}]")
    inner = (t > t0) & (t < tf)
    ts = np.concatenate(([t0], t[inner], [tf]))
    ys = np.concatenate(([np.interp(t0, t, y)], y[inner], [np.interp(tf, t, y)]))
    return float(np.trapezoid(ys, ts))


def _window_span(log: TestLog, cell: int, window: VoltageWindow, tag: str):
    if cell not in (1, 2, 3):
        raise DiagnosticError(f"Cell index must be 1, 2 or 3, got {cell}")
    mask = log.mask(tag)
    if not mask.any():
        raise DiagnosticError(f"log has no {tag!r} segment")
    t = log.time[mask]
    i = log.current[mask]
    v = log.v_cells[mask][:, cell - 1]
    # start where the trace last sits at or above the upper bound before falling through it
    above = np.flatnonzero(v >= window.v_upper)
    if above.size == 0:
        raise DiagnosticError(f"Cell {cell} never reaches the upper bound {window.v_upper:.4f} V")
    t0, i0 = _crossing_time(t, v, window.v_upper, int(above[0]))
    if i0 < 0:
        raise DiagnosticError(f"Cell {cell} never crosses the upper bound {window.v_upper:.4f} V")
    tf, i_f = _crossing_time(t, v, window.v_lower, i0)
    if i_f < 0:
        raise DiagnosticError(f"Cell {cell} never crosses the lower bound {window.v_lower:.4f} V")
    return t, i, v, t0, tf


def discharge_capacity(log: TestLog, cell: int, window: VoltageWindow, tag: str = "capacity") -> float:
    """Ah passed while Cell ``cell`` (1-based) falls from the upper to the lower bound."""
    t, i, _, t0, tf = _window_span(log, cell, window, tag)
    return window_integral(t, np.abs(i), t0, tf) / 3600.0


def discharge_energy(log: TestLog, cell: int, window: VoltageWindow, tag: str = "capacity") -> float:
    """Wh delivered by Cell ``cell`` over the same interval as :func:`discharge_capacity`."""
    t, i, v, t0, tf = _window_span(log, cell, window, tag)
    return window_integral(t, np.abs(v * i), t0, tf) / 3600.0


def module_rollup(metrics: Sequence[CellMetrics]) -> ModuleMetrics:
    q = [m.q_ah for m in metrics]
    e = [m.e_wh for m in metrics]
    q_min = min(q)
    ties = [j for j, x in enumerate(q) if x == q_min]
    return ModuleMetrics(q_min, float(sum(e)), ties[0] + 1, tie=len(ties) > 1)


# --------------------------------------------------------------------------- resistance


def pulse_edges(current: np.ndarray) -> list[int]:
    """Indices where the current magnitude steps up by more than ``EDGE_MIN_A``."""
    mag = np.abs(current)
    jump = np.diff(mag)
    return [int(k) + 1 for k in np.flatnonzero(jump > EDGE_MIN_A)]


def pulse_analysis(
    log: TestLog, cell: int, soc_level: float, n_pulses: int = N_PULSES
) -> PulseResult:
    """Per-pulse voltage steps of Cell ``cell`` in the HPPC block at ``soc_level``.

    Each step is anchored on a current onset in the directly measured module
    current; the matching voltage transition is searched over the next few
    samples to absorb the board-to-cycler latency, and the step is the
    difference between the samples on either side of it.
    """
    from .protocol import hppc_tag

    mask = log.mask(hppc_tag(soc_level))
    if not mask.any():
        raise DiagnosticError(f"log has no HPPC block at SOC {soc_level}")
    i = log.current[mask]
    v = log.v_cells[mask][:, cell - 1]
    temp = log.module_temp[mask]
    edges = pulse_edges(i)
    if len(edges) < n_pulses:
        raise DiagnosticError(f"found {len(edges)} pulses at SOC {soc_level}, expected {n_pulses}")
    if len(edges) > n_pulses:
        raise DiagnosticError(f"found {len(edges)} current steps at SOC {soc_level}, expected {n_pulses}")
    dvs, amps, ratios = [], [], []
    for k in edges:
        if abs(i[k - 1]) > PRE_PULSE_MAX_A:
            raise DiagnosticError(
                f"pulse at sample {k} starts from {i[k - 1]:.3f} A, not from rest"
            )
        hi = min(k + MAX_LATENCY_SAMPLES, len(v) - 1)
        diffs = np.diff(v[k - 1:hi + 1])
        n = int(np.argmax(np.abs(diffs)))
        dv = float(diffs[n])
        dvs.append(dv)
        amps.append(float(i[k]))
        ratios.append(abs(dv / i[k]))
    ratios = np.array(ratios)
    amps_arr = np.array(amps)
    active = np.abs(i) > PRE_PULSE_MAX_A
    return PulseResult(
        r_mohm=1000.0 * float(ratios.mean()),
        r_discharge_mohm=1000.0 * float(ratios[amps_arr < 0].mean()),
        r_charge_mohm=1000.0 * float(ratios[amps_arr > 0].mean()),
        mean_temp_c=float(temp[active].mean()),
        edges=edges,
        delta_v=dvs,
        amps=amps,
    )


def pulse_resistance(log: TestLog, cell: int, soc_level: float, temp_setpoint: Optional[float] = None) -> float:
    """Mean |dv / I| over the HPPC pulses at ``soc_level``, in milliohms."""
    if temp_setpoint is not None:
        logged = float(log.meta.get("setpoint_c", "nan"))
        if not math.isclose(logged, temp_setpoint):
            raise DiagnosticError(f"log was recorded at {logged} degC, not {temp_setpoint} degC")
    return pulse_analysis(log, cell, soc_level).r_mohm


# --------------------------------------------------------------------------- r(T) fit


def _linear_part(temp: np.ndarray, r: np.ndarray, a2: float):
    x = 1.0 / (temp - a2)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, r, rcond=None)
    resid = design @ coef - r
    return coef, float(resid @ resid)


def _fit_level(temp: np.ndarray, r_mohm: np.ndarray, max_restarts: int = 4) -> RtCoefficients:
    """Least squares for one SOC level with a1, a3 profiled out (exact for fixed a2)."""
    if len(np.unique(temp)) < 3:
        raise FitError("need at least 3 distinct temperatures")
    t_min = float(temp.min())
    gap0 = 25.0
    # profile objective over the pole distance d = min(T) - a2 > 0
    sse = lambda d: _linear_part(temp, r_mohm, t_min - d)[1]
    best = None
    for attempt in range(max_restarts):
        hi = gap0 * 10.0 ** (attempt + 1)
        grid = np.geomspace(1e-3, hi, 400)
        values = np.array([sse(d) for d in grid])
        if not np.all(np.isfinite(values)):
            continue
        n = int(np.argmin(values))
        lo_d = grid[max(n - 1, 0)]
        hi_d = grid[min(n + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(
            lambda s: sse(math.exp(s)),
            bounds=(math.log(lo_d), math.log(hi_d)),
            method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        d = math.exp(res.x)
        interior = n < len(grid) - 1
        if res.success and math.isfinite(res.fun):
            best = (d, res.fun)
            if interior:
                break
    if best is None:
        raise FitError("r(T) fit did not converge; no finite residual found")
    d, fun = best
    a2 = t_min - d
    (a1, a3), sse_val = _linear_part(temp, r_mohm, a2)
    rmse = math.sqrt(sse_val / len(temp))
    return RtCoefficients(a1=a1 / 1000.0, a2=a2, a3=a3 / 1000.0, rmse_mohm=rmse, n_points=len(temp))


def fit_rt(points: Iterable[tuple[float, float, float]]) -> RtFit:
    """Fit r = a1/(T - a2) + a3 per SOC level.

    ``points`` are ``(temp_c, soc, r_mohm)`` with measured mean module
    temperatures.  Coefficients come back in ohm*degC, degC and ohm.
    """
    by_level: dict[float, list[tuple[float, float]]] = {}
    for temp, soc, r in points:
        by_level.setdefault(round(float(soc), 6), []).append((float(temp), float(r)))
    if not by_level:
        raise FitError("no points to fit")
    levels = {}
    for soc, rows in sorted(by_level.items()):
        arr = np.array(rows)
        try:
            levels[soc] = _fit_level(arr[:, 0], arr[:, 1])
        except FitError as exc:
            raise FitError(f"SOC {soc}: {exc}") from None
    return RtFit(levels)


# --------------------------------------------------------------------------- pack statistics


@dataclass(frozen=True)
class Stats:
    mean: float
    sd: float
    min: float
    max: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Stats:
        x = np.asarray(values, dtype=float)
        sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
        return cls(float(x.mean()), sd, float(x.min()), float(x.max()), len(x))


@dataclass
class PackReport:
    capacity: dict[str, Stats]
    energy: dict[str, Stats]
    weakest_counts: tuple[int, int, int]
    weakest_cumulative: tuple[int, int, int]
    pearson_qe: float
    resistance: dict[float, dict[str, Stats]]
    n_modules: int
    ties: int = 0

    def render(self) -> str:
        lines = ["C/3 discharge capacity", f"{'':14s}{'mean [Ah]':>11s}{'std [Ah]':>10s}{'min [Ah]':>10s}{'max [Ah]':>10s}"]
        for name, s in self.capacity.items():
            lines.append(f"{name:14s}{s.mean:11.2f}{s.sd:10.2f}{s.min:10.2f}{s.max:10.2f}")
        lines += ["", "C/3 discharge energy", f"{'':14s}{'mean [Wh]':>11s}{'std [Wh]':>10s}{'min [Wh]':>10s}{'max [Wh]':>10s}"]
        for name, s in self.energy.items():
            lines.append(f"{name:14s}{s.mean:11.2f}{s.sd:10.2f}{s.min:10.2f}{s.max:10.2f}")
        if self.resistance:
            lines += ["", "Internal resistance", f"{'':14s}{'mean [mOhm]':>12s}{'std':>9s}{'min':>9s}{'max':>9s}"]
            for temp, rows in sorted(self.resistance.items()):
                lines.append(f"@{temp:g} degC")
                for name, s in rows.items():
                    lines.append(f"{name:14s}{s.mean:12.4f}{s.sd:9.4f}{s.min:9.4f}{s.max:9.4f}")
        c = self.weakest_counts
        lines += [
            "",
            f"weakest Cell counts: Cell 1 = {c[0]}, Cell 2 = {c[1]}, Cell 3 = {c[2]} "
            f"(cumulative {self.weakest_cumulative[-1]} of {self.n_modules})",
            f"Pearson correlation of module capacity and energy: {self.pearson_qe:.3f}",
        ]
        return "\n".join(lines)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0:
        raise DiagnosticError("correlation undefined for constant data")
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def pack_stats(
    all_metrics: Sequence[Sequence[CellMetrics]],
    resistance_by_temp: Optional[Mapping[float, Sequence[Sequence[float]]]] = None,
) -> PackReport:
    """Per-position statistics across modules.

    ``all_metrics`` has one triple of :class:`CellMetrics` per module.  Cell
    resistances are pooled over SOC levels for each setpoint temperature found
    in the metrics, unless ``resistance_by_temp`` supplies them directly as
    ``{temp: [values for position 1, 2, 3]}``.
    """
    if not all_metrics:
        raise DiagnosticError("no module metrics")
    rollups = [module_rollup(m) for m in all_metrics]
    capacity, energy = {}, {}
    for j in range(3):
        capacity[f"Cell {j + 1}"] = Stats.of([m[j].q_ah for m in all_metrics])
        energy[f"Cell {j + 1}"] = Stats.of([m[j].e_wh for m in all_metrics])
    capacity["module-level"] = Stats.of([r.q_module_ah for r in rollups])
    energy["module-level"] = Stats.of([r.e_module_wh for r in rollups])
    counts = [0, 0, 0]
    for r in rollups:
        counts[r.weakest_index - 1] += 1
    cumulative = tuple(int(x) for x in np.cumsum(counts))
    try:
        rho = pearson([r.q_module_ah for r in rollups], [r.e_module_wh for r in rollups])
    except DiagnosticError:
        rho = math.nan  # fewer than two distinct modules

    if resistance_by_temp is None:
        pooled: dict[float, list[list[float]]] = {}
        for m in all_metrics:
            for j, cell in enumerate(m):
                for (soc, temp), r in cell.r_mohm.items():
                    pooled.setdefault(temp, [[], [], []])[j].append(r)
        resistance_by_temp = pooled
    resistance = {
        float(temp): {f"Cell {j + 1}": Stats.of(vals[j]) for j in range(3) if len(vals[j])}
        for temp, vals in resistance_by_temp.items()
    }
    return PackReport(
        capacity=capacity,
        energy=energy,
        weakest_counts=tuple(counts),
        weakest_cumulative=cumulative,
        pearson_qe=rho,
        resistance=resistance,
        n_modules=len(all_metrics),
        ties=sum(r.tie for r in rollups),
    )


def delta_t_max(readings: np.ndarray) -> np.ndarray:
    """Row-wise spread of an (N, 3) thermocouple array."""
    readings = np.asarray(readings)
    return readings.max(axis=1) - readings.min(axis=1)
