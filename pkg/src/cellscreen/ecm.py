"""Zero-order equivalent circuit model of a lumped 4P Cell.

Sign convention: current is positive while charging.  Capacities are carried
in ampere-hours, so every Coulomb-counting rate divides by 3600 to be
per-second.  Resistances are in ohms internally.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

SECONDS_PER_HOUR = 3600.0


class DomainError(ValueError):
    """A model input lies outside the domain where the model is defined."""


class SocSaturationError(RuntimeError):
    """A Cell's state of charge left its admissible range during simulation."""

    def __init__(self, cell: int, soc: float):
        self.cell = cell
        self.soc = soc
        super().__init__(f"Cell {cell} SOC saturated at {soc:.6f}")


# 21-point NMC-like table, 5 % SOC spacing, 3.30 V .. 4.20 V.
DEFAULT_OCV_TABLE: tuple[tuple[float, float], ...] = tuple(
    zip(
        [i / 20 for i in range(21)],
        [
            3.300, 3.560, 3.590, 3.606, 3.618, 3.629, 3.639, 3.649, 3.659, 3.669, 3.680,
            3.693, 3.708, 3.726, 3.748, 3.774, 3.805, 3.843, 3.897, 4.010, 4.200,
        ],
    )
)

# Fitted resistance-temperature coefficients (ohm*degC, degC, ohm) by SOC.
RT_COEFFICIENTS: tuple[tuple[float, float, float, float], ...] = (
    (0.40, 0.0024, -0.0909, 0.0001),
    (0.65, 0.0024, -0.0866, 0.0001),
    (0.90, 0.0023, -0.0857, 0.0001),
)

SUPPORTED_TEMP_RANGE = (10.0, 45.0)


@dataclass(frozen=True)
class OcvCurve:
    """Piecewise-linear, strictly increasing open-circuit voltage curve."""

    points: tuple[tuple[float, float], ...] = DEFAULT_OCV_TABLE
    _soc: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _ocv: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(s), float(v)) for s, v in self.points)
        if len(pts) < 2:
            raise ValueError("OCV curve needs at least 2 points")
        soc = tuple(p[0] for p in pts)
        ocv = tuple(p[1] for p in pts)
        if any(b <= a for a, b in zip(soc, soc[1:])):
            raise ValueError("OCV curve SOC values must be strictly increasing")
        if any(b <= a for a, b in zip(ocv, ocv[1:])):
            raise ValueError("OCV curve voltages must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_soc", soc)
        object.__setattr__(self, "_ocv", ocv)

    def __call__(self, soc: float, extrapolate: bool = False) -> float:
        xs, ys = self._soc, self._ocv
        if not extrapolate and not (xs[0] <= soc <= xs[-1]):
            raise DomainError(f"SOC {soc!r} outside OCV curve domain [{xs[0]}, {xs[-1]}]")
        k = bisect_right(xs, soc) - 1
        if k < 0:
            k = 0
        elif k >= len(xs) - 1:
            if soc == xs[-1]:
                return ys[-1]
            k = len(xs) - 2
        x0, x1 = xs[k], xs[k + 1]
        return ys[k] + (ys[k + 1] - ys[k]) * (soc - x0) / (x1 - x0)

    def inverse(self, ocv: float) -> float:
        """SOC at which the curve reaches ``ocv`` (clamped to the table)."""
        xs, ys = self._soc, self._ocv
        if ocv <= ys[0]:
            return xs[0]
        if ocv >= ys[-1]:
            return xs[-1]
        k = bisect_right(ys, ocv) - 1
        return xs[k] + (xs[k + 1] - xs[k]) * (ocv - ys[k]) / (ys[k + 1] - ys[k])


def ocv_lookup(curve: OcvCurve, soc: float) -> float:
    """Open-circuit voltage at ``soc``; raises DomainError outside [0, 1]."""
    if not (0.0 <= soc <= 1.0):
        raise DomainError(f"SOC {soc!r} outside [0, 1]")
    return curve(soc)


@dataclass(frozen=True)
class ResistanceLaw:
    """Ohmic resistance r = a1 / (T - a2) + a3, coefficients interpolated in SOC.

    ``breakpoints`` holds ``(soc, a1, a2, a3)`` rows with increasing SOC.  Outside
    the breakpoint range the nearest row is used.
    """

    breakpoints: tuple[tuple[float, float, float, float], ...] = RT_COEFFICIENTS

    def __post_init__(self):
        rows = tuple(tuple(float(x) for x in row) for row in self.breakpoints)
        if not rows:
            raise ValueError("resistance law needs at least one breakpoint")
        if any(b[0] <= a[0] for a, b in zip(rows, rows[1:])):
            raise ValueError("resistance law SOC breakpoints must be increasing")
        object.__setattr__(self, "breakpoints", rows)

    @classmethod
    def constant(cls, r_ohm: float) -> ResistanceLaw:
        return cls(((0.0, 0.0, -273.15, float(r_ohm)),))

    def coefficients(self, soc: float) -> tuple[float, float, float]:
        rows = self.breakpoints
        if soc <= rows[0][0]:
            return rows[0][1:]
        if soc >= rows[-1][0]:
            return rows[-1][1:]
        for lo, hi in zip(rows, rows[1:]):
            if soc <= hi[0]:
                w = (soc - lo[0]) / (hi[0] - lo[0])
                return tuple(a + w * (b - a) for a, b in zip(lo[1:], hi[1:]))
        raise AssertionError("unreachable")

    def __call__(self, temp: float, soc: float) -> float:
        a1, a2, a3 = self.coefficients(soc)
        if temp - a2 <= 0.0:
            raise DomainError(f"temperature {temp!r} degC at or below the law pole a2={a2}")
        r = a1 / (temp - a2) + a3
        if r <= 0.0:
            raise DomainError(f"non-positive resistance {r!r} at T={temp}, SOC={soc}")
        return r

    def scaled(self, factor: float) -> ResistanceLaw:
        """Same temperature shape, resistance multiplied by ``factor``."""
        return ResistanceLaw(
            tuple((s, a1 * factor, a2, a3 * factor) for s, a1, a2, a3 in self.breakpoints)
        )

    def scaled_to(self, r_ohm: float, temp: float = 25.0, soc: float = 0.65) -> ResistanceLaw:
        return self.scaled(r_ohm / self(temp, soc))


@dataclass(frozen=True)
class CellParams:
    """Parameters of one lumped Cell.

    ``soc_headroom`` is the SOC excursion beyond [0, 1] tolerated during
    simulation before a saturation error is raised; the OCV curve is linearly
    extrapolated inside that band.
    """

    capacity_ah: float = 244.8
    r0_law: ResistanceLaw = field(default_factory=ResistanceLaw)
    ocv: OcvCurve = field(default_factory=OcvCurve)
    soc_headroom: float = 0.02

    def __post_init__(self):
        if not self.capacity_ah > 0:
            raise ValueError(f"capacity_ah must be positive, got {self.capacity_ah}")
        if self.soc_headroom < 0:
            raise ValueError("soc_headroom must be non-negative")

    def r0(self, temp: float, soc: float) -> float:
        return self.r0_law(temp, min(max(soc, 0.0), 1.0))

    def ocv_at(self, soc: float) -> float:
        """OCV allowing the headroom band; strict lookups use :func:`ocv_lookup`."""
        h = self.soc_headroom
        if not (-h <= soc <= 1.0 + h):
            raise DomainError(f"SOC {soc!r} outside [{-h}, {1 + h}]")
        return self.ocv(soc, extrapolate=True)


@dataclass(frozen=True)
class CellState:
    soc: float
    i_cell: float = 0.0
    v_terminal: float = float("nan")


def terminal_voltage(params: CellParams, soc: float, i: float, temp: float) -> float:
    """v = OCV(soc) + R0(T, soc) * i."""
    return params.ocv_at(soc) + params.r0(temp, soc) * i


def soc_step_open(params: CellParams, soc: float, i_module: float, dt: float) -> float:
    """Explicit-Euler Coulomb count with the whole module current through the Cell."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = soc + i_module * dt / (SECONDS_PER_HOUR * params.capacity_ah)
    h = params.soc_headroom
    if not (-h <= new <= 1.0 + h):
        raise SocSaturationError(0, new)
    return new


def branch_currents_closed(
    params: CellParams, soc: float, i_module: float, r_bleed: float, temp: float
) -> tuple[float, float, float]:
    """Cell current, bleed current and Cell voltage with the balancing switch closed."""
    if r_bleed <= 0:
        raise ValueError("r_bleed must be positive")
    ocv = params.ocv_at(soc)
    r0 = params.r0(temp, soc)
    i_cell = (r_bleed * i_module - ocv) / (r0 + r_bleed)
    i_bleed = i_module - i_cell
    v_cell = ocv + r0 * i_cell
    return i_cell, i_bleed, v_cell


def soc_derivative_closed(
    params: CellParams, soc: float, i_module: float, r_bleed: float, temp: float
) -> float:
    """dSOC/dt [1/s] of a Cell whose bleed resistor is switched in."""
    if r_bleed <= 0:
        raise ValueError("r_bleed must be positive")
    ocv = params.ocv_at(soc)
    r0 = params.r0(temp, soc)
    return (r_bleed * i_module - ocv) / (SECONDS_PER_HOUR * params.capacity_ah * (r0 + r_bleed))


def cell_linear_response(
    params: CellParams, soc: float, closed: bool, r_bleed: float, temp: float
) -> tuple[float, float]:
    """Terminal voltage as ``alpha + beta * i_module`` for the given switch state."""
    ocv = params.ocv_at(soc)
    r0 = params.r0(temp, soc)
    if not closed:
        return ocv, r0
    k = r_bleed / (r0 + r_bleed)
    return ocv * k, r0 * k


def default_cells(capacities: Sequence[float] = (244.8, 244.8, 244.8)) -> tuple[CellParams, ...]:
    return tuple(CellParams(capacity_ah=q) for q in capacities)
