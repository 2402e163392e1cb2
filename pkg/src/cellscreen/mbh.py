"""Monitoring & balancing hardware emulation.

Chain per channel: node potential -> divider -> first-order RC low-pass ->
ADC quantization -> x4 rescale -> linear correction.  Cell voltages are the
successive differences of the corrected channels and reach the cycler one
sample period late.  The balancer is a threshold bang-bang law on those
delayed voltages.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class AdcSaturationError(RuntimeError):
    def __init__(self, channel: int, value: float, full_scale: float):
        self.channel = channel
        super().__init__(
            f"ADC channel {channel} input {value:.4f} V outside [0, {full_scale}] V"
        )


@dataclass(frozen=True)
class DividerSpec:
    r_high: float = 30e3
    r_low: float = 10e3

    @property
    def scale(self) -> float:
        return self.r_low / (self.r_high + self.r_low)


@dataclass(frozen=True)
class FilterSpec:
    """RC anti-aliasing network; only the r1*c2 stage shapes the emulated response."""

    r1: float = 3e3
    r2: float = 2e3
    c1: float = 47e-9
    c2: float = 470e-9
    c3: float = 47e-9

    @property
    def tau(self) -> float:
        return self.r1 * self.c2

    @property
    def cutoff_hz(self) -> float:
        return 1.0 / (2.0 * math.pi * self.tau)


@dataclass(frozen=True)
class AdcSpec:
    bits: int = 16
    usable_bits: int = 15
    full_scale: float = 4.096
    sample_period_s: float = 0.1

    @property
    def native_step(self) -> float:
        return self.full_scale / 2**self.usable_bits


@dataclass(frozen=True)
class CorrectionModel:
    gains: tuple[float, float, float] = (0.9894, 0.9910, 0.9907)
    biases: tuple[float, float, float] = (-0.002, -0.002, -0.002)

    def __post_init__(self):
        for m in self.gains:
            if not 0.9 < m < 1.1:
                raise ValueError(f"correction gain {m} outside (0.9, 1.1)")
        for k in self.biases:
            if not abs(k) < 0.1:
                raise ValueError(f"correction bias {k} outside (-0.1, 0.1) V")

    @classmethod
    def identity(cls) -> CorrectionModel:
        return cls((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))

    def apply(self, raw: Sequence[float]) -> tuple[float, float, float]:
        return tuple(m * x + k for m, x, k in zip(self.gains, raw, self.biases))


@dataclass(frozen=True)
class ChannelErrors:
    """Uncalibrated analog error: the ADC sees ``gain * node + offset`` (pre-divider volts).

    :meth:`matching` builds the errors that a given correction model exactly
    undoes, i.e. a board whose calibration is perfect apart from quantization.
    """

    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    offsets: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def matching(cls, corr: CorrectionModel) -> ChannelErrors:
        return cls(
            tuple(1.0 / m for m in corr.gains),
            tuple(-k / m for m, k in zip(corr.gains, corr.biases)),
        )


@dataclass(frozen=True)
class BalancerConfig:
    v_th: float = 2.5e-3
    r_bleed: float = 67.5
    enabled: bool = True
    decimation: int = 1

    def __post_init__(self):
        if not self.v_th > 0:
            raise ValueError("v_th must be positive")
        if not self.r_bleed > 0:
            raise ValueError("r_bleed must be positive")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")


@dataclass(frozen=True)
class MbhConfig:
    """Everything the board needs.  ``hardware=None`` means errors matching ``correction``."""

    divider: DividerSpec = field(default_factory=DividerSpec)
    filter: FilterSpec = field(default_factory=FilterSpec)
    adc: AdcSpec = field(default_factory=AdcSpec)
    correction: CorrectionModel = field(default_factory=CorrectionModel)
    hardware: Optional[ChannelErrors] = None
    balancer: BalancerConfig = field(default_factory=BalancerConfig)
    latency_samples: int = 1
    adc_noise_sd: float = 0.0

    @property
    def channel_errors(self) -> ChannelErrors:
        return self.hardware if self.hardware is not None else ChannelErrors.matching(self.correction)

    @classmethod
    def ideal(cls, **kw) -> MbhConfig:
        """Board without analog errors and an identity correction."""
        return cls(correction=CorrectionModel.identity(), hardware=ChannelErrors(), **kw)


@dataclass(frozen=True)
class MeasuredFrame:
    timestamp: float
    v_cells: tuple[float, float, float]
    valid: bool = True
    raw_channels: Optional[tuple[float, float, float]] = None


def node_potentials(v_cells: Sequence[float]) -> tuple[float, float, float]:
    """C1+, C2+, C3+ relative to G-."""
    v1, v2, v3 = v_cells
    return (v1, v1 + v2, v1 + v2 + v3)


def filter_step(
    filt: FilterSpec, state: Sequence[float], inputs: Sequence[float], dt: float
) -> tuple[float, float, float]:
    """Advance the three first-order filters over ``dt`` with held inputs.

    Zero-order-hold discretization; identical to forward Euler as dt/tau -> 0
    and stable for any dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = -math.expm1(-dt / filt.tau)
    return tuple(y + a * (x - y) for y, x in zip(state, inputs))


def analog_inputs(divider: DividerSpec, errors: ChannelErrors, nodes: Sequence[float]) -> tuple[float, float, float]:
    s = divider.scale
    return tuple(s * (g * v + o) for v, g, o in zip(nodes, errors.gains, errors.offsets))


def adc_convert(
    divider: DividerSpec,
    adc: AdcSpec,
    filtered: Sequence[float],
    noise: Optional[Sequence[float]] = None,
) -> tuple[float, float, float]:
    """Quantize filtered ADC-domain voltages and rescale to node volts (uncorrected)."""
    step = adc.native_step
    out = []
    for ch, y in enumerate(filtered):
        if noise is not None:
            y = y + noise[ch]
        if y < 0.0 or y > adc.full_scale:
            raise AdcSaturationError(ch + 1, y, adc.full_scale)
        code = round(y / step)
        out.append(code * step / divider.scale)
    return tuple(out)


def measure(
    divider: DividerSpec,
    filt: FilterSpec,
    adc: AdcSpec,
    corr: CorrectionModel,
    node_potentials: Sequence[float],
    filter_state: Sequence[float],
    dt: float,
    errors: Optional[ChannelErrors] = None,
) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """One sample of the chain: returns corrected channel potentials and the filter state."""
    if errors is None:
        errors = ChannelErrors.matching(corr)
    x = analog_inputs(divider, errors, node_potentials)
    y = filter_step(filt, filter_state, x, dt)
    raw = adc_convert(divider, adc, y)
    return corr.apply(raw), y


def reconstruct_cells(channels: Sequence[float]) -> tuple[float, float, float]:
    c1, c2, c3 = channels
    return (c1, c2 - c1, c3 - c2)


class DelayLine:
    """FIFO that releases each frame ``depth`` pushes later."""

    def __init__(self, depth: int = 1):
        if depth < 0:
            raise ValueError("depth must be non-negative")
        self.depth = depth
        self._queue: deque[MeasuredFrame] = deque()

    def push(self, frame: MeasuredFrame) -> Optional[MeasuredFrame]:
        self._queue.append(frame)
        if len(self._queue) > self.depth:
            return self._queue.popleft()
        return None


def delay_line(frame: MeasuredFrame, queue: DelayLine) -> Optional[MeasuredFrame]:
    return queue.push(frame)


def balance_decide(cfg: BalancerConfig, v: Sequence[float]) -> tuple[bool, bool, bool]:
    """Close S_j iff v_j >= min(v) + v_th; all open when balancing is disabled."""
    if not cfg.enabled:
        return (False, False, False)
    limit = min(v) + cfg.v_th
    return tuple(x >= limit for x in v)


def delta_v_max(v: Sequence[float]) -> float:
    return max(v) - min(v)


class MeasurementChain:
    """Stateful board model: filter memory, ADC, correction and CAN delay."""

    def __init__(self, config: MbhConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self._errors = config.channel_errors
        self._filter: Optional[tuple[float, float, float]] = None
        self._delay = DelayLine(config.latency_samples)
        self._rng = rng
        self._tick = 0

    def reset_filter(self, v_cells: Sequence[float]) -> None:
        """Start the filters settled at the given Cell voltages."""
        self._filter = analog_inputs(self.config.divider, self._errors, node_potentials(v_cells))

    def advance(self, v_cells: Sequence[float], dt: float) -> None:
        x = analog_inputs(self.config.divider, self._errors, node_potentials(v_cells))
        if self._filter is None:
            self._filter = x
        else:
            self._filter = filter_step(self.config.filter, self._filter, x, dt)

    def sample(self, timestamp: float) -> MeasuredFrame:
        """Convert the current filter output into a frame (not delayed)."""
        cfg = self.config
        noise = None
        if cfg.adc_noise_sd > 0 and self._rng is not None:
            noise = self._rng.normal(0.0, cfg.adc_noise_sd, 3)
        raw = adc_convert(cfg.divider, cfg.adc, self._filter, noise)
        channels = cfg.correction.apply(raw)
        return MeasuredFrame(timestamp, reconstruct_cells(channels), True, raw)

    def deliver(self, frame: MeasuredFrame) -> Optional[MeasuredFrame]:
        return self._delay.push(frame)
