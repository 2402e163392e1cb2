"""Scripted cycler protocol: CC / CV / rest / pulse segments with exit conditions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .logio import SCHEMA_VERSION, SegmentInfo, TestLog, encode_segments
from .mbh import MbhConfig, MeasurementChain, balance_decide
from .modulesim import (
    ModuleConfig,
    ProtocolViolation,
    cv_current,
    initial_state,
    snapshot,
    step,
)

RATED_AH = 244.8
C_RATE_1 = 244.8
C_OVER_3 = 81.6
V_CELL_MIN = 3.3
V_MODULE_MAX = 12.6
CV_TAPER_A = 0.5
REST_S = 3600.0

EXIT_KINDS = ("min_cell_voltage", "module_voltage", "current_below", "elapsed", "soc")


@dataclass(frozen=True)
class ExitCondition:
    """Segment termination test.

    Voltage and SOC thresholds trigger in the direction the segment drives
    them: falling for discharges, rising for charges.
    """

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in EXIT_KINDS:
            raise ValueError(f"unknown exit condition {self.kind!r}")
        t = self.threshold
        if self.kind == "min_cell_voltage" and not 3.0 <= t <= 4.3:
            raise ValueError(f"Cell voltage threshold {t} V outside [3.0, 4.3]")
        if self.kind == "module_voltage" and not 9.0 <= t <= 13.0:
            raise ValueError(f"module voltage threshold {t} V outside [9.0, 13.0]")
        if self.kind == "current_below" and not t > 0:
            raise ValueError("current threshold must be positive")
        if self.kind == "elapsed" and not t > 0:
            raise ValueError("elapsed threshold must be positive")
        if self.kind == "soc" and not 0.0 <= t <= 1.0:
            raise ValueError("SOC threshold outside [0, 1]")


@dataclass(frozen=True)
class Segment:
    kind: str
    current_a: float = 0.0
    voltage_v: float = 0.0
    duration_s: float = 0.0
    exits: tuple[ExitCondition, ...] = ()
    balancing: bool = False
    tag: str = ""
    timeout_s: float = 48 * 3600.0

    def __post_init__(self):
        if self.kind not in ("CC", "CV", "Rest", "Pulse"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind in ("Rest", "Pulse") and not self.duration_s > 0:
            raise ValueError(f"{self.kind} segment needs a positive duration")
        if self.kind == "CV" and not 9.0 <= self.voltage_v <= 13.0:
            raise ValueError(f"CV hold {self.voltage_v} V outside [9.0, 13.0]")
        if any(c in self.tag for c in ":;\n"):
            raise ValueError("segment tags cannot contain ':', ';' or newlines")
        exits = tuple(self.exits)
        if self.kind in ("Rest", "Pulse") and not any(e.kind == "elapsed" for e in exits):
            exits = exits + (ExitCondition("elapsed", self.duration_s),)
        if not exits:
            raise ValueError(f"{self.kind} segment has no exit condition")
        object.__setattr__(self, "exits", exits)


@dataclass(frozen=True)
class HppcBlock:
    soc_levels: tuple[float, ...] = (0.90, 0.65, 0.40)
    pulse_amps: tuple[float, ...] = (200.0, 122.4, 24.48, 12.24)
    pulse_s: float = 15.0
    rest_s: float = 60.0
    pre_rest_s: float = REST_S
    rated_ah: float = RATED_AH
    discharge_a: float = C_OVER_3

    @property
    def n_pulses(self) -> int:
        return 2 * len(self.pulse_amps)


@dataclass(frozen=True)
class TestPlan:
    __test__ = False

    segments: tuple[Segment, ...]
    setpoint_temp: float = 25.0
    safety_cutoff_temp: float = 50.0
    name: str = "custom"
    pulse_order: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a plan needs at least one segment")
        if not 10.0 <= self.setpoint_temp <= 45.0:
            raise ValueError(f"setpoint {self.setpoint_temp} degC outside the supported [10, 45]")


def reach_soc(target: float, rated_ah: float, current_a: float, start: float = 1.0) -> float:
    """Dwell time [s] to move the rated-capacity Coulomb count from ``start`` to ``target``."""
    if target > start:
        raise ValueError(f"target SOC {target} above the current estimate {start}")
    if current_a == 0:
        raise ValueError("current must be non-zero")
    return (start - target) * rated_ah * 3600.0 / abs(current_a)


def pulse_sequence(block: HppcBlock) -> list[tuple[float, float, float]]:
    """(amps, pulse seconds, rest seconds): descending magnitude, discharge first."""
    seq = []
    for amp in sorted(block.pulse_amps, key=abs, reverse=True):
        seq.append((-abs(amp), block.pulse_s, block.rest_s))
        seq.append((abs(amp), block.pulse_s, block.rest_s))
    return seq


def hppc_tag(level: float) -> str:
    return f"hppc@{level:.2f}"


def cccv_charge(tag: str = "charge") -> list[Segment]:
    return [
        Segment("CC", current_a=C_RATE_1, exits=(ExitCondition("module_voltage", V_MODULE_MAX),),
                balancing=True, tag=tag),
        Segment("CV", voltage_v=V_MODULE_MAX, exits=(ExitCondition("current_below", CV_TAPER_A),),
                balancing=True, tag=tag),
    ]


def rest(tag: str = "rest", seconds: float = REST_S) -> Segment:
    return Segment("Rest", duration_s=seconds, tag=tag)


def discharge_to_cutoff(tag: str) -> Segment:
    return Segment("CC", current_a=-C_OVER_3, exits=(ExitCondition("min_cell_voltage", V_CELL_MIN),), tag=tag)


def hppc_segments(block: HppcBlock) -> list[Segment]:
    segs = []
    estimate = 1.0
    for level in block.soc_levels:
        dwell = reach_soc(level, block.rated_ah, block.discharge_a, start=estimate)
        estimate = level
        tag = hppc_tag(level)
        if dwell > 0:
            segs.append(Segment("CC", current_a=-block.discharge_a,
                                exits=(ExitCondition("elapsed", dwell),), tag=f"to_{tag}"))
        segs.append(rest(tag, block.pre_rest_s))
        for amps, pulse_s, rest_s in pulse_sequence(block):
            segs.append(Segment("Pulse", current_a=amps, duration_s=pulse_s, tag=tag))
            segs.append(Segment("Rest", duration_s=rest_s, tag=tag))
    return segs


def standard_plan(
    setpoint: float = 25.0,
    include_capacity_test: bool = True,
    include_hppc: bool = True,
    hppc: HppcBlock = HppcBlock(),
) -> TestPlan:
    """The full diagnostic profile.

    CC-CV charge, rest, C/3 capacity discharge, rest, CC-CV recharge, rest,
    HPPC at each SOC level, discharge to cutoff, rest, final CC-CV, rest.
    Balancing is enabled only while charging.
    """
    segs = cccv_charge() + [rest()]
    if include_capacity_test:
        segs += [discharge_to_cutoff("capacity"), rest()]
        segs += cccv_charge() + [rest()]
    if include_hppc:
        segs += hppc_segments(hppc)
        segs += [discharge_to_cutoff("final_discharge"), rest()]
        segs += cccv_charge("final_charge") + [rest()]
    name = "standard" if include_capacity_test and include_hppc else (
        "capacity" if include_capacity_test else "hppc"
    )
    order = tuple(a for a, _, _ in pulse_sequence(hppc)) if include_hppc else ()
    return TestPlan(tuple(segs), setpoint_temp=setpoint, name=name, pulse_order=order)


def capacity_plan(setpoint: float = 25.0) -> TestPlan:
    """Charge, rest, C/3 capacity discharge, rest."""
    segs = cccv_charge() + [rest(), discharge_to_cutoff("capacity"), rest()]
    return TestPlan(tuple(segs), setpoint_temp=setpoint, name="capacity")


def hppc_plan(setpoint: float = 25.0, hppc: HppcBlock = HppcBlock()) -> TestPlan:
    """Charge, rest, HPPC block only."""
    segs = cccv_charge() + [rest()] + hppc_segments(hppc)
    order = tuple(a for a, _, _ in pulse_sequence(hppc))
    return TestPlan(tuple(segs), setpoint_temp=setpoint, name="hppc", pulse_order=order)


PRESETS = {
    "standard": standard_plan,
    "capacity": capacity_plan,
    "hppc": hppc_plan,
}


def preset(name: str, setpoint: float = 25.0) -> TestPlan:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown plan preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(setpoint=setpoint)


class _Columns:
    def __init__(self):
        self.time = []
        self.seg = []
        self.i = []
        self.vm = []
        self.v = ([], [], [])
        self.s = ([], [], [])
        self.tc = ([], [], [])
        self.bal = []

    def to_dict(self) -> dict[str, np.ndarray]:
        f = lambda x: np.asarray(x, dtype=np.float64)
        n = lambda x: np.asarray(x, dtype=np.int64)
        return {
            "time_s": f(self.time),
            "segment_id": n(self.seg),
            "i_module_a": f(self.i),
            "v_module_v": f(self.vm),
            "v1_v": f(self.v[0]), "v2_v": f(self.v[1]), "v3_v": f(self.v[2]),
            "s1": n(self.s[0]), "s2": n(self.s[1]), "s3": n(self.s[2]),
            "t_tc1_c": f(self.tc[0]), "t_tc2_c": f(self.tc[1]), "t_tc3_c": f(self.tc[2]),
            "balancing_enabled": n(self.bal),
        }


def _reached(value: float, threshold: float, falling: bool) -> bool:
    return value <= threshold if falling else value >= threshold


def run_plan(
    plan: TestPlan,
    module: ModuleConfig,
    mbh_cfg: MbhConfig = MbhConfig(),
    dt: float = 0.1,
    seed: int = 0,
    initial_socs: Sequence[float] = (0.5, 0.5, 0.5),
    *,
    strict: bool = False,
    extra_meta: Optional[dict[str, str]] = None,
) -> TestLog:
    """Execute ``plan`` on a simulated module and return the cycler's 10 Hz log.

    Exit conditions on Cell voltages see the delayed board readings; module
    voltage and current are read directly.  A thermocouple above the safety
    cutoff or a saturated Cell aborts the run; the log is returned with
    ``status=aborted`` in its metadata (or the error is raised if ``strict``).
    """
    ts = mbh_cfg.adc.sample_period_s
    n_sub = int(round(ts / dt))
    if n_sub < 1 or abs(n_sub * dt - ts) > 1e-9 * ts:
        raise ValueError(f"dt={dt} must divide the sample period {ts}")
    module = replace(module, thermal=replace(module.thermal, setpoint=plan.setpoint_temp))
    r_bleed = mbh_cfg.balancer.r_bleed
    rng = np.random.default_rng(seed)
    chain = MeasurementChain(mbh_cfg, rng)

    state = initial_state(module, initial_socs, r_bleed=r_bleed)
    chain.reset_filter(state.v_cells)
    cols = _Columns()
    open_sw = (False, False, False)
    switches = open_sw
    held = None
    status = "completed"
    reason = ""
    tick = 0

    try:
        for seg_id, seg in enumerate(plan.segments):
            bal_on = seg.balancing and mbh_cfg.balancer.enabled
            if not bal_on:
                switches = open_sw
            falling = seg.current_a < 0
            n_seg = 0
            while True:
                t = tick * ts
                if seg.kind == "CV":
                    i_mod = cv_current(module, state, seg.voltage_v, switches, r_bleed=r_bleed)
                elif seg.kind == "Rest":
                    i_mod = 0.0
                else:
                    i_mod = seg.current_a
                if state.i_module != i_mod or state.switches != switches:
                    state = snapshot(module, state.socs, i_mod, switches, state.temp_module,
                                     r_bleed=r_bleed, t_sensors=state.t_sensors, time_s=state.time_s)

                chain.advance(state.v_cells, dt)
                frame = chain.sample(t)
                delayed = chain.deliver(frame)
                if delayed is None:
                    reported = replace(frame, valid=False) if held is None else held
                else:
                    reported = delayed
                    held = delayed

                v = reported.v_cells
                cols.time.append(round(t, 6))
                cols.seg.append(seg_id)
                cols.i.append(i_mod)
                cols.vm.append(state.v_module)
                for j in range(3):
                    cols.v[j].append(v[j])
                    cols.s[j].append(1 if switches[j] else 0)
                    cols.tc[j].append(state.t_sensors[j])
                cols.bal.append(1 if bal_on else 0)
                n_seg += 1

                if max(state.t_sensors) > plan.safety_cutoff_temp:
                    raise ProtocolViolation(
                        f"thermocouple reading {max(state.t_sensors):.2f} degC above the "
                        f"{plan.safety_cutoff_temp} degC cutoff at t={t:.1f} s"
                    )

                done = False
                for cond in seg.exits:
                    k = cond.kind
                    if k == "elapsed":
                        done = n_seg * ts >= cond.threshold - 1e-9
                    elif k == "min_cell_voltage":
                        done = reported.valid and _reached(min(v), cond.threshold, falling)
                    elif k == "module_voltage":
                        done = _reached(state.v_module, cond.threshold, falling)
                    elif k == "current_below":
                        done = abs(i_mod) < cond.threshold
                    elif k == "soc":
                        done = _reached(min(state.socs) if falling else max(state.socs),
                                        cond.threshold, falling)
                    if done:
                        break
                if not done and n_seg * ts >= seg.timeout_s:
                    raise ProtocolViolation(f"segment {seg_id} ({seg.kind}) timed out after {seg.timeout_s} s")

                for sub in range(n_sub):
                    last = sub == n_sub - 1
                    state = step(module, state, i_mod, switches, dt, rng if last else None, r_bleed=r_bleed)
                    if not last:
                        if seg.kind == "CV":
                            i_mod = cv_current(module, state, seg.voltage_v, switches, r_bleed=r_bleed)
                        chain.advance(state.v_cells, dt)
                tick += 1

                if bal_on and reported.valid and tick % mbh_cfg.balancer.decimation == 0:
                    switches = balance_decide(mbh_cfg.balancer, v)
                if done:
                    break
    except ProtocolViolation as exc:
        if strict:
            raise
        status = "aborted"
        reason = str(exc)

    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": str(seed),
        "plan": plan.name,
        "pulse_order": ",".join(f"{a:g}" for a in plan.pulse_order),
        "sample_period_s": f"{ts:g}",
        "setpoint_c": f"{plan.setpoint_temp:g}",
        "dt_s": f"{dt:g}",
        "segments": encode_segments(
            SegmentInfo(i, s.kind, s.tag) for i, s in enumerate(plan.segments)
        ),
        "status": status,
    }
    if reason:
        meta["abort_reason"] = reason
    if extra_meta:
        meta.update({k: str(v) for k, v in extra_meta.items()})
    return TestLog(meta, cols.to_dict())
