"""Multi-module test campaigns: parameter sampling, fan-out and log files.

Campaign document (YAML)::

    modules: 36
    seed: 7
    plan: standard            # preset name, or a path to a plan document
    temperatures: [15, 25, 35]
    capacity_temp: 25         # the capacity test runs only at this setpoint
    full_profile_all_temps: false
    dt: 0.1
    workers: 4
    compress: false           # write module_NNN_T25.csv.gz instead of .csv
    initial_soc: {mean: 0.5, sd: 0.0005}
    capacity_ah:              # one normal per Cell position
      - {mean: 218.80, sd: 0.64}
      - {mean: 218.96, sd: 0.52}
      - {mean: 218.95, sd: 0.52}
    r0_25c_mohm:
      - {mean: 0.2185, sd: 0.0052}
      - {mean: 0.1996, sd: 0.0067}
      - {mean: 0.2181, sd: 0.0063}
    thermal: {mode: lumped, sensor_noise_sd: 0.05}
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import (
    ConfigError,
    check_keys,
    get_number,
    line_of,
    load_plan,
    load_yaml_file,
    require_mapping,
)
from .ecm import DEFAULT_OCV_TABLE, RT_COEFFICIENTS, CellParams, OcvCurve, ResistanceLaw
from .logio import TestLog, write_log
from .mbh import MbhConfig
from .modulesim import ModuleConfig, ThermalConfig
from .protocol import TestPlan, hppc_plan, preset, run_plan, standard_plan

OUT_ENV = "CELLSCREEN_OUT"

# Physical bounds on sampled parameters.
Q_BOUNDS = (50.0, 400.0)
R25_BOUNDS_MOHM = (0.01, 5.0)


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)) or self.sd < 0:
            raise ValueError(f"invalid normal distribution mean={self.mean} sd={self.sd}")

    def draw(self, rng: np.random.Generator) -> float:
        return float(self.mean + self.sd * rng.standard_normal()) if self.sd > 0 else float(self.mean)


@dataclass(frozen=True)
class CampaignConfig:
    modules: int = 1
    seed: int = 0
    plan: str = "standard"
    temperatures: tuple[float, ...] = (25.0,)
    capacity_temp: float = 25.0
    full_profile_all_temps: bool = False
    dt: float = 0.1
    workers: int = 1
    compress: bool = False
    initial_soc: Normal = Normal(0.5, 0.0)
    capacity_ah: tuple[Normal, Normal, Normal] = (Normal(218.80, 0.64), Normal(218.96, 0.52), Normal(218.95, 0.52))
    r0_25c_mohm: tuple[Normal, Normal, Normal] = (Normal(0.2185, 0.0052), Normal(0.1996, 0.0067), Normal(0.2181, 0.0063))
    thermal: ThermalConfig = field(default_factory=lambda: ThermalConfig(mode="lumped"))
    mbh: MbhConfig = field(default_factory=MbhConfig)
    base_dir: Optional[str] = None

    def __post_init__(self):
        if self.modules < 1:
            raise ValueError("campaign needs at least one module")
        if not self.temperatures:
            raise ValueError("campaign needs at least one temperature")
        if len(self.capacity_ah) != 3 or len(self.r0_25c_mohm) != 3:
            raise ValueError("expected one distribution per Cell position")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for temp in self.temperatures:
            if not 10.0 <= temp <= 45.0:
                raise ValueError(f"temperature {temp} degC outside the supported [10, 45]")
        # sampled parameters must be physical with overwhelming probability
        for d in self.capacity_ah:
            if not Q_BOUNDS[0] < d.mean - 6 * d.sd and d.mean + 6 * d.sd < Q_BOUNDS[1]:
                raise ValueError(f"capacity distribution {d} leaves the physical range {Q_BOUNDS} Ah")
        for d in self.r0_25c_mohm:
            if not R25_BOUNDS_MOHM[0] < d.mean - 6 * d.sd and d.mean + 6 * d.sd < R25_BOUNDS_MOHM[1]:
                raise ValueError(f"resistance distribution {d} leaves the physical range {R25_BOUNDS_MOHM} mOhm")
        s = self.initial_soc
        if not 0.0 < s.mean - 6 * s.sd and s.mean + 6 * s.sd < 1.0:
            raise ValueError(f"initial SOC distribution {s} leaves (0, 1)")


@dataclass(frozen=True)
class ModuleSample:
    module_id: int
    capacity_ah: tuple[float, float, float]
    r0_25c_mohm: tuple[float, float, float]
    initial_soc: tuple[float, float, float]
    seed: int


def _normal(doc, key, default: Normal, path) -> Normal:
    if key not in doc:
        return default
    item = require_mapping(doc[key], key, path)
    check_keys(item, {"mean", "sd"}, key, path)
    try:
        return Normal(get_number(item, "mean", path=path), get_number(item, "sd", 0.0, path))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path, line_of(doc, key)) from None


def _normals(doc, key, default, path):
    if key not in doc:
        return default
    items = doc[key]
    if not isinstance(items, list) or len(items) != 3:
        raise ConfigError(f"{key!r} needs exactly three entries, one per Cell position", path, line_of(doc, key))
    return tuple(_normal({key: item}, key, None, path) for item in items)


_CAMPAIGN_KEYS = {
    "modules", "seed", "plan", "temperatures", "capacity_temp", "full_profile_all_temps", "dt",
    "workers", "compress", "initial_soc", "capacity_ah", "r0_25c_mohm", "thermal", "balancer",
}


def campaign_from_dict(doc, path=None) -> CampaignConfig:
    doc = require_mapping(doc, "campaign document", path)
    check_keys(doc, _CAMPAIGN_KEYS, "campaign document", path)
    kw = {}
    for key in ("modules", "seed", "workers"):
        if key in doc:
            value = doc[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key!r} must be an integer, got {value!r}", path, line_of(doc, key))
            kw[key] = value
    if "plan" in doc:
        kw["plan"] = str(doc["plan"])
    if "temperatures" in doc:
        temps = doc["temperatures"]
        if not isinstance(temps, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool) for t in temps):
            raise ConfigError("'temperatures' must be a list of numbers", path, line_of(doc, "temperatures"))
        kw["temperatures"] = tuple(float(t) for t in temps)
    if "capacity_temp" in doc:
        kw["capacity_temp"] = get_number(doc, "capacity_temp", path=path)
    if "dt" in doc:
        kw["dt"] = get_number(doc, "dt", path=path)
    if "compress" in doc:
        kw["compress"] = bool(doc["compress"])
    if "full_profile_all_temps" in doc:
        kw["full_profile_all_temps"] = bool(doc["full_profile_all_temps"])
    kw["initial_soc"] = _normal(doc, "initial_soc", CampaignConfig.initial_soc, path)
    kw["capacity_ah"] = _normals(doc, "capacity_ah", CampaignConfig.capacity_ah, path)
    kw["r0_25c_mohm"] = _normals(doc, "r0_25c_mohm", CampaignConfig.r0_25c_mohm, path)
    if "thermal" in doc:
        th = require_mapping(doc["thermal"], "thermal", path)
        allowed = {"mode", "thermal_resistance", "thermal_capacitance", "sensor_noise_sd", "sensor_offsets", "cell_offsets"}
        check_keys(th, allowed, "thermal", path)
        tkw = {k: (tuple(float(x) for x in v) if isinstance(v, list) else v) for k, v in th.items()}
        try:
            kw["thermal"] = ThermalConfig(**tkw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path, line_of(doc, "thermal")) from None
    if "balancer" in doc:
        bal = require_mapping(doc["balancer"], "balancer", path)
        check_keys(bal, {"v_th", "r_bleed", "enabled"}, "balancer", path)
        base = MbhConfig()
        try:
            kw["mbh"] = replace(base, balancer=replace(base.balancer, **dict(bal)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path, line_of(doc, "balancer")) from None
    if path is not None:
        kw["base_dir"] = str(Path(path).resolve().parent)
    try:
        return CampaignConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), path, line_of(doc)) from None


def load_campaign(path) -> CampaignConfig:
    return campaign_from_dict(load_yaml_file(path), path)


def sample_modules(cfg: CampaignConfig) -> list[ModuleSample]:
    """Draw per-module parameters; each module has its own spawned seed stream."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.modules)
    out = []
    for m, child in enumerate(children):
        rng = np.random.default_rng(child)
        q = tuple(d.draw(rng) for d in cfg.capacity_ah)
        r = tuple(d.draw(rng) for d in cfg.r0_25c_mohm)
        soc = tuple(cfg.initial_soc.draw(rng) for _ in range(3))
        sim_seed = int(child.generate_state(1)[0])
        out.append(ModuleSample(m + 1, q, r, soc, sim_seed))
    return out


def module_config(sample: ModuleSample, thermal: ThermalConfig) -> ModuleConfig:
    law = ResistanceLaw(RT_COEFFICIENTS)
    ocv = OcvCurve(DEFAULT_OCV_TABLE)
    cells = tuple(
        CellParams(capacity_ah=q, r0_law=law.scaled_to(r / 1000.0, temp=25.0), ocv=ocv)
        for q, r in zip(sample.capacity_ah, sample.r0_25c_mohm)
    )
    return ModuleConfig(cells=cells, thermal=thermal)


def plan_for(cfg: CampaignConfig, temp: float) -> TestPlan:
    """Plan executed at setpoint ``temp``.

    With a built-in preset, the capacity test runs only at ``capacity_temp``
    (other setpoints get the HPPC-only profile) unless
    ``full_profile_all_temps`` is set.
    """
    if cfg.plan == "standard":
        full = cfg.full_profile_all_temps or math.isclose(temp, cfg.capacity_temp)
        return standard_plan(temp, include_capacity_test=full) if full else hppc_plan(temp)
    try:
        return preset(cfg.plan, temp)
    except ValueError:
        pass
    plan_path = Path(cfg.plan)
    if not plan_path.is_absolute() and cfg.base_dir:
        plan_path = Path(cfg.base_dir) / plan_path
    if not plan_path.exists():
        raise ConfigError(f"plan {cfg.plan!r} is neither a preset nor a readable plan file")
    return replace(load_plan(plan_path), setpoint_temp=temp)


def log_name(module_id: int, temp: float, compress: bool = False) -> str:
    return f"module_{module_id:03d}_T{temp:g}.csv" + (".gz" if compress else "")


def run_module(cfg: CampaignConfig, sample: ModuleSample, temp: float) -> TestLog:
    plan = plan_for(cfg, temp)
    module = module_config(sample, cfg.thermal)
    # one simulation seed per (module, temperature), derived deterministically
    seed = int(np.random.SeedSequence([sample.seed, int(round(temp * 1000))]).generate_state(1)[0])
    meta = {
        "module_id": sample.module_id,
        "capacity_ah": ",".join(f"{x:.6f}" for x in sample.capacity_ah),
        "r0_25c_mohm": ",".join(f"{x:.6f}" for x in sample.r0_25c_mohm),
    }
    return run_plan(plan, module, cfg.mbh, dt=cfg.dt, seed=seed, initial_socs=sample.initial_soc, extra_meta=meta)


def _job(args) -> str:
    cfg, sample, temp, out_dir = args
    log = run_module(cfg, sample, temp)
    path = Path(out_dir) / log_name(sample.module_id, temp, cfg.compress)
    write_log(path, log)
    return str(path)


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "cellscreen_out"))


def run_campaign(cfg: CampaignConfig, out_dir=None, progress=None) -> list[Path]:
    """Simulate every (module, temperature) pair and write one log each.

    Also writes ``campaign.json`` with the injected parameters so the
    analysis can be checked against ground truth.  Output is independent of
    ``workers``.
    """
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    samples = sample_modules(cfg)
    jobs = [(cfg, s, float(t), str(out)) for s in samples for t in cfg.temperatures]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            paths = []
            for p in pool.map(_job, jobs):
                paths.append(p)
                if progress:
                    progress(p)
    else:
        paths = []
        for job in jobs:
            paths.append(_job(job))
            if progress:
                progress(paths[-1])
    manifest = {
        "seed": cfg.seed,
        "plan": cfg.plan,
        "temperatures": list(cfg.temperatures),
        "dt": cfg.dt,
        "modules": [asdict(s) for s in samples],
    }
    (out / "campaign.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return [Path(p) for p in paths]
