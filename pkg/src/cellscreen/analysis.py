"""Log directory -> per-module metrics -> fits, pack report and plot data.

Metrics document (one JSON file per module, ``metrics_NNN.json``)::

    {"module_id": 3, "window": [3.3039, 4.1995],
     "cells": [{"q_ah": 218.1, "e_wh": 806.3,
                "resistance": [{"soc": 0.9, "setpoint_c": 25, "r_mohm": 0.2191,
                                "r_discharge_mohm": ..., "r_charge_mohm": ...,
                                "mean_temp_c": 26.4}, ...]}, ...],
     "module": {"q_module_ah": ..., "e_module_wh": ..., "weakest_index": 1, "tie": false}}

Plot data files are whitespace-separated x-y tables with a ``#`` header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diagnostics import (
    CellMetrics,
    DiagnosticError,
    PackReport,
    RtFit,
    VoltageWindow,
    discharge_capacity,
    discharge_energy,
    fit_rt,
    module_rollup,
    pack_stats,
    pulse_analysis,
    voltage_window,
)
from .logio import TestLog, read_log
from .protocol import HppcBlock, hppc_tag

METRICS_VERSION = 1


def read_logs(directory) -> list[TestLog]:
    d = Path(directory)
    paths = sorted([*d.glob("*.csv"), *d.glob("*.csv.gz")])
    if not paths:
        raise DiagnosticError(f"no log files (*.csv, *.csv.gz) in {directory}")
    return [read_log(p) for p in paths]


def has_tag(log: TestLog, tag: str) -> bool:
    return bool(log.segment_ids(tag)) and bool(log.mask(tag).any())


def auto_window(logs: Sequence[TestLog]) -> VoltageWindow:
    caps = [log for log in logs if has_tag(log, "capacity")]
    if not caps:
        raise DiagnosticError("no log contains a capacity test; give the window explicitly")
    return voltage_window(caps)


def parse_window(text: str) -> Optional[VoltageWindow]:
    """``auto`` -> None, ``LO,HI`` -> VoltageWindow."""
    if text == "auto":
        return None
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise DiagnosticError(f"window must be 'auto' or 'LO,HI', got {text!r}") from None
    return VoltageWindow(lo, hi)


def _module_id(log: TestLog) -> int:
    return int(log.meta.get("module_id", "1"))


def analyze_module(logs: Sequence[TestLog], window: VoltageWindow, soc_levels=HppcBlock().soc_levels) -> dict:
    """Metrics of one module from all of its logs (one per setpoint)."""
    cells = [CellMetrics() for _ in range(3)]
    res = [[] for _ in range(3)]
    for log in logs:
        if log.status != "completed":
            raise DiagnosticError(f"module {_module_id(log)} log at {log.meta.get('setpoint_c')} degC was aborted: "
                                  f"{log.meta.get('abort_reason', '')}")
        setpoint = float(log.meta["setpoint_c"])
        if has_tag(log, "capacity"):
            for j in range(3):
                cells[j].q_ah = discharge_capacity(log, j + 1, window)
                cells[j].e_wh = discharge_energy(log, j + 1, window)
        for level in soc_levels:
            if not has_tag(log, hppc_tag(level)):
                continue
            for j in range(3):
                p = pulse_analysis(log, j + 1, level)
                cells[j].r_mohm[(level, setpoint)] = p.r_mohm
                cells[j].mean_pulse_temp[(level, setpoint)] = p.mean_temp_c
                res[j].append({
                    "soc": level,
                    "setpoint_c": setpoint,
                    "r_mohm": p.r_mohm,
                    "r_discharge_mohm": p.r_discharge_mohm,
                    "r_charge_mohm": p.r_charge_mohm,
                    "mean_temp_c": p.mean_temp_c,
                })
    doc = {
        "version": METRICS_VERSION,
        "module_id": _module_id(logs[0]),
        "window": [window.v_lower, window.v_upper],
        "cells": [
            {"q_ah": _num(c.q_ah), "e_wh": _num(c.e_wh), "resistance": r} for c, r in zip(cells, res)
        ],
    }
    if all(math.isfinite(c.q_ah) for c in cells):
        doc["module"] = asdict(module_rollup(cells))
    if "capacity_ah" in logs[0].meta:
        doc["injected"] = {
            "capacity_ah": [float(x) for x in logs[0].meta["capacity_ah"].split(",")],
            "r0_25c_mohm": [float(x) for x in logs[0].meta["r0_25c_mohm"].split(",")],
        }
    return doc


def _num(x: float):
    return None if x is None or not math.isfinite(x) else float(x)


def analyze_logs(logs: Sequence[TestLog], window: Optional[VoltageWindow] = None) -> list[dict]:
    if window is None:
        window = auto_window(logs)
    by_module: dict[int, list[TestLog]] = {}
    for log in logs:
        by_module.setdefault(_module_id(log), []).append(log)
    return [analyze_module(by_module[m], window) for m in sorted(by_module)]


# --------------------------------------------------------------------------- metrics files


def write_metrics(out_dir, docs: Sequence[dict], fmt: str = "structured") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "structured":
        paths = []
        for doc in docs:
            p = out / f"metrics_{doc['module_id']:03d}.json"
            p.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            paths.append(p)
        return paths
    if fmt == "csv":
        p = out / "metrics.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["module_id", "cell", "metric", "soc", "setpoint_c", "value", "mean_temp_c"])
            for doc in docs:
                for j, c in enumerate(doc["cells"], start=1):
                    for name in ("q_ah", "e_wh"):
                        if c[name] is not None:
                            w.writerow([doc["module_id"], j, name, "", "", f"{c[name]:.6f}", ""])
                    for r in c["resistance"]:
                        w.writerow([doc["module_id"], j, "r_mohm", f"{r['soc']:g}", f"{r['setpoint_c']:g}",
                                    f"{r['r_mohm']:.6f}", f"{r['mean_temp_c']:.6f}"])
        return [p]
    raise ValueError(f"unknown format {fmt!r}")


def read_metrics(path) -> list[dict]:
    """Load metrics from a JSON file, a metrics.csv file, or a directory of either."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("metrics_*.json"))
        if not files and (path / "metrics.csv").exists():
            return read_metrics(path / "metrics.csv")
        if not files:
            raise DiagnosticError(f"no metrics files in {path}")
        return [doc for f in files for doc in read_metrics(f)]
    if path.suffix == ".csv":
        return _read_metrics_csv(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DiagnosticError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    docs = doc if isinstance(doc, list) else [doc]
    for d in docs:
        if not isinstance(d, dict) or "cells" not in d or len(d["cells"]) != 3:
            raise DiagnosticError(f"{path}: not a metrics document")
    return docs


def _read_metrics_csv(path: Path) -> list[dict]:
    docs: dict[int, dict] = {}
    with path.open(encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for n, row in enumerate(reader, start=2):
            try:
                m = int(row["module_id"])
                j = int(row["cell"]) - 1
                value = float(row["value"])
                doc = docs.setdefault(m, {"module_id": m, "cells": [
                    {"q_ah": None, "e_wh": None, "resistance": []} for _ in range(3)]})
                if row["metric"] in ("q_ah", "e_wh"):
                    doc["cells"][j][row["metric"]] = value
                elif row["metric"] == "r_mohm":
                    doc["cells"][j]["resistance"].append({
                        "soc": float(row["soc"]), "setpoint_c": float(row["setpoint_c"]),
                        "r_mohm": value, "mean_temp_c": float(row["mean_temp_c"]),
                    })
                else:
                    raise ValueError(f"unknown metric {row['metric']!r}")
            except (KeyError, ValueError, IndexError, TypeError) as exc:
                raise DiagnosticError(f"{path}:{n}: {exc}") from None
    return [docs[m] for m in sorted(docs)]


def cell_metrics(doc: dict) -> list[CellMetrics]:
    out = []
    for c in doc["cells"]:
        m = CellMetrics(
            q_ah=math.nan if c["q_ah"] is None else c["q_ah"],
            e_wh=math.nan if c["e_wh"] is None else c["e_wh"],
        )
        for r in c["resistance"]:
            key = (r["soc"], r["setpoint_c"])
            m.r_mohm[key] = r["r_mohm"]
            m.mean_pulse_temp[key] = r["mean_temp_c"]
        out.append(m)
    return out


# --------------------------------------------------------------------------- fit and report


def rt_points(docs: Sequence[dict]) -> list[tuple[float, float, float]]:
    """(measured mean temperature, SOC, r) for every Cell and HPPC block."""
    return [
        (r["mean_temp_c"], r["soc"], r["r_mohm"])
        for doc in docs for c in doc["cells"] for r in c["resistance"]
    ]


def fit_document(fit: RtFit) -> dict:
    return {
        "model": "r = a1 / (T - a2) + a3  [ohm, degC]",
        "levels": [
            {"soc": soc, "a1": c.a1, "a2": c.a2, "a3": c.a3, "rmse_mohm": c.rmse_mohm, "n_points": c.n_points}
            for soc, c in sorted(fit.levels.items(), reverse=True)
        ],
    }


def render_fit(fit: RtFit) -> str:
    lines = [f"{'SOC':>6s}{'a1':>12s}{'a2':>10s}{'a3':>12s}{'rmse [mOhm]':>13s}{'n':>5s}"]
    for soc, c in sorted(fit.levels.items(), reverse=True):
        lines.append(f"{soc:6.2f}{c.a1:12.6f}{c.a2:10.4f}{c.a3:12.6f}{c.rmse_mohm:13.4f}{c.n_points:5d}")
    return "\n".join(lines)


def build_report(docs: Sequence[dict]) -> PackReport:
    complete = [d for d in docs if all(c["q_ah"] is not None for c in d["cells"])]
    if not complete:
        raise DiagnosticError("no module has capacity metrics")
    report = pack_stats([cell_metrics(d) for d in complete])
    # resistance tables use every module, also those without a capacity test
    pooled: dict[float, list[list[float]]] = {}
    for d in docs:
        for j, c in enumerate(d["cells"]):
            for r in c["resistance"]:
                pooled.setdefault(float(r["setpoint_c"]), [[], [], []])[j].append(r["r_mohm"])
    if pooled:
        report.resistance = pack_stats([cell_metrics(d) for d in complete], pooled).resistance
    return report


def _write_xy(path: Path, header: str, rows) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in rows:
            fh.write(" ".join(f"{x:.6f}" if isinstance(x, float) else str(x) for x in row) + "\n")
    return path


def write_plot_data(out_dir, docs: Sequence[dict], fit: Optional[RtFit] = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    rows_q, rows_e, rows_mod, weakest = [], [], [], [0, 0, 0]
    for d in docs:
        for j, c in enumerate(d["cells"], start=1):
            if c["q_ah"] is not None:
                rows_q.append((j, float(c["q_ah"])))
                rows_e.append((j, float(c["e_wh"])))
        if "module" in d:
            m = d["module"]
            rows_mod.append((float(m["q_module_ah"]), float(m["e_module_wh"])))
            weakest[m["weakest_index"] - 1] += 1
    paths.append(_write_xy(out / "capacity_by_position.dat", "cell_position q_ah", rows_q))
    paths.append(_write_xy(out / "energy_by_position.dat", "cell_position e_wh", rows_e))
    paths.append(_write_xy(out / "module_q_vs_e.dat", "q_module_ah e_module_wh", rows_mod))
    cum = np.cumsum(weakest)
    paths.append(_write_xy(out / "weakest_histogram.dat", "cell_position count cumulative",
                           [(j + 1, weakest[j], int(cum[j])) for j in range(3)]))
    rows_r = [
        (j, float(r["setpoint_c"]), float(r["soc"]), float(r["r_mohm"]))
        for d in docs for j, c in enumerate(d["cells"], start=1) for r in c["resistance"]
    ]
    paths.append(_write_xy(out / "resistance_by_position.dat", "cell_position setpoint_c soc r_mohm", rows_r))
    rows_t = [(float(t), float(s), float(r)) for t, s, r in rt_points(docs)]
    paths.append(_write_xy(out / "resistance_vs_temp.dat", "mean_temp_c soc r_mohm", rows_t))
    if fit is not None and rows_t:
        temps = np.linspace(min(t for t, _, _ in rows_t) - 2, max(t for t, _, _ in rows_t) + 2, 50)
        curve = [(float(t), float(soc), 1000.0 * float(fit.predict(t, soc)))
                 for soc in sorted(fit.levels) for t in temps]
        paths.append(_write_xy(out / "rt_fit_curves.dat", "temp_c soc r_mohm", curve))
    return paths


def report_document(report: PackReport) -> dict:
    def stats(d):
        return {k: asdict(v) for k, v in d.items()}

    return {
        "n_modules": report.n_modules,
        "capacity": stats(report.capacity),
        "energy": stats(report.energy),
        "resistance": {f"{t:g}": stats(rows) for t, rows in sorted(report.resistance.items())},
        "weakest_counts": list(report.weakest_counts),
        "weakest_cumulative": list(report.weakest_cumulative),
        "pearson_qe": None if math.isnan(report.pearson_qe) else report.pearson_qe,
        "ties": report.ties,
    }


def maybe_fit(docs: Sequence[dict]) -> Optional[RtFit]:
    points = rt_points(docs)
    temps = {round(t, 6) for t, _, _ in points}
    if len(temps) < 3:
        return None
    return fit_rt(points)
