"""Command-line entry point ``cellscreen``.

    cellscreen simulate --config campaign.yaml --out logs/
    cellscreen window   --logs logs/
    cellscreen analyze  --logs logs/ --window auto --out metrics/
    cellscreen fit      --metrics metrics/
    cellscreen report   --metrics metrics/ --out report/

The default output directory is taken from ``$CELLSCREEN_OUT``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import analysis
from .campaign import OUT_ENV, CampaignConfig, default_out_dir, load_campaign, run_campaign
from .config import ConfigError
from .diagnostics import DiagnosticError, FitError
from .logio import LogFormatError


def _out(args, sub: str) -> Path:
    if args.out:
        return Path(args.out)
    return default_out_dir() / sub


def cmd_simulate(args) -> int:
    cfg = load_campaign(args.config) if args.config else CampaignConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.dt is not None:
        cfg = replace(cfg, dt=args.dt)
    if args.modules is not None:
        cfg = replace(cfg, modules=args.modules)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    out = _out(args, "logs")
    progress = (lambda p: print(f"wrote {p}", file=sys.stderr)) if args.verbose else None
    paths = run_campaign(cfg, out, progress=progress)
    print(f"{len(paths)} log(s) written to {out}")
    return 0


def cmd_window(args) -> int:
    logs = analysis.read_logs(args.logs)
    w = analysis.auto_window(logs)
    if args.format == "structured":
        print(json.dumps({"v_lower": w.v_lower, "v_upper": w.v_upper}))
    else:
        print("v_lower,v_upper")
        print(f"{w.v_lower:.6f},{w.v_upper:.6f}")
    return 0


def cmd_analyze(args) -> int:
    logs = analysis.read_logs(args.logs)
    window = analysis.parse_window(args.window)
    docs = analysis.analyze_logs(logs, window)
    out = _out(args, "metrics")
    paths = analysis.write_metrics(out, docs, args.format)
    for doc in docs:
        cells = doc["cells"]
        q = " ".join("-" if c["q_ah"] is None else f"{c['q_ah']:.2f}" for c in cells)
        print(f"module {doc['module_id']}: q [Ah] = {q}")
    print(f"{len(paths)} metrics file(s) written to {out}")
    return 0


def cmd_fit(args) -> int:
    docs = analysis.read_metrics(args.metrics)
    from .diagnostics import fit_rt

    fit = fit_rt(analysis.rt_points(docs))
    doc = analysis.fit_document(fit)
    if args.format == "structured":
        print(json.dumps(doc, indent=2))
    else:
        print("soc,a1,a2,a3,rmse_mohm,n_points")
        for row in doc["levels"]:
            print(",".join(f"{row[k]:.6g}" for k in ("soc", "a1", "a2", "a3", "rmse_mohm", "n_points")))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "rt_fit.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    docs = analysis.read_metrics(args.metrics)
    report = analysis.build_report(docs)
    try:
        fit = analysis.maybe_fit(docs)
    except FitError as exc:
        print(f"warning: r(T) fit skipped: {exc}", file=sys.stderr)
        fit = None
    out = _out(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    text = report.render()
    if fit is not None:
        text += "\n\nResistance vs temperature fit\n" + analysis.render_fit(fit)
    print(text)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    doc = analysis.report_document(report)
    if fit is not None:
        doc["rt_fit"] = analysis.fit_document(fit)
    (out / "report.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    analysis.write_plot_data(out, docs, fit)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cellscreen",
        description="Simulate and analyze module screening campaigns.",
        epilog=f"Default output directory: ${OUT_ENV} (or ./cellscreen_out).",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt_default="structured"):
        sp.add_argument("--seed", type=int, default=None, help="override the campaign seed")
        sp.add_argument("--dt", type=float, default=None, help="simulation step [s]; must divide 0.1")
        sp.add_argument("--format", choices=("csv", "structured"), default=fmt_default)

    s = sub.add_parser("simulate", help="run a campaign and write one log per (module, temperature)")
    s.add_argument("--config", help="campaign YAML document (defaults: one module at 25 degC)")
    s.add_argument("--out", help="log directory")
    s.add_argument("--modules", type=int, default=None, help="override the module count")
    s.add_argument("--workers", type=int, default=None, help="parallel processes")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("window", help="print the common voltage window of the capacity tests")
    s.add_argument("--logs", required=True)
    common(s, "csv")
    s.set_defaults(func=cmd_window)

    s = sub.add_parser("analyze", help="per-module capacity, energy and resistance metrics")
    s.add_argument("--logs", required=True)
    s.add_argument("--window", default="auto", help="'auto' or LO,HI in volts")
    s.add_argument("--out", help="metrics directory")
    common(s)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("fit", help="fit the resistance-temperature law per SOC level")
    s.add_argument("--metrics", required=True, help="metrics file or directory")
    s.add_argument("--out", help="also write rt_fit.json here")
    common(s, "csv")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("report", help="pack statistics, text report and plot-data files")
    s.add_argument("--metrics", required=True, help="metrics file or directory")
    s.add_argument("--out", help="report directory")
    common(s)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LogFormatError, DiagnosticError, FitError, ValueError, OSError) as exc:
        print(f"cellscreen {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
