"""Command-line entry point ``justbias``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 estimation failure.
The environment variable ``JUSTBIAS_THREADS`` caps worker threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config, write_config
from .biastests import subsample_window
from .estimation import EstimationError, standardize, tsls_fit
from .panelio import DataError, export_panel_csv
from .pipeline import ReportBundle, export_results, load_panel, run_pipeline
from .policy import UnsupportedCohortError
from .report import csv_text, format_estimate
from .synthpanel import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3

STAGES = {
    "sweep": ["assumption1"],
    "indirect": ["indirect"],
    "placebo": ["placebo"],
    "variants": ["variants"],
    "thin": ["thin"],
    "mc": ["mc"],
    "report": None,
}


def thread_cap() -> int:
    raw = os.environ.get("JUSTBIAS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as err:
        raise ConfigError(f"JUSTBIAS_THREADS must be an integer, got {raw!r}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="justbias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate a synthetic panel and write it as CSV",
        "estimate": "single FE-2SLS fit on the full sample or one window",
        "sweep": "shrinking-window test of the first identification assumption",
        "indirect": "OLS versus objective-instrument IV comparison",
        "placebo": "window sweep with objective health as the outcome",
        "variants": "robustness variants of the window sweep",
        "thin": "biennial thinning and SE comparison",
        "mc": "Monte Carlo grid over synthetic worlds",
        "report": "full pipeline with tables, charts and manifest",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
        p.add_argument("--out", help="output directory")
        if name != "simulate" and name != "mc":
            p.add_argument("--input", help="panel CSV to analyse instead of simulating")
        if name == "estimate":
            p.add_argument("--width", type=int, help="window half-width in months (default: full sample)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else load_config(text="")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "input", None):
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, input=args.input))
    if args.out:
        cfg = dataclasses.replace(cfg, out=args.out)
    if args.command == "mc":
        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, mc=True))
    return cfg


def _estimate(cfg: RunConfig, width: int | None, threads: int) -> ReportBundle:
    panel = load_panel(cfg, threads)
    if width is not None:
        panel = subsample_window(panel, width)
    frame = panel.frame.copy()
    spec = cfg.design
    frame["z_outcome"] = standardize(frame[spec.outcome].to_numpy(float))
    res = tsls_fit(spec.replace(outcome="z_outcome"), frame)
    rows = [
        [
            name,
            format_estimate(res.coef[name], res.se_cluster[name]),
            repr(res.coef[name]),
            repr(res.se_cluster[name]),
        ]
        for name in res.names
    ]
    bundle = ReportBundle()
    bundle.files["estimate.csv"] = csv_text(["term", "cell", "coef", "se"], rows)
    bundle.files["first_stage.csv"] = csv_text(
        ["instrument", "coef", "se", "f"],
        [[k, repr(v), repr(res.first_stage_se[k]), repr(res.first_stage_f)] for k, v in res.first_stage_coef.items()],
    )
    return bundle


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = thread_cap()
        cfg = _config(args)
        out = Path(cfg.out)
        if args.command == "simulate":
            out.mkdir(parents=True, exist_ok=True)
            panel = load_panel(cfg, threads)
            export_panel_csv(panel, out / "panel.csv")
            write_config(cfg, out / "config.ini")
            print(f"wrote {len(panel)} rows for {panel.n_individuals} persons to {out / 'panel.csv'}")
            return EXIT_OK
        if args.command == "estimate":
            bundle = _estimate(cfg, args.width, threads)
        else:
            bundle = run_pipeline(cfg, threads=threads, stages=STAGES[args.command])
        paths = export_results(bundle, out)
        for key, text in sorted(bundle.verdicts.items()):
            print(f"{key}: {text}")
        for key, text in sorted(bundle.errors.items()):
            print(f"error {key}: {text}", file=sys.stderr)
        print(f"wrote {len(paths)} files to {out}")
        if bundle.errors and not bundle.verdicts:
            return EXIT_ESTIMATION
        return EXIT_OK
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, UnsupportedCohortError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as err:
        print(f"estimation failure: {err}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
