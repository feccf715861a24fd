"""End-to-end batch run: data, test batteries, tables, charts and manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .biastests import (
    Variant,
    WindowSpec,
    indirect_test,
    placebo_objective,
    run_variant,
    sweep_assumption1,
    test_assumption2_controls,
    test_assumption2_difference,
)
from .config import RunConfig, dump_config
from .estimation import EstimationError
from .mcstudy import nanmean_columns, run_mc
from .panelio import import_panel_csv
from .report import csv_text, format_estimate, render_trace_svg, sweep_table_csv
from .synthpanel import PanelDataset, simulate_panel
from .thinning import compare_se_traces, thin_biennial

THIN_WIDTHS = WindowSpec(tuple(range(1, 61)))


@dataclass
class ReportBundle:
    """Output files keyed by file name, plus the parsed verdicts and stage errors."""

    files: dict[str, str] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def manifest(self) -> str:
        return self.files["manifest.ini"]


def export_results(bundle: ReportBundle, directory) -> list[Path]:
    """Write every file of ``bundle`` into ``directory`` (created if needed)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"{directory}: cannot create output directory: {err}") from err
    paths = []
    for name in sorted(bundle.files):
        path = directory / name
        try:
            path.write_bytes(bundle.files[name].encode("utf-8"))
        except OSError as err:
            raise OSError(f"{path}: cannot write: {err}") from err
        paths.append(path)
    return paths


def load_panel(cfg: RunConfig, threads: int = 1) -> PanelDataset:
    if cfg.run.input:
        return import_panel_csv(cfg.run.input)
    return simulate_panel(cfg.dgp, threads=threads)


def _sha256(text: str | bytes) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def indirect_csv(res) -> str:
    rows = []
    for name, r in (("ols", res.ols), ("iv", res.iv)):
        rows.append(
            [
                name,
                format_estimate(r.estimate, r.se),
                repr(r.estimate),
                repr(r.se),
                repr(r.first_stage_f) if name == "iv" else "",
                r.n_obs,
                r.n_individuals,
            ]
        )
    rows.append(["difference_se", "", "", repr(res.diff_se), "", "", ""])
    rows.append(["dominance", res.dominance.value, "", "", "", "", ""])
    return csv_text(["estimator", "cell", "coef", "se", "first_stage_f", "n_obs", "n_individuals"], rows)


def mc_csv(summaries) -> str:
    rows = []
    for s in summaries:
        rej = s.rejection_rate()
        mean_coef, mean_se = nanmean_columns(s.estimates), nanmean_columns(s.ses)
        mean_target, mean_ols = nanmean_columns(np.column_stack([s.targets, s.ols]))
        for j, w in enumerate(s.widths):
            rows.append(
                [
                    repr(s.cell["lambda"]),
                    repr(s.cell["sigma_nu"]),
                    repr(s.cell["p_c"]),
                    s.cell["n"],
                    s.reps,
                    int(w),
                    repr(float(mean_coef[j])),
                    repr(float(mean_se[j])),
                    repr(float(rej[j])),
                    int(s.n_failed[j]),
                    repr(float(mean_target)),
                    repr(float(mean_ols)),
                    repr(float(s.plim_target)),
                ]
            )
    return csv_text(
        [
            "lambda_sd",
            "sigma_nu",
            "p_c",
            "n",
            "reps",
            "width",
            "mean_coef",
            "mean_se",
            "rejection_rate",
            "n_failed",
            "mean_target",
            "mean_ols",
            "ols_plim_target",
        ],
        rows,
    )


def run_pipeline(cfg: RunConfig, threads: int = 1, stages=None) -> ReportBundle:
    """Run the configured analyses; estimation failures are recorded, not raised.

    ``stages`` optionally restricts the run to a subset of
    ``{"assumption1", "assumption2", "indirect", "placebo", "variants", "thin", "mc"}``.
    """
    all_stages = ["assumption1", "assumption2", "indirect", "placebo", "variants"]
    if cfg.run.thin:
        all_stages.append("thin")
    if cfg.run.mc:
        all_stages.append("mc")
    todo = list(all_stages if stages is None else stages)
    bundle = ReportBundle()
    panel = load_panel(cfg, threads)
    f = panel.frame
    bundle.files["panel_summary.csv"] = csv_text(
        ["n_obs", "n_individuals", "mean_retired", "mean_h_subjective", "sd_h_subjective", "mean_sah_5pt"],
        [
            [
                len(f),
                panel.n_individuals,
                repr(float(f["retired"].mean())),
                repr(float(f["h_subjective"].mean())),
                repr(float(f["h_subjective"].std(ddof=1))),
                repr(float(f["sah_5pt"].mean())),
            ]
        ],
    )
    notes: list[str] = []

    def sweep_stage(key, fn, *args, trace=False, **kwargs):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                s = fn(*args, **kwargs)
            notes.extend(f"{key}: {w.message}" for w in caught)
        except (EstimationError, KeyError, ValueError) as err:
            bundle.errors[key] = f"{type(err).__name__}: {err}"
            return None
        bundle.files[f"{key}.csv"] = sweep_table_csv(s)
        if not s.estimable.any():
            first = s.errors[min(s.errors)]
            bundle.errors[key] = f"no window could be estimated ({first})"
            return None
        bundle.verdicts[key] = f"{s.verdict.value} | {s.rationale}"
        if trace:
            bundle.files[f"{key}.svg"] = render_trace_svg(s, title=key)
        return s

    windows, design, rule = cfg.windows, cfg.design, cfg.verdict
    if "assumption1" in todo:
        sweep_stage("assumption1", sweep_assumption1, panel, windows, design, rule)
        sweep_stage("assumption1_trace", sweep_assumption1, panel, cfg.trace_windows, design, rule, trace=True)
    if "assumption2" in todo:
        sweep_stage("assumption2_difference", test_assumption2_difference, panel, windows, design, rule)
        sweep_stage("assumption2_controls", test_assumption2_controls, panel, windows, design, rule)
    if "indirect" in todo:
        try:
            res = indirect_test(panel)
            bundle.files["indirect.csv"] = indirect_csv(res)
            bundle.verdicts["indirect"] = res.dominance.value
        except EstimationError as err:
            bundle.errors["indirect"] = f"{type(err).__name__}: {err}"
    if "placebo" in todo:
        sweep_stage("placebo_objective", placebo_objective, panel, windows, design, rule)
    if "variants" in todo:
        for v in Variant:
            sweep_stage(f"variant_{v.value}", run_variant, panel, windows, v, design, rule)
    if "thin" in todo:
        thinned = thin_biennial(panel, cfg.run.seed)
        cmp_ = compare_se_traces(panel, thinned, THIN_WIDTHS, design)
        rows = [
            [int(w), repr(float(a)), "" if np.isnan(b) else repr(float(b)), "" if np.isnan(b) else repr(float(b / a))]
            for w, a, b in zip(cmp_.widths, cmp_.se_monthly, cmp_.se_thinned)
        ]
        bundle.files["thinning_se.csv"] = csv_text(["width", "se_monthly", "se_thinned", "ratio"], rows)
        bundle.files["thinning_thinned.svg"] = render_trace_svg(cmp_.thinned, title="biennial subsample")
        bundle.files["thinning_monthly.svg"] = render_trace_svg(cmp_.monthly, title="monthly panel")
    if "mc" in todo:
        grid = dataclasses.replace(cfg.grid, base=cfg.dgp)
        summaries = run_mc(grid, windows, design, cfg.run.mc_test, threads=threads)
        bundle.files["mc.csv"] = mc_csv(summaries)

    lines = [f"{k}: {v}" for k, v in sorted(bundle.verdicts.items())]
    lines += [f"error {k}: {v}" for k, v in sorted(bundle.errors.items())]
    lines += [f"note {n}" for n in notes]
    bundle.files["verdicts.txt"] = "\n".join(lines) + "\n"

    manifest = [dump_config(cfg).rstrip("\n"), "", "[manifest]", f"version = {__version__}", f"seed = {cfg.run.seed}"]
    if cfg.run.input:
        manifest.append(f"input_sha256 = {_sha256(Path(cfg.run.input).read_bytes())}")
    manifest += ["", "[files]"]
    manifest += [f"{name} = {_sha256(text)}" for name, text in sorted(bundle.files.items())]
    bundle.files["manifest.ini"] = "\n".join(manifest) + "\n"
    return bundle
