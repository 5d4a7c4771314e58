"""Command-line interface.

Commands::

    ddpvf ingest  DATA --schema S
    ddpvf fit     DATA --schema S --model dd-pvf [--profile] [--gamma-grid ...]
    ddpvf report  REPORT.json            (re-export a saved report)
    ddpvf simulate --config C [--replicates R]
    ddpvf km      DATA --schema S [--group-by COL] [--fit-report REPORT.json]
    ddpvf hazard  DATA --schema S [--group-by COL] [--bandwidth H]

Exit status is 0 on success, 1 when an error is reported and 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import secrets
import sys
import warnings
from pathlib import Path

import numpy as np

from . import report as rpt
from .estimation import FitConfig, fit_mle, profile_fit_gamma, default_start
from .distributions import FrailtySpec, Variant
from .ingest import IngestError, IngestSchema, ingest
from .nonparametric import kaplan_meier, kernel_hazard
from .simulation import ConfigError, ScenarioConfig, run_monte_carlo

log = logging.getLogger("ddpvf")

MODELS = {
    "dd": Variant.NONE,
    "dd-gamma": Variant.GAMMA,
    "dd-ig": Variant.INVERSE_GAUSSIAN,
    "dd-pvf": Variant.PVF,
    "dd-pvf-profile": Variant.PVF,
}
FIT_CONFIG_KEYS = {"max_iterations", "gradient_tolerance", "multistart_count",
                   "multistart_scale", "gamma_grid", "hessian_step_scale",
                   "hessian_min_step", "confidence_level"}


class CliError(Exception):
    pass


def _parse_grid(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid gamma grid {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty gamma grid")
    return values


def _level(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("confidence level must lie in (0, 1)")
    return v


def _seed(args) -> int:
    return int(args.seed) if args.seed is not None else secrets.randbits(63)


def _safe_name(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", label) or "group"


def _load_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {what} {path}: {exc}") from None


def _ingest(args):
    if args.schema is None:
        raise CliError("--schema is required")
    schema = IngestSchema.load(args.schema)
    if args.delimiter is not None:
        schema = IngestSchema(**{**schema.__dict__, "delimiter": args.delimiter})
    return ingest(args.data, schema)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    ing = _ingest(args)
    data = ing.data
    print(f"rows: {len(data)}")
    print(f"events: {int(data.event.sum())} ({100 * data.event.mean():.1f}%)")
    if data.time_unit:
        print(f"time unit: {data.time_unit}")
    for part in ("alpha", "beta", "cure"):
        print(f"{part} design: {', '.join(ing.design_names[part])}")
    return 0


def _fit_config(args, seed: int) -> FitConfig:
    raw = _load_json(args.config, "fit config") if args.config else {}
    if not isinstance(raw, dict):
        raise CliError("fit config: expected a JSON object")
    unknown = sorted(set(raw) - FIT_CONFIG_KEYS)
    if unknown:
        raise CliError(f"fit config.{unknown[0]}: unknown key")
    if args.confidence_level is not None:
        raw["confidence_level"] = args.confidence_level
    if args.gamma_grid is not None:
        raw["gamma_grid"] = args.gamma_grid
    try:
        return FitConfig(seed=seed, **raw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"fit config: {exc}") from None


def run_fits(data, models, config: FitConfig, profile: bool = False):
    """Fit the requested model names, sharing one no-frailty warm start."""
    dd = fit_mle(data, Variant.NONE, config, init=default_start(data))
    fits = []
    for name in models:
        variant = MODELS[name]
        if variant is Variant.NONE:
            fits.append(dd)
        elif name == "dd-pvf-profile" or (name == "dd-pvf" and profile):
            fits.append(profile_fit_gamma(data, config, init=dd.estimates))
        else:
            fits.append(fit_mle(data, variant, config, init=dd.estimates))
    return _refit_pvf_from_nested(data, models, fits, config)


def _refit_pvf_from_nested(data, models, fits, config: FitConfig):
    """PVF contains the Gamma (index -> 0) and IG (index 0.5) models, so its
    maximum cannot lie below theirs; if it does, restart from the nested optimum."""
    if "dd-pvf" not in models:
        return fits
    i = models.index("dd-pvf")
    if fits[i].gamma_profile is not None:
        return fits
    starts = {Variant.GAMMA: config.gamma_grid[0] if config.gamma_grid else 0.05,
              Variant.INVERSE_GAUSSIAN: 0.5}
    for name, fit in zip(models, fits):
        g = starts.get(MODELS[name])
        if g is None or fit.log_likelihood <= fits[i].log_likelihood:
            continue
        init = fit.estimates.with_frailty(FrailtySpec.pvf(g, fit.estimates.frailty.sigma2))
        again = fit_mle(data, Variant.PVF, config, init=init)
        if again.log_likelihood > fits[i].log_likelihood:
            fits[i] = again
    return fits


def cmd_fit(args) -> int:
    seed = _seed(args)
    config = _fit_config(args, seed)
    ing = _ingest(args)
    models = list(MODELS) if args.model == "all" else [m.strip() for m in args.model.split(",")]
    bad = [m for m in models if m not in MODELS]
    if bad:
        raise CliError(f"unknown model {bad[0]!r}; choose from {', '.join(MODELS)} or all")
    if args.model == "all" and not args.profile:
        models.remove("dd-pvf-profile")
    fits = run_fits(ing.data, models, config, profile=args.profile)
    source = {"path": Path(args.data).name, "schema": Path(args.schema).name}
    report = rpt.build_report(fits, ing.data, seed, source)
    return _emit_report(report, args)


def _emit_report(report: dict, args) -> int:
    out = _out_dir(args)
    text = rpt.dumps(report)
    (out / "report.json").write_text(text, encoding="utf-8")
    table = rpt.text_table(report)
    (out / "report.txt").write_text(table, encoding="utf-8")
    for m in report["models"]:
        if "gamma_profile" in m:
            rows = m["gamma_profile"]
            rpt.write_curve(out / f"{m['model']}_gamma_profile.tsv",
                            [r["gamma"] for r in rows],
                            [np.nan if r["log_likelihood"] is None else r["log_likelihood"]
                             for r in rows], header=("gamma", "log_likelihood"))
    if not args.quiet:
        sys.stdout.write(table)
    return 0


def cmd_report(args) -> int:
    try:
        text = Path(args.report).read_text(encoding="utf-8")
        report = rpt.loads(text)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read report {args.report}: {exc}") from None
    if report["schema_version"] != rpt.SCHEMA_VERSION:
        raise CliError("report re-export supports fit reports only")
    return _emit_report(report, args)


def _scenario_config(args) -> ScenarioConfig:
    if args.config is None:
        raise CliError("--config is required")
    raw = _load_json(args.config, "scenario config")
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    raw = dict(raw)
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    if args.seed is not None:
        raw["seed"] = args.seed
    elif "seed" not in raw:
        raw["seed"] = secrets.randbits(63)
    if args.profile:
        raw["profile"] = True
    if args.workers is not None:
        raw["workers"] = args.workers
    return ScenarioConfig.from_dict(raw)


SUMMARY_FIELDS = ("n", "sigma2", "model", "parameter", "truth", "bias", "rmse",
                  "coverage", "mc_se", "used", "failure_rate")


def cmd_simulate(args) -> int:
    config = _scenario_config(args)
    summary = run_monte_carlo(config)
    out = _out_dir(args)
    rows = summary.rows()
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v)
                        for k, v in r.items()})
    sel = summary.selection_rows()
    fields = sorted({k for r in sel for k in r}, key=lambda k: (
        ["n", "sigma2", "tau", "censoring", "flagged"].index(k)
        if k in ("n", "sigma2", "tau", "censoring", "flagged") else 5, k))
    with open(out / "selection.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in sel:
            w.writerow(r)
    doc = {"schema_version": rpt.SIM_SCHEMA_VERSION, "config": config.to_dict(),
           "rows": [{k: rpt._num(v) if isinstance(v, float) else v for k, v in r.items()}
                    for r in rows],
           "cells": [{k: (rpt._num(v) if isinstance(v, float) else v) for k, v in r.items()}
                     for r in sel]}
    (out / "summary.json").write_text(rpt.dumps(doc), encoding="utf-8")
    lines = [f"{'n':>6}{'sigma2':>8}  {'model':<10}{'param':<8}{'truth':>9}{'bias':>10}"
             f"{'rmse':>10}{'cover':>8}{'used':>6}"]
    for r in rows:
        lines.append(f"{r['n']:>6}{r['sigma2']:>8g}  {r['model']:<10}{r['parameter']:<8}"
                     f"{r['truth']:>9.3f}{r['bias']:>10.4f}{r['rmse']:>10.4f}"
                     f"{r['coverage']:>8.3f}{r['used']:>6}")
    lines.append("")
    for c in summary.cells:
        flag = "  FLAGGED: failure rate above 5%" if c.flagged else ""
        sel_txt = " ".join(f"{k}={v:.3f}" for k, v in c.ic_selection.items())
        lines.append(f"n={c.n} sigma2={c.sigma2:g} tau={c.tau:.4g} "
                     f"censoring={c.censoring:.3f} select frailty: {sel_txt}{flag}")
        for model, groups in c.theta_contains_one.items():
            g_txt = " ".join(f"{g}={v:.3f}" for g, v in groups.items())
            lines.append(f"    theta CI contains 1 ({model}): {g_txt}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    if not args.quiet:
        sys.stdout.write(text)
    return 0


def _groups(ing, column):
    if column is None:
        return [("all", np.ones(len(ing.data), dtype=bool))]
    if column not in ing.table.header:
        raise CliError(f"unknown group column {column!r}")
    values = np.array(ing.table.column(column), dtype=object)
    return [(f"{column}={v}", values == v) for v in sorted(set(values.tolist()))]


def cmd_km(args) -> int:
    ing = _ingest(args)
    out = _out_dir(args)
    for label, mask in _groups(ing, args.group_by):
        km = kaplan_meier(ing.data.subset(mask))
        rpt.write_curve(out / f"km_{_safe_name(label)}.tsv",
                        np.concatenate([[0.0], km.knots]),
                        np.concatenate([[1.0], km.values]), header=("time", "survival"))
        if not args.quiet:
            print(f"{label}: {len(km)} knots, final value {km.final_value:.4f}")
    if args.fit_report:
        report = rpt.loads(Path(args.fit_report).read_text(encoding="utf-8"))
        with open(out / "overlay.tsv", "w", encoding="utf-8") as fh:
            fh.write("model\tprofile\ttime\tsurvival\n")
            for m in report.get("models", []):
                for p in m["profiles"]:
                    curve = p["survival_curve"]
                    for t, s in zip(curve["time"], curve["survival"]):
                        fh.write(f"{m['model']}\t{p['label']}\t{t!r}\t{s!r}\n")
    return 0


def cmd_hazard(args) -> int:
    ing = _ingest(args)
    out = _out_dir(args)
    for label, mask in _groups(ing, args.group_by):
        sub = ing.data.subset(mask)
        if sub.event.sum() == 0:
            print(f"{label}: no events, hazard curve skipped", file=sys.stderr)
            continue
        curve = kernel_hazard(sub, bandwidth=args.bandwidth)
        rpt.write_curve(out / f"hazard_{_safe_name(label)}.tsv", curve.times, curve.values,
                        header=("time", "hazard"))
        if not args.quiet:
            print(f"{label}: bandwidth {curve.bandwidth:.4g}, {curve.times.size} points")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddpvf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("data", help="delimited text file with a header row")
        p.add_argument("--schema", required=True, help="JSON ingest schema")
        p.add_argument("--delimiter", default=None, help="override the schema delimiter")

    def common(p):
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--quiet", action="store_true", help="do not echo tables")

    p = sub.add_parser("ingest", help="validate a dataset against a schema")
    data_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit models and write a report")
    data_args(p)
    common(p)
    p.add_argument("--model", default="dd-pvf",
                   help="comma list of " + ", ".join(MODELS) + ", or all")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON optimizer settings")
    p.add_argument("--confidence-level", type=_level, default=None)
    p.add_argument("--gamma-grid", type=_parse_grid, default=None,
                   help="comma-separated PVF indices for the profile likelihood")
    p.add_argument("--profile", action="store_true",
                   help="fit dd-pvf by profiling the index over the grid")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="re-export a saved fit report")
    p.add_argument("report")
    common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    common(p)
    p.add_argument("--config", default=None, help="JSON scenario config")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--profile", action="store_true", help="profile the PVF index")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("km", help="Kaplan-Meier curves per group")
    data_args(p)
    common(p)
    p.add_argument("--group-by", default=None)
    p.add_argument("--fit-report", default=None, help="report.json for a model overlay")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("hazard", help="kernel hazard curves per group")
    data_args(p)
    common(p)
    p.add_argument("--group-by", default=None)
    p.add_argument("--bandwidth", type=float, default=None)
    p.set_defaults(func=cmd_hazard)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return args.func(args)
    except (CliError, IngestError, ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
