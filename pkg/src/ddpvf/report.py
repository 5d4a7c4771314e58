"""Structured fit reports: building, JSON serialization and text tables."""

from __future__ import annotations

import json
import math

import numpy as np

from .estimation import FitResult, cure_fraction_at, theta_at
from .regression import SurvivalData, subject_model, SurvivalRecord

SCHEMA_VERSION = "ddpvf.fit/1"
SIM_SCHEMA_VERSION = "ddpvf.simulation/1"
MAX_PROFILES = 64
CURVE_POINTS = 100


def _num(v):
    """JSON-safe float: non-finite values become null."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def covariate_profiles(data: SurvivalData, limit: int = MAX_PROFILES) -> list[dict]:
    """Distinct (w, x, z) design rows, most frequent first."""
    full = np.hstack([data.W, data.X, data.Z])
    rows, counts = np.unique(full, axis=0, return_counts=True)
    order = np.lexsort((np.arange(len(counts)), -counts))[:limit]
    q, p = data.W.shape[1], data.X.shape[1]
    names = data.column_names or {}
    out = []
    for i in order:
        row = rows[i]
        w, x, z = row[:q], row[q:q + p], row[q + p:]
        label = _profile_label(w, x, z, names)
        out.append({"label": label, "count": int(counts[i]),
                    "w": w.tolist(), "x": x.tolist(), "z": z.tolist()})
    return out


def _profile_label(w, x, z, names) -> str:
    parts = {}
    for key, row in (("alpha", w), ("beta", x), ("cure", z)):
        labels = names.get(key) or [f"{key}{j}" for j in range(len(row))]
        for lab, v in zip(labels[1:], row[1:]):
            parts[lab] = v
    if not parts:
        return "all"
    return ",".join(f"{k}={v:g}" for k, v in parts.items())


def _estimate_dict(est) -> dict:
    return {"estimate": _num(est.estimate), "se": _num(est.se),
            "ci_low": _num(est.ci[0]), "ci_high": _num(est.ci[1]), "note": est.note}


def model_report(fit: FitResult, data: SurvivalData, profiles: list[dict]) -> dict:
    params = [
        {"name": name, "estimate": _num(v), "se": _num(se),
         "ci_low": _num(ci[0]), "ci_high": _num(ci[1])}
        for name, v, se, ci in zip(fit.names, fit.natural_vector(), fit.standard_errors,
                                   fit.confidence_intervals)
    ]
    t_max = float(data.time.max())
    grid = np.linspace(t_max / CURVE_POINTS, t_max, CURVE_POINTS)
    prof_out = []
    for prof in profiles:
        p0 = cure_fraction_at(fit, prof["z"])
        th = theta_at(fit, prof["z"])
        theta = _estimate_dict(th)
        theta["ci_contains_one"] = bool(th.contains(1.0))
        rec = SurvivalRecord(1.0, 0, tuple(prof["w"]), tuple(prof["x"]), tuple(prof["z"]))
        model = subject_model(rec, fit.estimates)
        surv = model.survival(grid)
        prof_out.append({
            "label": prof["label"], "count": prof["count"],
            "w": prof["w"], "x": prof["x"], "z": prof["z"],
            "p0": _estimate_dict(p0), "theta": theta,
            "survival_curve": {"time": [_num(t) for t in grid],
                               "survival": [_num(s) for s in np.atleast_1d(surv)]},
        })
    out = {
        "model": fit.model,
        "n": fit.n,
        "k": fit.k,
        "log_likelihood": _num(fit.log_likelihood),
        "criteria": {k: _num(v) for k, v in fit.criteria.as_dict().items()},
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "gradient_norm": _num(fit.gradient_norm),
        "covariance_degenerate": bool(fit.covariance_degenerate),
        "confidence_level": _num(fit.confidence_level),
        "parameters": params,
        "profiles": prof_out,
        "notes": list(fit.notes),
    }
    if fit.gamma_profile is not None:
        out["gamma_profile"] = [{"gamma": _num(g), "log_likelihood": _num(l)}
                                for g, l in fit.gamma_profile]
    return out


def build_report(fits: list[FitResult], data: SurvivalData, seed: int, source: dict) -> dict:
    profiles = covariate_profiles(data)
    models = [model_report(f, data, profiles) for f in fits]
    ranking = [m["model"] for m in sorted(models, key=lambda m: (
        m["criteria"]["aic"] if m["criteria"]["aic"] is not None else math.inf, m["k"]))]
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": int(seed),
        "data": {**source, "n": int(len(data)), "events": int(data.event.sum()),
                 "time_unit": data.time_unit,
                 "design_columns": {k: list(v) for k, v in (data.column_names or {}).items()}},
        "models": models,
        "ranking_by_aic": ranking,
    }


def dumps(report: dict) -> str:
    """Canonical JSON text; stable under load/dump round trips."""
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads(text: str) -> dict:
    report = json.loads(text)
    version = report.get("schema_version") if isinstance(report, dict) else None
    if version not in (SCHEMA_VERSION, SIM_SCHEMA_VERSION):
        raise ValueError(f"unsupported report schema version {version!r}")
    return report


def _fmt(v, width=11, digits=4):
    if v is None:
        return "-".rjust(width)
    return f"{v:{width}.{digits}f}"


def text_table(report: dict) -> str:
    """Human-readable tables: coefficients, criteria, and theta per profile."""
    lines = []
    level = None
    for m in report["models"]:
        level = m["confidence_level"]
        pct = f"{100 * level:g}% CI"
        lines.append(f"Model {m['model']}  (n={m['n']}, k={m['k']}, "
                     f"converged={'yes' if m['converged'] else 'no'})")
        lines.append(f"{'Parameter':<28}{'Estimate':>11}{'SE':>11}  {pct:^25}")
        for p in m["parameters"]:
            lines.append(f"{p['name']:<28}{_fmt(p['estimate'])}{_fmt(p['se'])}  "
                         f"({_fmt(p['ci_low'], 10)}, {_fmt(p['ci_high'], 10)})")
        lines.append("")
    lines.append(f"{'Model':<16}{'maxL':>12}{'AIC':>12}{'AICc':>12}{'BIC':>12}"
                 f"{'HQIC':>12}{'CAIC':>12}")
    for m in report["models"]:
        c = m["criteria"]
        lines.append(f"{m['model']:<16}{_fmt(m['log_likelihood'], 12, 2)}"
                     + "".join(_fmt(c[k], 12, 2) for k in ("aic", "aicc", "bic", "hqic", "caic")))
    lines.append("")
    lines.append(f"{'Model':<16}{'Profile':<40}{'theta':>9}{'low':>9}{'high':>9}  contains 1")
    for m in report["models"]:
        for p in m["profiles"]:
            t = p["theta"]
            lines.append(f"{m['model']:<16}{p['label'][:39]:<40}{_fmt(t['estimate'], 9, 3)}"
                         f"{_fmt(t['ci_low'], 9, 3)}{_fmt(t['ci_high'], 9, 3)}  "
                         f"{'Yes' if t['ci_contains_one'] else 'No'}")
    for m in report["models"]:
        if "gamma_profile" in m:
            lines.append("")
            lines.append(f"{m['model']} gamma profile")
            lines.append(f"{'gamma':>8}{'maxL':>14}")
            for row in m["gamma_profile"]:
                lines.append(f"{_fmt(row['gamma'], 8, 2)}{_fmt(row['log_likelihood'], 14, 3)}")
    lines.append("")
    lines.append("Ranking by AIC: " + " < ".join(report["ranking_by_aic"]))
    return "\n".join(lines) + "\n"


def write_curve(path, times, values, header=("time", "value")) -> None:
    """Two-column tab-separated file with a one-line header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{header[0]}\t{header[1]}\n")
        for t, v in zip(times, values):
            fh.write(f"{float(t)!r}\t{float(v)!r}\n")
