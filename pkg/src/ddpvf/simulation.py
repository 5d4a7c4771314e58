"""Synthetic cure-fraction data and the Monte Carlo study driver.

The generator follows the two-stage scheme of the simulation design: a
subject is cured with probability ``p0(x)`` (latent time infinite);
otherwise ``u1 ~ Uniform(0, 1 - p0)`` is drawn and the marginal survival is
inverted at ``1 - u1``.  When ``theta(x) = 1`` there is no cured mass and the
first uniform is inverted directly.  Censoring is ``Uniform(0, tau)`` with a
single ``tau`` calibrated to a target censoring share.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .distributions import FrailtySpec, Variant, susceptible_quantile
from .estimation import FitConfig, fit_mle, theta_at
from .regression import ModelParameters, SurvivalData, SurvivalRecord, subject_model

log = logging.getLogger(__name__)

THETA_ONE_TOL = 1e-12
CRITERIA = ("aic", "aicc", "bic", "hqic", "caic")
# failure share above which a cell is flagged
FAILURE_FLAG = 0.05


class InfeasibleCensoring(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """One Monte Carlo study over an (n, sigma2) grid with a binary covariate.

    ``frailty`` is the frailty family used both to generate the data and as
    the frailty model fitted next to the plain DD model.  A ``sigma2`` of 0
    generates without frailty.
    """

    scenario: str
    zeta: Sequence[float]
    eta: Sequence[float]
    nu: Sequence[float]
    covariate_prob: float
    sample_sizes: Sequence[int]
    sigma2_values: Sequence[float]
    replicates: int = 200
    target_censoring: float = 0.5
    seed: int = 20240101
    frailty: str = "gamma"
    gamma: float | None = None
    pilot_n: int = 50_000
    tau: float | None = None
    multistart: int = 1
    workers: int = 1
    profile: bool = False

    def __post_init__(self):
        for name in ("zeta", "eta", "nu", "sample_sizes", "sigma2_values"):
            value = getattr(self, name)
            if isinstance(value, (list, tuple, np.ndarray)):
                setattr(self, name, tuple(value))
        self.validate()

    def validate(self):
        def fail(path, msg):
            raise ConfigError(f"config.{path}: {msg}")

        if self.scenario not in ("one", "two", "custom"):
            fail("scenario", "must be 'one', 'two' or 'custom'")
        for name in ("zeta", "eta", "nu"):
            vec = list(getattr(self, name))
            if len(vec) != 2:
                fail(name, "needs an intercept and one binary-covariate coefficient")
            for i, v in enumerate(vec):
                if not np.isfinite(float(v)):
                    fail(f"{name}[{i}]", "must be finite")
        if not (0 < self.covariate_prob < 1):
            fail("covariate_prob", "must lie in (0, 1)")
        if not list(self.sample_sizes):
            fail("sample_sizes", "must not be empty")
        for i, n in enumerate(self.sample_sizes):
            if int(n) != n or n < 10:
                fail(f"sample_sizes[{i}]", "must be an integer >= 10")
        if not list(self.sigma2_values):
            fail("sigma2_values", "must not be empty")
        for i, s in enumerate(self.sigma2_values):
            if not (s >= 0 and np.isfinite(s)):
                fail(f"sigma2_values[{i}]", "must be >= 0")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            fail("replicates", "must be an integer >= 1")
        if not (0 < self.target_censoring < 1):
            fail("target_censoring", "must lie in (0, 1)")
        try:
            variant = Variant(self.frailty)
        except ValueError:
            fail("frailty", f"unknown frailty {self.frailty!r}")
        if variant is Variant.NONE:
            fail("frailty", "the compared frailty model cannot be 'none'")
        if variant is Variant.PVF and not (self.gamma is not None and 0 < self.gamma < 1):
            fail("gamma", "PVF frailty needs an index in (0, 1)")
        if variant is not Variant.PVF and self.gamma is not None:
            fail("gamma", f"{variant.value} frailty takes no index")
        if self.tau is not None and not self.tau > 0:
            fail("tau", "must be positive")
        if self.pilot_n < 100:
            fail("pilot_n", "must be >= 100")
        if self.multistart < 1 or self.workers < 1:
            fail("multistart", "multistart and workers must be >= 1")
        if self.profile and variant is not Variant.PVF:
            fail("profile", "profile likelihood applies to the PVF model only")

    @property
    def variant(self) -> Variant:
        return Variant(self.frailty)

    def frailty_spec(self, sigma2: float) -> FrailtySpec:
        if sigma2 == 0:
            return FrailtySpec.none()
        if self.variant is Variant.PVF:
            return FrailtySpec.pvf(self.gamma, sigma2)
        return FrailtySpec(self.variant, sigma2=sigma2)

    def true_params(self, sigma2: float) -> ModelParameters:
        return ModelParameters(self.zeta, self.eta, self.nu, self.frailty_spec(sigma2))

    def cells(self) -> list[tuple[int, float]]:
        return [(int(n), float(s)) for s in self.sigma2_values for n in self.sample_sizes]

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("zeta", "eta", "nu", "sample_sizes", "sigma2_values"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config: expected a key-value mapping")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"config.{unknown[0]}: unknown key")
        base = {}
        preset = raw.get("scenario")
        if preset in PRESETS:
            base = PRESETS[preset]().to_dict()
        base.update(raw)
        missing = [k for k in ("scenario", "zeta", "eta", "nu", "covariate_prob",
                               "sample_sizes", "sigma2_values") if k not in base]
        if missing:
            raise ConfigError(f"config.{missing[0]}: required")
        try:
            return cls(**base)
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from None


def scenario_one(**overrides) -> ScenarioConfig:
    """Maternal-population design: Bernoulli(0.5) covariate, Gamma frailty."""
    cfg = dict(
        scenario="one", zeta=(0.7, -0.16), eta=(7.3, -1.4), nu=(-0.6, -1.5),
        covariate_prob=0.5, sample_sizes=(500, 2000, 5000),
        sigma2_values=(0.0, 0.5, 1.0), replicates=200, target_censoring=0.3,
        frailty="gamma",
    )
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


def scenario_two(**overrides) -> ScenarioConfig:
    """Skin-neoplasm design: Bernoulli(0.1) covariate, PVF frailty with index 0.73;
    the covariate-1 group has no cure fraction."""
    cfg = dict(
        scenario="two", zeta=(0.45, 0.64), eta=(8.0, -1.5), nu=(1.5, -5.0),
        covariate_prob=0.1, sample_sizes=(500, 2000, 5000),
        sigma2_values=(5.0, 11.0), replicates=200, target_censoring=0.8,
        frailty="pvf", gamma=0.73,
    )
    cfg.update(overrides)
    return ScenarioConfig(**cfg)


PRESETS = {"one": scenario_one, "two": scenario_two}


# ---------------------------------------------------------------------------
# data generation


def _group_models(params: ModelParameters):
    out = {}
    for v in (0.0, 1.0):
        row = (1.0, v)
        out[v] = subject_model(SurvivalRecord(1.0, 0, row, row, row), params)
    return out


def population_cure(params: ModelParameters, covariate_prob: float) -> float:
    models = _group_models(params)
    return ((1 - covariate_prob) * models[0.0].cure_fraction()
            + covariate_prob * models[1.0].cure_fraction())


@dataclass
class LatentSample:
    x: np.ndarray
    latent: np.ndarray  # np.inf for cured subjects

    @property
    def cured_share(self) -> float:
        return float(np.mean(np.isinf(self.latent)))


def generate_latent(params: ModelParameters, covariate_prob: float, n: int,
                    rng: np.random.Generator) -> LatentSample:
    """Covariates and latent event times (steps before censoring)."""
    x = (rng.random(n) < covariate_prob).astype(float)
    u = rng.random(n)
    u1 = rng.random(n)
    latent = np.empty(n)
    for v, model in _group_models(params).items():
        idx = np.flatnonzero(x == v)
        if idx.size == 0:
            continue
        theta = model.dagum.theta
        if abs(theta - 1.0) < THETA_ONE_TOL:
            # proper branch: no cured mass, invert the first uniform
            latent[idx] = susceptible_quantile(np.maximum(u[idx], 1e-300), model)
            continue
        p0 = model.cure_fraction()
        cured = u[idx] < p0
        latent[idx[cured]] = np.inf
        sus = idx[~cured]
        if sus.size:
            draw = np.maximum(u1[sus] * (1.0 - p0), 1e-300)
            latent[sus] = susceptible_quantile(draw, model)
    return LatentSample(x, latent)


def censor(sample: LatentSample, tau: float, unit_draws: np.ndarray) -> SurvivalData:
    """Apply ``c = tau * v`` censoring, ``v`` uniform on (0, 1)."""
    c = tau * unit_draws
    c = np.where(c > 0, c, np.nextafter(0.0, 1.0))
    time = np.minimum(sample.latent, c)
    event = (sample.latent <= c).astype(float)
    design = np.column_stack([np.ones_like(sample.x), sample.x])
    return SurvivalData(time, event, design, design.copy(), design.copy())


def generate_dataset(params: ModelParameters, covariate_prob: float, n: int, tau: float,
                     rng: np.random.Generator) -> SurvivalData:
    sample = generate_latent(params, covariate_prob, n, rng)
    return censor(sample, tau, rng.random(n))


def calibrate_tau(params: ModelParameters, covariate_prob: float, target: float,
                  pilot_n: int = 50_000, rng: np.random.Generator | None = None,
                  tol: float = 0.005, max_iter: int = 200) -> float:
    """Censoring bound giving censoring share ``target`` on a pilot sample.

    The pilot latent times and unit censoring draws are fixed, so the
    censoring share is monotone in ``tau`` and bisection is deterministic.
    """
    if not (0 < target < 1):
        raise ValueError("target censoring must lie in (0, 1)")
    cure = population_cure(params, covariate_prob)
    if target < cure:
        raise InfeasibleCensoring(
            f"target censoring {target:.3f} below the cured share {cure:.3f}")
    rng = rng if rng is not None else np.random.default_rng(0)
    sample = generate_latent(params, covariate_prob, pilot_n, rng)
    v = rng.random(pilot_n)
    finite = sample.latent[np.isfinite(sample.latent)]
    if finite.size == 0:
        raise InfeasibleCensoring("pilot sample has no susceptible subjects")

    def share(tau):
        return float(np.mean(~(sample.latent <= tau * v)))

    lo = hi = float(np.median(finite))
    while share(lo) < target:
        lo *= 0.5
        if lo < 1e-300:
            raise InfeasibleCensoring("cannot reach the target censoring share")
    while share(hi) > target:
        hi *= 2.0
        if hi > 1e300:
            raise InfeasibleCensoring(
                f"target censoring {target:.3f} not reachable; pilot cured share "
                f"{sample.cured_share:.3f}")
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi)
        s = share(mid)
        if abs(s - target) < tol:
            return float(mid)
        if s > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


# ---------------------------------------------------------------------------
# Monte Carlo


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, keys); independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


PILOT_KEY = 2 ** 31 - 1


@dataclass
class ReplicateResult:
    replicate: int
    censoring: float
    fits: dict  # model -> dict(estimates, ci, converged, loglik, criteria, theta_ci)
    errors: dict = field(default_factory=dict)


def _model_record(fit, z_rows):
    theta_ci = {}
    for label, z in z_rows.items():
        try:
            est = theta_at(fit, z)
            theta_ci[label] = (est.estimate, est.ci[0], est.ci[1])
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            theta_ci[label] = (np.nan, np.nan, np.nan)
            log.debug("theta interval failed: %s", exc)
    return {
        "names": list(fit.names),
        "estimates": fit.natural_vector(),
        "ci": np.asarray(fit.confidence_intervals),
        "converged": bool(fit.converged),
        "loglik": fit.log_likelihood,
        "criteria": fit.criteria.as_dict(),
        "theta_ci": theta_ci,
    }


def run_replicate(config: ScenarioConfig, cell_index: int, replicate: int,
                  tau: float) -> ReplicateResult:
    n, sigma2 = config.cells()[cell_index]
    params = config.true_params(sigma2)
    rng = substream(config.seed, cell_index, replicate)
    data = generate_dataset(params, config.covariate_prob, n, tau, rng)
    fit_cfg = FitConfig(multistart_count=config.multistart,
                        seed=int(rng.integers(2 ** 31)))
    z_rows = {"x0": (1.0, 0.0), "x1": (1.0, 1.0)}
    fits, errors = {}, {}
    dd = None
    try:
        dd = fit_mle(data, Variant.NONE, fit_cfg, init=None)
        fits["dd"] = _model_record(dd, z_rows)
    except Exception as exc:  # noqa: BLE001
        errors["dd"] = repr(exc)
    name = {Variant.GAMMA: "dd-gamma", Variant.INVERSE_GAUSSIAN: "dd-ig",
            Variant.PVF: "dd-pvf"}[config.variant]
    try:
        from .estimation import profile_fit_gamma
        init = dd.estimates if dd is not None else None
        if config.profile:
            fit = profile_fit_gamma(data, fit_cfg, init=init)
        else:
            fit = fit_mle(data, config.variant, fit_cfg, init=init)
        fits[name] = _model_record(fit, z_rows)
    except Exception as exc:  # noqa: BLE001
        errors[name] = repr(exc)
    return ReplicateResult(replicate, float(1.0 - data.event.mean()), fits, errors)


def _run_one(args):
    return run_replicate(*args)


@dataclass
class ParamSummary:
    truth: float
    bias: float
    rmse: float
    coverage: float
    mc_se: float
    used: int

    @property
    def mse(self) -> float:
        return self.rmse ** 2


@dataclass
class CellSummary:
    n: int
    sigma2: float
    tau: float
    censoring: float
    replicates: int
    params: dict  # model -> name -> ParamSummary
    failure_rate: dict  # model -> share of replicates excluded
    theta_contains_one: dict  # model -> subgroup -> share
    ic_selection: dict  # criterion -> share preferring the frailty model
    flagged: bool = False


@dataclass
class MonteCarloSummary:
    config: ScenarioConfig
    cells: list

    def cell(self, n: int, sigma2: float) -> CellSummary:
        for c in self.cells:
            if c.n == n and c.sigma2 == sigma2:
                return c
        raise KeyError((n, sigma2))

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            for model, params in c.params.items():
                for name, s in params.items():
                    out.append({
                        "n": c.n, "sigma2": c.sigma2, "model": model, "parameter": name,
                        "truth": s.truth, "bias": s.bias, "rmse": s.rmse,
                        "coverage": s.coverage, "mc_se": s.mc_se, "used": s.used,
                        "failure_rate": c.failure_rate.get(model, np.nan),
                    })
        return out

    def selection_rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            row = {"n": c.n, "sigma2": c.sigma2, "tau": c.tau, "censoring": c.censoring,
                   "flagged": c.flagged}
            row.update({f"select_{k}": v for k, v in c.ic_selection.items()})
            for model, groups in c.theta_contains_one.items():
                for g, v in groups.items():
                    row[f"theta_contains_one_{model}_{g}"] = v
            out.append(row)
        return out


def coverage_probability(intervals, truth: float) -> float:
    """Share of ``(low, high)`` intervals containing ``truth``."""
    intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if intervals.shape[0] == 0:
        raise ValueError("need at least one interval")
    return float(np.mean((intervals[:, 0] <= truth) & (truth <= intervals[:, 1])))


def _truth_vector(config: ScenarioConfig, sigma2: float, names: list) -> dict:
    truth = {}
    for prefix, vec in (("zeta", config.zeta), ("eta", config.eta), ("nu", config.nu)):
        for i, v in enumerate(vec):
            truth[f"{prefix}{i}"] = float(v)
    truth["sigma2"] = float(sigma2)
    if config.gamma is not None:
        truth["gamma"] = float(config.gamma)
    return {k: truth[k] for k in names if k in truth}


def summarize_cell(config: ScenarioConfig, cell_index: int, tau: float,
                   results: Sequence[ReplicateResult]) -> CellSummary:
    n, sigma2 = config.cells()[cell_index]
    results = sorted(results, key=lambda r: r.replicate)
    models = sorted({m for r in results for m in r.fits} | {m for r in results for m in r.errors})
    params, failure, contains = {}, {}, {}
    for model in models:
        ok = [r.fits[model] for r in results if model in r.fits and r.fits[model]["converged"]]
        failure[model] = 1.0 - len(ok) / len(results)
        if not ok:
            continue
        names = ok[0]["names"]
        truth = _truth_vector(config, sigma2, names)
        est = np.array([rec["estimates"] for rec in ok])
        ci = np.array([rec["ci"] for rec in ok])
        per = {}
        for j, name in enumerate(names):
            if name not in truth:
                continue
            err = est[:, j] - truth[name]
            per[name] = ParamSummary(
                truth=truth[name],
                bias=float(err.mean()),
                rmse=float(np.sqrt(np.mean(err ** 2))),
                coverage=coverage_probability(ci[:, j], truth[name]),
                mc_se=float(est[:, j].std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else np.nan,
                used=len(ok),
            )
        params[model] = per
        contains[model] = {}
        for g in ("x0", "x1"):
            vals = np.array([rec["theta_ci"][g] for rec in ok])
            valid = np.isfinite(vals[:, 1]) & np.isfinite(vals[:, 2])
            contains[model][g] = (float(np.mean((vals[valid, 1] <= 1.0) & (1.0 <= vals[valid, 2])))
                                  if valid.any() else np.nan)
    selection = {}
    frailty_models = [m for m in models if m != "dd"]
    if "dd" in models and frailty_models:
        fm = frailty_models[0]
        both = [r for r in results if "dd" in r.fits and fm in r.fits
                and r.fits["dd"]["converged"] and r.fits[fm]["converged"]]
        for crit in CRITERIA:
            picks = [r.fits[fm]["criteria"][crit] < r.fits["dd"]["criteria"][crit]
                     for r in both if r.fits[fm]["criteria"][crit] is not None]
            selection[crit] = float(np.mean(picks)) if picks else np.nan
    censoring = float(np.mean([r.censoring for r in results]))
    flagged = any(v > FAILURE_FLAG for v in failure.values())
    return CellSummary(n, sigma2, tau, censoring, len(results), params, failure,
                       contains, selection, flagged)


def cell_tau(config: ScenarioConfig, cell_index: int) -> float:
    if config.tau is not None:
        return float(config.tau)
    _, sigma2 = config.cells()[cell_index]
    rng = substream(config.seed, cell_index, PILOT_KEY)
    return calibrate_tau(config.true_params(sigma2), config.covariate_prob,
                         config.target_censoring, config.pilot_n, rng)


def run_monte_carlo(config: ScenarioConfig, workers: int | None = None,
                    cells: Sequence[int] | None = None, progress=None) -> MonteCarloSummary:
    """Generate, fit and summarize every replicate of every (n, sigma2) cell.

    Replicates run in a process pool when ``workers > 1``; each replicate
    draws from its own substream so results do not depend on scheduling.
    """
    workers = config.workers if workers is None else workers
    indices = range(len(config.cells())) if cells is None else cells
    summaries = []
    for ci in indices:
        tau = cell_tau(config, ci)
        tasks = [(config, ci, r, tau) for r in range(config.replicates)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_one, tasks, chunksize=4))
        else:
            results = []
            for t in tasks:
                results.append(_run_one(t))
                if progress is not None:
                    progress(ci, len(results))
        summaries.append(summarize_cell(config, ci, tau, results))
        log.info("cell n=%d sigma2=%g done", *config.cells()[ci])
    return MonteCarloSummary(config, summaries)
