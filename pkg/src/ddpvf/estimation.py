"""Maximum likelihood for the DD-PVF regression model and its special cases.

The optimizer works on an unconstrained vector (regression coefficients,
``logit(gamma)``, ``log(sigma2)``) and minimizes the negative mean
log-likelihood with BFGS and finite-difference gradients.  Standard errors
come from a central-difference Hessian at the optimum, mapped to the
natural scale by the delta method.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from . import _backend
from .distributions import DomainError, FrailtySpec, Variant, _log_expit, theta_from_log_cure
from .nonparametric import kaplan_meier_arrays
from .regression import (
    ModelParameters,
    ParameterLayout,
    SurvivalData,
    as_data,
    expit,
    natural_jacobian,
    pack_parameters,
    unpack_parameters,
)

log = logging.getLogger(__name__)

# returned instead of a non-finite log-likelihood
LOGLIK_SENTINEL = -1e300
MAX_RESTARTS = 3
GAMMA_STARTS = (0.25, 0.75)


class NonConvergence(RuntimeError):
    pass


class SingularInformation(UserWarning):
    """Observed information not invertible; a pseudo-inverse was used."""


class DegenerateData(ValueError):
    pass


MODEL_NAMES = {
    Variant.NONE: "dd",
    Variant.GAMMA: "dd-gamma",
    Variant.INVERSE_GAUSSIAN: "dd-ig",
    Variant.PVF: "dd-pvf",
}


@dataclass
class FitConfig:
    """Optimizer and reporting settings.

    ``gradient_tolerance`` applies to the gradient of the mean per-subject
    log-likelihood on the optimizer scale.
    """

    max_iterations: int = 500
    gradient_tolerance: float = 1e-4
    multistart_count: int = 3
    multistart_scale: float = 0.25
    gamma_grid: Sequence[float] = tuple(np.round(np.arange(0.05, 0.96, 0.05), 2))
    hessian_step_scale: float = 1e-4
    hessian_min_step: float = 1e-5
    confidence_level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.multistart_count < 1:
            raise ValueError("max_iterations and multistart_count must be positive")
        if not (self.gradient_tolerance > 0 and self.hessian_step_scale > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.confidence_level < 1):
            raise ValueError("confidence_level must lie in (0, 1)")
        grid = np.asarray(self.gamma_grid, dtype=float)
        if grid.size and (np.any(grid <= 0) or np.any(grid >= 1) or np.any(np.diff(grid) <= 0)):
            raise ValueError("gamma_grid must be strictly increasing inside (0, 1)")
        self.gamma_grid = tuple(float(g) for g in grid)


@dataclass(frozen=True)
class Criteria:
    aic: float
    aicc: float | None
    bic: float
    hqic: float
    caic: float

    def as_dict(self) -> dict:
        return {"aic": self.aic, "aicc": self.aicc, "bic": self.bic,
                "hqic": self.hqic, "caic": self.caic}


def information_criteria(loglik: float, k: int, n: int) -> Criteria:
    """AIC, AICc, BIC, HQIC and CAIC; AICc is ``None`` when ``n <= k + 1``."""
    if n < 1 or k < 0:
        raise DomainError("need n >= 1 and k >= 0")
    dev = -2.0 * loglik
    aic = dev + 2 * k
    aicc = aic + 2.0 * k * (k + 1) / (n - k - 1) if n > k + 1 else None
    log_n = np.log(n)
    bic = dev + k * log_n
    hqic = dev + 2 * k * np.log(log_n) if k else dev
    caic = dev + k * (log_n + 1.0)
    return Criteria(float(aic), None if aicc is None else float(aicc),
                    float(bic), float(hqic), float(caic))


@dataclass
class FitResult:
    model: str
    estimates: ModelParameters
    names: list
    covariance: np.ndarray
    standard_errors: np.ndarray
    confidence_intervals: np.ndarray
    log_likelihood: float
    criteria: Criteria
    converged: bool
    iterations: int
    n: int
    k: int
    layout: ParameterLayout
    packed: np.ndarray
    packed_covariance: np.ndarray
    gradient_norm: float = np.nan
    covariance_degenerate: bool = False
    confidence_level: float = 0.95
    gamma_profile: list | None = None
    notes: list = field(default_factory=list)

    def natural_vector(self) -> np.ndarray:
        return self.estimates.natural_vector(self.layout.free_gamma)

    def coefficient_table(self) -> list[dict]:
        rows = []
        for name, est, se, (lo, hi) in zip(self.names, self.natural_vector(),
                                           self.standard_errors, self.confidence_intervals):
            rows.append({"parameter": name, "estimate": float(est), "se": float(se),
                         "ci_low": float(lo), "ci_high": float(hi)})
        return rows


# ---------------------------------------------------------------------------
# likelihood


class Likelihood:
    """Log-likelihood of one dataset, evaluated from packed parameter vectors.

    Subjects are stored sorted by covariate pattern so the compiled kernel can
    reuse per-pattern work.
    """

    def __init__(self, data: SurvivalData, layout: ParameterLayout):
        if data.shape != (layout.q, layout.p, layout.r):
            raise DomainError(f"design shape {data.shape} does not match layout")
        order = np.lexsort(np.hstack([data.W, data.X, data.Z]).T[::-1])
        self.order = order
        self.time = data.time[order]
        self.log_time = np.log(self.time)
        self.event = data.event[order]
        self.W = np.ascontiguousarray(data.W[order])
        self.X = np.ascontiguousarray(data.X[order])
        self.Z = np.ascontiguousarray(data.Z[order])
        self.layout = layout
        self.n = len(self.time)
        self.evaluations = 0

    def _args(self, params: ModelParameters):
        code, gamma, sigma2 = params.frailty.kernel_args()
        return (self.time, self.event, self.W @ params.zeta, self.X @ params.eta,
                self.Z @ params.nu, code, gamma, sigma2)

    def params(self, vector) -> ModelParameters:
        return unpack_parameters(vector, self.layout)

    def __call__(self, vector) -> float:
        self.evaluations += 1
        try:
            params = unpack_parameters(vector, self.layout)
        except (DomainError, ValueError):
            return LOGLIK_SENTINEL
        value = _backend.loglik_sum(*self._args(params), log_time=self.log_time)
        if not np.isfinite(value):
            return LOGLIK_SENTINEL
        return value

    def terms(self, params: ModelParameters) -> np.ndarray:
        out = np.empty(self.n)
        out[self.order] = _backend.loglik_terms(*self._args(params), log_time=self.log_time)
        return out


def log_likelihood(params: ModelParameters, data) -> float:
    """Censored-data log-likelihood; the sentinel replaces non-finite values."""
    data = as_data(data)
    lik = Likelihood(data, ParameterLayout.for_params(params))
    return lik(pack_parameters(params, lik.layout))


# ---------------------------------------------------------------------------
# numerical derivatives


def _steps(x, scale, floor):
    return np.maximum(floor, scale * np.abs(x))


def central_gradient(f: Callable, x, scale=1e-6, floor=1e-7) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = _steps(x, scale, floor)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h[j])
    return g


def central_hessian(f: Callable, x, scale=1e-4, floor=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k = x.size
    h = _steps(x, scale, floor)
    f0 = f(x)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej))
            H[i, j] = H[j, i] = v / (4.0 * h[i] * h[j])
    return H


# ---------------------------------------------------------------------------
# fitting


def _check_data(data: SurvivalData, k: int):
    if len(data) < k:
        raise DegenerateData(f"{len(data)} subjects for {k} parameters")
    if not np.any(data.event > 0):
        raise DegenerateData("no events in the sample")


def default_start(data: SurvivalData) -> ModelParameters:
    """No-frailty starting point: KM plateau for the cure intercept and a
    Dagum scale matching the median event time with unit shape."""
    q, p, r = data.shape
    _, surv = kaplan_meier_arrays(data.time, data.event)
    plateau = float(np.clip(surv[-1] if surv.size else 0.5, 0.01, 0.99))
    theta = 1.0 - plateau
    t_med = float(np.median(data.time[data.event > 0]))
    zeta = np.zeros(q)
    eta = np.zeros(p)
    eta[0] = np.log(t_med) - np.log(theta)
    nu = np.zeros(r)
    nu[0] = np.log(plateau) - np.log1p(-plateau)
    return ModelParameters(zeta, eta, nu, FrailtySpec.none())


def _frailty_start(variant: Variant, gamma=None) -> FrailtySpec:
    if variant is Variant.NONE:
        return FrailtySpec.none()
    if variant is Variant.PVF:
        return FrailtySpec.pvf(0.5 if gamma is None else gamma, 0.5)
    return FrailtySpec(variant, sigma2=0.5)


def _run_bfgs(lik: Likelihood, x0, config: FitConfig):
    n = lik.n

    def objective(v):
        return -lik(v) / n

    def gradient(v):
        return central_gradient(objective, v)

    res = optimize.minimize(
        objective, x0, jac=gradient, method="BFGS",
        options={"maxiter": config.max_iterations,
                 "gtol": config.gradient_tolerance * 0.1},
    )
    # BFGS can stall on precision loss near a flat boundary (sigma2 -> 0);
    # restarting resets the inverse-Hessian approximation.
    nit = res.nit
    for _ in range(MAX_RESTARTS):
        if not np.isfinite(res.fun) or np.linalg.norm(gradient(res.x)) < config.gradient_tolerance:
            break
        again = optimize.minimize(
            objective, res.x, jac=gradient, method="BFGS",
            options={"maxiter": config.max_iterations,
                     "gtol": config.gradient_tolerance * 0.1},
        )
        nit += again.nit
        if not again.fun <= res.fun:
            break
        res = again
    res.nit = nit
    return res


def _covariance(lik: Likelihood, x_hat, config: FitConfig):
    H = central_hessian(lambda v: -lik(v), x_hat, config.hessian_step_scale,
                        config.hessian_min_step)
    degenerate = False
    try:
        if not np.all(np.isfinite(H)):
            raise np.linalg.LinAlgError("non-finite Hessian")
        np.linalg.cholesky(H)
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        # A flat direction (e.g. a cure coefficient drifting to -inf) shows up
        # as a tiny eigenvalue of either sign.  Inverting |eigenvalue| keeps a
        # large variance there; a plain pseudo-inverse would report zero.
        degenerate = True
        H = np.where(np.isfinite(H), H, 0.0)
        lam, V = np.linalg.eigh(0.5 * (H + H.T))
        floor = max(np.abs(lam).max(), 1.0) * 1e-12
        cov = (V / np.maximum(np.abs(lam), floor)) @ V.T
        warnings.warn("observed information is not positive definite; "
                      "inverting absolute eigenvalues", SingularInformation, stacklevel=3)
    return 0.5 * (cov + cov.T), degenerate


def _intervals(x_hat, packed_cov, layout: ParameterLayout, level: float):
    z = stats.norm.ppf(0.5 + level / 2.0)
    se_packed = np.sqrt(np.clip(np.diag(packed_cov), 0.0, None))
    natural = unpack_parameters(x_hat, layout).natural_vector(layout.free_gamma)
    J = natural_jacobian(x_hat, layout)
    cov = J @ packed_cov @ J.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ci = np.column_stack([natural - z * se, natural + z * se])
    i = layout.q + layout.p + layout.r
    if layout.free_gamma:
        ci[i] = expit(x_hat[i] + np.array([-z, z]) * se_packed[i])
    if layout.has_sigma2:
        with np.errstate(over="ignore"):
            ci[-1] = np.exp(x_hat[-1] + np.array([-z, z]) * se_packed[-1])
    return cov, se, ci


def _finish(lik: Likelihood, x_hat, iterations, config: FitConfig, extra_k=0,
            notes=None) -> FitResult:
    layout = lik.layout
    loglik = lik(x_hat)
    grad = central_gradient(lambda v: lik(v) / lik.n, x_hat)
    gnorm = float(np.linalg.norm(grad))
    packed_cov, degenerate = _covariance(lik, x_hat, config)
    cov, se, ci = _intervals(x_hat, packed_cov, layout, config.confidence_level)
    params = unpack_parameters(x_hat, layout)
    k = layout.size + extra_k
    return FitResult(
        model=MODEL_NAMES[layout.variant],
        estimates=params,
        names=params.names(layout.free_gamma),
        covariance=cov,
        standard_errors=se,
        confidence_intervals=ci,
        log_likelihood=float(loglik),
        criteria=information_criteria(loglik, k, lik.n),
        converged=bool(gnorm < config.gradient_tolerance and loglik > LOGLIK_SENTINEL),
        iterations=int(iterations),
        n=lik.n,
        k=k,
        layout=layout,
        packed=np.asarray(x_hat, dtype=float),
        packed_covariance=packed_cov,
        gradient_norm=gnorm,
        covariance_degenerate=degenerate,
        confidence_level=config.confidence_level,
        notes=list(notes or []),
    )


def _optimize(lik: Likelihood, x0, config: FitConfig):
    """Best of ``multistart_count`` BFGS runs; the first starts at ``x0``.

    With a free PVF index the extra starts also move the index to the
    values in ``GAMMA_STARTS``: the likelihood is often bimodal in it.
    """
    rng = np.random.default_rng(config.seed)
    layout = lik.layout
    starts = [np.asarray(x0, dtype=float)]
    for k in range(config.multistart_count - 1):
        noise = rng.normal(0.0, config.multistart_scale, size=starts[0].size)
        x = starts[0] + noise
        if layout.free_gamma:
            i = layout.q + layout.p + layout.r
            g = GAMMA_STARTS[k % len(GAMMA_STARTS)]
            x[i] = np.log(g) - np.log1p(-g) + noise[i]
        starts.append(x)
    best = None
    total_iter = 0
    for idx, x in enumerate(starts):
        res = _run_bfgs(lik, x, config)
        total_iter += res.nit
        key = (res.fun, idx)
        if np.isfinite(res.fun) and (best is None or key < best[0]):
            best = (key, res)
    if best is None:
        raise NonConvergence("every start ended at a non-finite likelihood")
    return best[1], total_iter


def fit_mle(data, variant: Variant | str | FrailtySpec = Variant.PVF,
            config: FitConfig | None = None, init: ModelParameters | None = None,
            fixed_gamma: float | None = None, strict: bool = False) -> FitResult:
    """Maximum likelihood fit of the DD model with the requested frailty.

    Without ``init`` the frailty fits are warm-started from a no-frailty fit.
    ``fixed_gamma`` pins the PVF index (used by the profile likelihood).
    With ``strict=True`` a non-converged fit raises :class:`NonConvergence`.
    """
    data = as_data(data)
    config = config or FitConfig()
    if isinstance(variant, FrailtySpec):
        variant = variant.variant
    variant = Variant(variant)
    if fixed_gamma is not None and variant is not Variant.PVF:
        raise ValueError("fixed_gamma only applies to the PVF variant")

    if init is None:
        _check_data(data, 0)
        init = default_start(data)
        if variant is not Variant.NONE:
            dd = fit_mle(data, Variant.NONE, config, init=init)
            init = dd.estimates
    if init.frailty.variant is not variant:
        init = init.with_frailty(_frailty_start(variant, fixed_gamma))
    elif fixed_gamma is not None and init.frailty.gamma != fixed_gamma:
        init = init.with_frailty(FrailtySpec.pvf(fixed_gamma, init.frailty.sigma2))

    layout = ParameterLayout.for_params(init, fix_gamma=fixed_gamma is not None)
    _check_data(data, layout.size)
    lik = Likelihood(data, layout)
    res, iterations = _optimize(lik, pack_parameters(init, layout), config)
    fit = _finish(lik, res.x, iterations, config, extra_k=int(fixed_gamma is not None))
    log.debug("%s fit: loglik=%.4f converged=%s evals=%d", fit.model,
              fit.log_likelihood, fit.converged, lik.evaluations)
    if strict and not fit.converged:
        raise NonConvergence(f"{fit.model}: gradient norm {fit.gradient_norm:.3g}")
    return fit


def profile_fit_gamma(data, config: FitConfig | None = None,
                      init: ModelParameters | None = None) -> FitResult:
    """Profile likelihood over the PVF index on ``config.gamma_grid``.

    Each grid point maximizes over the remaining parameters, warm-started
    from the previous point.  The selected index maximizes the profile;
    ties go to the smaller index.  Failed grid points are recorded in the
    notes and skipped.
    """
    data = as_data(data)
    config = config or FitConfig()
    if not config.gamma_grid:
        raise ValueError("empty gamma grid")
    if init is None:
        init = fit_mle(data, Variant.NONE, config, init=default_start(data)).estimates
    profile = []
    notes = []
    best = None
    start = init
    for g in config.gamma_grid:
        try:
            fit = fit_mle(data, Variant.PVF, config, init=start, fixed_gamma=g)
        except (NonConvergence, DegenerateData, np.linalg.LinAlgError) as exc:
            notes.append(f"gamma={g}: {exc}")
            profile.append((g, float("nan")))
            continue
        profile.append((g, fit.log_likelihood))
        if not fit.converged:
            notes.append(f"gamma={g}: not converged (gradient norm {fit.gradient_norm:.3g})")
        start = fit.estimates
        if best is None or fit.log_likelihood > best.log_likelihood:
            best = fit
    if best is None:
        raise NonConvergence("no grid point could be fitted")
    best.gamma_profile = profile
    best.notes.extend(notes)
    best.model = "dd-pvf-profile"
    return best


# ---------------------------------------------------------------------------
# derived quantities


@dataclass(frozen=True)
class TransformEstimate:
    estimate: float
    se: float
    ci: tuple
    note: str = ""

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


def params_from_natural(vector, layout: ParameterLayout) -> ModelParameters:
    vector = np.asarray(vector, dtype=float)
    packed = vector.copy()
    i = layout.q + layout.p + layout.r
    if layout.free_gamma:
        g = vector[i]
        packed[i] = np.log(g) - np.log1p(-g)
    if layout.has_sigma2:
        packed[-1] = np.log(vector[-1])
    return unpack_parameters(packed, layout)


def delta_method_transform(fit: FitResult, transform: Callable[[ModelParameters], float],
                           level: float | None = None, step: float = 1e-6) -> TransformEstimate:
    """Estimate, delta-method standard error and Wald interval of a smooth
    function of the parameters, with a central-difference gradient."""
    layout = fit.layout
    x = fit.natural_vector()

    def f(v):
        return float(transform(params_from_natural(v, layout)))

    est = float(transform(fit.estimates))
    g = central_gradient(f, x, scale=step, floor=step)
    var = float(g @ fit.covariance @ g)
    se = float(np.sqrt(max(var, 0.0)))
    level = fit.confidence_level if level is None else level
    z = stats.norm.ppf(0.5 + level / 2.0)
    note = "covariance flagged degenerate" if fit.covariance_degenerate else ""
    return TransformEstimate(est, se, (est - z * se, est + z * se), note)


def _cure_of(params: ModelParameters, z) -> float:
    return float(expit(np.asarray(z, dtype=float) @ params.nu))


def _theta_of(params: ModelParameters, z) -> float:
    from .regression import SurvivalRecord, subject_model
    q, p, _ = params.shape
    rec = SurvivalRecord(1.0, 0, (1.0,) + (0.0,) * (q - 1), (1.0,) + (0.0,) * (p - 1), tuple(z))
    return subject_model(rec, params).dagum.theta


def _neg_log1m_theta(params: ModelParameters, z) -> float:
    """-log(1 - theta), finite and smooth where theta rounds to 1."""
    code, gamma, sigma2 = params.frailty.kernel_args()
    lin = float(np.asarray(z, dtype=float) @ params.nu)
    return float(theta_from_log_cure(_log_expit(lin), code, gamma, sigma2))


def cure_fraction_at(fit: FitResult, z, level: float | None = None) -> TransformEstimate:
    est = delta_method_transform(fit, lambda m: _cure_of(m, z), level)
    return _range_note(est, "p0")


def theta_at(fit: FitResult, z, level: float | None = None) -> TransformEstimate:
    """Delta-method interval for theta on its natural scale.

    The gradient is taken on ``s = -log(1 - theta)`` and mapped back with
    ``d theta = exp(-s) ds``; differencing theta itself loses every digit
    once theta is within ~1e-10 of 1.
    """
    s_est = delta_method_transform(fit, lambda m: _neg_log1m_theta(m, z), level)
    s = s_est.estimate
    est = float(-np.expm1(-s))
    se = float(np.exp(-s) * s_est.se) if np.isfinite(s) else 0.0
    if not np.isfinite(se):
        se = 0.0
    level = fit.confidence_level if level is None else level
    zq = stats.norm.ppf(0.5 + level / 2.0)
    out = TransformEstimate(est, se, (est - zq * se, est + zq * se), s_est.note)
    return _range_note(out, "theta")


def _range_note(est: TransformEstimate, what: str) -> TransformEstimate:
    lo, hi = est.ci
    if lo < 0 or hi > 1:
        note = f"{what} interval extends outside [0, 1] (not clipped)"
        if est.note:
            note = est.note + "; " + note
        return TransformEstimate(est.estimate, est.se, est.ci, note)
    return est


def compare_models(fits: Sequence[FitResult]) -> list[FitResult]:
    """Fits ordered by AIC, fewer parameters first on ties."""
    return sorted(fits, key=lambda f: (f.criteria.aic, f.k))
