"""Defective Dagum distribution, frailty Laplace transforms and the composed
DD-PVF lifetime model.

Everything is evaluated on the log scale.  Public functions take a scalar
parameter object and accept scalar or array times; the array-level helpers
(prefixed ``_``) take per-subject parameter arrays and are shared with the
pure-Python likelihood kernel.

Notation
--------
``s``      cumulative baseline hazard, ``-log S_DD(t)``
``ell``    log of the frailty Laplace transform, ``log L(s)``
``theta``  defectiveness of the Dagum baseline; ``1 - theta`` is its cure mass
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# PVF index below which the Gamma closed form is used instead
GAMMA_SWITCHOVER = 1e-4


class DomainError(ValueError):
    """Argument outside the support of a distribution or parameter space."""


class InversionError(ArithmeticError):
    """Numerical quantile inversion did not reach its tolerance."""


class Variant(str, enum.Enum):
    NONE = "none"
    GAMMA = "gamma"
    INVERSE_GAUSSIAN = "inverse_gaussian"
    PVF = "pvf"


# integer codes understood by the likelihood kernels
VARIANT_CODES = {
    Variant.NONE: 0,
    Variant.GAMMA: 1,
    Variant.INVERSE_GAUSSIAN: 2,
    Variant.PVF: 3,
}


@dataclass(frozen=True)
class DagumParams:
    """Defective Dagum parameters (shape ``alpha``, rate ``beta``, ``theta``)."""

    alpha: float
    beta: float
    theta: float

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise DomainError(f"beta must be positive, got {self.beta}")
        if not (0 < self.theta <= 1):
            raise DomainError(f"theta must lie in (0, 1], got {self.theta}")

    @property
    def is_proper(self) -> bool:
        return self.theta == 1.0


@dataclass(frozen=True)
class FrailtySpec:
    """Frailty law with unit mean.

    ``sigma2`` is the frailty variance.  ``gamma`` is the PVF index and is
    only stored for the PVF variant; the inverse Gaussian is the PVF with
    index 0.5 and the Gamma law is its limit as the index goes to zero.
    """

    variant: Variant = Variant.NONE
    sigma2: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant is Variant.NONE:
            if self.sigma2 is not None or self.gamma is not None:
                raise DomainError("the no-frailty variant takes no parameters")
            return
        if self.sigma2 is None or not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if variant is Variant.PVF:
            if self.gamma is None or not (0 < self.gamma < 1):
                raise DomainError(f"PVF index must lie in (0, 1), got {self.gamma}")
        elif self.gamma is not None:
            raise DomainError(f"{variant.value} frailty has a fixed index")

    @classmethod
    def none(cls) -> "FrailtySpec":
        return cls(Variant.NONE)

    @classmethod
    def gamma_frailty(cls, sigma2: float) -> "FrailtySpec":
        return cls(Variant.GAMMA, sigma2=sigma2)

    @classmethod
    def inverse_gaussian(cls, sigma2: float) -> "FrailtySpec":
        return cls(Variant.INVERSE_GAUSSIAN, sigma2=sigma2)

    @classmethod
    def pvf(cls, gamma: float, sigma2: float) -> "FrailtySpec":
        return cls(Variant.PVF, sigma2=sigma2, gamma=gamma)

    def kernel_args(self) -> tuple[int, float, float]:
        """(variant code, index, variance) with the small-index switchover applied."""
        variant = self.variant
        if variant is Variant.NONE:
            return 0, 0.0, 0.0
        gamma = 0.0
        if variant is Variant.PVF:
            gamma = float(self.gamma)
            if gamma < GAMMA_SWITCHOVER:
                variant = Variant.GAMMA
                gamma = 0.0
            elif gamma == 0.5:
                variant = Variant.INVERSE_GAUSSIAN
        return VARIANT_CODES[variant], gamma, float(self.sigma2)


@dataclass(frozen=True)
class DDPVFModel:
    dagum: DagumParams
    frailty: FrailtySpec = FrailtySpec()

    def cure_fraction(self) -> float:
        return cure_fraction_from_theta(self.dagum.theta, self.frailty)

    def survival(self, t):
        return np.exp(ddpvf_log_survival(t, self))

    def density(self, t):
        return np.exp(ddpvf_log_density(t, self))

    def hazard(self, t):
        return ddpvf_hazard(t, self)


# ---------------------------------------------------------------------------
# array-level helpers


def _softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _logaddexp(x, y):
    # np.logaddexp already handles -inf operands
    return np.logaddexp(x, y)


def _theta_logs(s_inf):
    """(log theta, log(1 - theta)) from the baseline cure hazard ``-log(1-theta)``."""
    s_inf = np.asarray(s_inf, dtype=float)
    with np.errstate(divide="ignore"):
        log_theta = np.log(-np.expm1(-s_inf))
    return log_theta, -s_inf


def _dd_logit(t, alpha, log_beta, log_theta):
    """log(theta * t**-alpha / beta)."""
    return log_theta - log_beta - alpha * np.log(t)


def _dd_log_survival(t, alpha, log_beta, log_theta, log1m_theta):
    a = _dd_logit(t, alpha, log_beta, log_theta)
    # S_DD = 1 - theta * expit(-a) = (1 - theta) + theta * expit(a)
    with np.errstate(divide="ignore"):
        # each branch is only kept where it is accurate; the other may overflow
        early = np.log1p(-np.exp(log_theta - _softplus(a)))
        late = _logaddexp(log1m_theta, log_theta - _softplus(-a))
    return np.where(a > 0, early, late)


def _dd_log_density(t, alpha, log_beta, log_theta):
    a = _dd_logit(t, alpha, log_beta, log_theta)
    return (np.log(alpha) - log_beta + 2.0 * log_theta
            - (alpha + 1.0) * np.log(t) - 2.0 * _softplus(a))


def _log_laplace(s, code, gamma, sigma2):
    s = np.asarray(s, dtype=float)
    if code == 0:
        return -s
    if code == 1:
        return -np.log1p(sigma2 * s) / sigma2
    if code == 2:
        r = 2.0 * sigma2 * s
        root = np.sqrt(1.0 + r)
        with np.errstate(invalid="ignore"):
            # rationalized form avoids cancellation for small sigma2 * s
            small = -2.0 * s / (1.0 + root)
        large = (1.0 - root) / sigma2
        return np.where(r > 1.0, large, small)
    scale = (1.0 - gamma) / (gamma * sigma2)
    with np.errstate(over="ignore"):
        return scale * -np.expm1(gamma * np.log1p(sigma2 * s / (1.0 - gamma)))


def _log_neg_laplace_slope(s, code, gamma, sigma2):
    """log(-d ell / ds): the factor turning a baseline hazard into the marginal one."""
    s = np.asarray(s, dtype=float)
    if code == 0:
        return np.zeros_like(s)
    if code == 1:
        return -np.log1p(sigma2 * s)
    if code == 2:
        return -0.5 * np.log1p(2.0 * sigma2 * s)
    return (gamma - 1.0) * np.log1p(sigma2 * s / (1.0 - gamma))


def _inverse_log_laplace(ell, code, gamma, sigma2):
    """Cumulative hazard ``s >= 0`` with ``log L(s) = ell`` for ``ell <= 0``."""
    ell = np.asarray(ell, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        if code == 0:
            return -ell
        if code == 1:
            return np.expm1(-sigma2 * ell) / sigma2
        if code == 2:
            return -ell + 0.5 * sigma2 * ell * ell
        inner = np.log1p(-gamma * sigma2 * ell / (1.0 - gamma)) / gamma
        return (1.0 - gamma) / sigma2 * np.expm1(inner)


def _log_expit(x):
    return -_softplus(-np.asarray(x, dtype=float))


def _ddpvf_log_terms(t, alpha, log_beta, s_inf, code, gamma, sigma2):
    """(log survival, log density) of the composed model, elementwise."""
    log_theta, log1m_theta = _theta_logs(s_inf)
    log_s_dd = _dd_log_survival(t, alpha, log_beta, log_theta, log1m_theta)
    s = np.maximum(-log_s_dd, 0.0)
    log_surv = _log_laplace(s, code, gamma, sigma2)
    log_h_dd = _dd_log_density(t, alpha, log_beta, log_theta) - log_s_dd
    log_dens = log_surv + log_h_dd + _log_neg_laplace_slope(s, code, gamma, sigma2)
    return log_surv, log_dens


# ---------------------------------------------------------------------------
# public scalar-parameter API


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("times must be strictly positive")
    return t


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _dagum_logs(p: DagumParams):
    if p.theta == 1.0:
        return np.log(p.beta), 0.0, -np.inf
    return np.log(p.beta), np.log(p.theta), np.log1p(-p.theta)


def dd_log_survival(t, p: DagumParams):
    """Log survival of the defective Dagum distribution.

    Tends to ``log(1 - theta)`` as ``t`` grows and to 0 as ``t -> 0``.
    """
    t = _check_times(t)
    log_beta, log_theta, log1m_theta = _dagum_logs(p)
    return _out(_dd_log_survival(t, p.alpha, log_beta, log_theta, log1m_theta))


def dd_log_density(t, p: DagumParams):
    t = _check_times(t)
    log_beta, log_theta, _ = _dagum_logs(p)
    return _out(_dd_log_density(t, p.alpha, log_beta, log_theta))


def dd_hazard(t, p: DagumParams):
    t = _check_times(t)
    log_beta, log_theta, log1m_theta = _dagum_logs(p)
    log_h = (_dd_log_density(t, p.alpha, log_beta, log_theta)
             - _dd_log_survival(t, p.alpha, log_beta, log_theta, log1m_theta))
    return _out(np.exp(log_h))


def frailty_log_laplace(s, f: FrailtySpec):
    """Log Laplace transform of the unit-mean frailty law at cumulative hazard ``s``."""
    s = np.asarray(s, dtype=float)
    if np.any(~(s >= 0)):
        raise DomainError("cumulative hazard must be non-negative")
    code, gamma, sigma2 = f.kernel_args()
    return _out(_log_laplace(s, code, gamma, sigma2))


def _model_args(m: DDPVFModel):
    code, gamma, sigma2 = m.frailty.kernel_args()
    theta = m.dagum.theta
    s_inf = np.inf if theta == 1.0 else -np.log1p(-theta)
    return m.dagum.alpha, np.log(m.dagum.beta), s_inf, code, gamma, sigma2


def ddpvf_log_survival(t, m: DDPVFModel):
    t = _check_times(t)
    log_surv, _ = _ddpvf_log_terms(t, *_model_args(m))
    return _out(log_surv)


def ddpvf_log_density(t, m: DDPVFModel):
    t = _check_times(t)
    _, log_dens = _ddpvf_log_terms(t, *_model_args(m))
    return _out(log_dens)


def ddpvf_hazard(t, m: DDPVFModel):
    t = _check_times(t)
    log_surv, log_dens = _ddpvf_log_terms(t, *_model_args(m))
    return _out(np.exp(log_dens - log_surv))


def cure_fraction_from_theta(theta: float, f: FrailtySpec) -> float:
    """Long-run survival of the composed model, ``L(-log(1 - theta))``."""
    if not (0 < theta <= 1):
        raise DomainError(f"theta must lie in (0, 1], got {theta}")
    if theta == 1.0:
        return 0.0
    code, gamma, sigma2 = f.kernel_args()
    return float(np.exp(_log_laplace(-np.log1p(-theta), code, gamma, sigma2)))


def theta_from_cure_fraction(p0: float, f: FrailtySpec) -> float:
    """Inverse of :func:`cure_fraction_from_theta`; ``p0 = 0`` maps to 1."""
    if not (0 <= p0 < 1):
        raise DomainError(f"cure fraction must lie in [0, 1), got {p0}")
    if p0 == 0.0:
        return 1.0
    code, gamma, sigma2 = f.kernel_args()
    s_inf = _inverse_log_laplace(np.log(p0), code, gamma, sigma2)
    return float(-np.expm1(-s_inf))


def theta_from_log_cure(log_p0, code, gamma, sigma2):
    """Baseline cure hazard ``-log(1 - theta)`` from ``log p0`` (array form)."""
    return _inverse_log_laplace(log_p0, code, gamma, sigma2)


def _quantile_closed(u, m: DDPVFModel):
    alpha, log_beta, s_inf, code, gamma, sigma2 = _model_args(m)
    log_theta, _ = _theta_logs(s_inf)
    # marginal survival 1 - u  ->  baseline cumulative hazard s
    s = _inverse_log_laplace(np.log1p(-u), code, gamma, sigma2)
    # S_DD = (1 - theta) + theta * expit(a) = exp(-s), so
    # expit(-a) = (1 - exp(-s)) / theta and theta expit(a) = exp(-s) - exp(-s_inf)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_excess = -s + np.log(-np.expm1(s - s_inf))
        a = log_excess - np.log(-np.expm1(-s))
        return np.exp((log_theta - log_beta - a) / alpha)


def _quantile_bisect(u, m: DDPVFModel, tol=1e-10, max_iter=400):
    target = np.log1p(-u)
    out = np.empty_like(u)
    for i, (ui, ti) in enumerate(zip(u.ravel(), np.broadcast_to(target, u.shape).ravel())):
        lo, hi = 1.0, 1.0
        while ddpvf_log_survival(lo, m) < ti:
            lo *= 0.5
            if lo < 1e-300:
                raise InversionError(f"no lower bracket for u={ui}")
        while ddpvf_log_survival(hi, m) > ti:
            hi *= 2.0
            if hi > 1e300:
                raise InversionError(f"no upper bracket for u={ui}")
        for _ in range(max_iter):
            mid = np.sqrt(lo * hi)
            val = ddpvf_log_survival(mid, m)
            if abs(val - ti) < tol:
                break
            if val > ti:
                lo = mid
            else:
                hi = mid
        else:
            raise InversionError(f"bisection did not converge for u={ui}")
        out.flat[i] = mid
    return out


def susceptible_quantile(u, m: DDPVFModel, method: str = "closed"):
    """Time ``t`` with ``S(t) = 1 - u``.

    ``u`` must lie below the susceptible mass ``1 - p0``; the generators draw
    it from ``Uniform(0, 1 - p0)``.  ``method="bisect"`` inverts the log
    survival numerically and is also used when the closed form overflows.
    """
    u = np.asarray(u, dtype=float)
    p0 = m.cure_fraction()
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("u must lie in (0, 1)")
    if np.any(u >= 1.0 - p0):
        raise DomainError(f"u must be below the susceptible mass {1.0 - p0}")
    if method == "bisect":
        return _out(_quantile_bisect(u, m))
    if method != "closed":
        raise ValueError(f"unknown inversion method {method!r}")
    t = np.asarray(_quantile_closed(u, m))
    bad = ~(np.isfinite(t) & (t > 0))
    if np.any(bad):
        t = np.array(t, dtype=float, copy=True)
        t[bad] = _quantile_bisect(u[bad] if u.ndim else u.reshape(1), m).ravel()
    return _out(t)
