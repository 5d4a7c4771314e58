"""Covariate links and the parameter vector seen by the optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import (
    DagumParams,
    DDPVFModel,
    DomainError,
    FrailtySpec,
    Variant,
    _log_expit,
    theta_from_log_cure,
)


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: follow-up time, event flag and the three design rows.

    Each design row starts with the intercept 1.
    """

    time: float
    event: int
    w: tuple
    x: tuple
    z: tuple

    def __post_init__(self):
        if not (self.time > 0 and np.isfinite(self.time)):
            raise DomainError(f"time must be positive and finite, got {self.time}")
        if self.event not in (0, 1):
            raise DomainError(f"event must be 0 or 1, got {self.event}")
        for name in ("w", "x", "z"):
            row = tuple(float(v) for v in getattr(self, name))
            if not row or row[0] != 1.0:
                raise DimensionError(f"design row {name} must start with intercept 1")
            object.__setattr__(self, name, row)


@dataclass
class SurvivalData:
    """Column-oriented view of a sample used by the likelihood kernels."""

    time: np.ndarray
    event: np.ndarray
    W: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    time_unit: str = ""
    column_names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.ascontiguousarray(self.time, dtype=float)
        self.event = np.ascontiguousarray(self.event, dtype=float)
        n = self.time.shape[0]
        for name in ("W", "X", "Z"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if mat.shape[0] != n:
                raise DimensionError(f"{name} has {mat.shape[0]} rows, expected {n}")
            setattr(self, name, mat)
        if np.any(~(self.time > 0)):
            raise DomainError("all times must be strictly positive")
        if np.any((self.event != 0) & (self.event != 1)):
            raise DomainError("event indicators must be 0 or 1")

    def __len__(self):
        return self.time.shape[0]

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord]) -> "SurvivalData":
        if not records:
            raise DomainError("empty dataset")
        return cls(
            time=[r.time for r in records],
            event=[r.event for r in records],
            W=[r.w for r in records],
            X=[r.x for r in records],
            Z=[r.z for r in records],
        )

    def records(self) -> list[SurvivalRecord]:
        return [
            SurvivalRecord(float(t), int(d), tuple(w), tuple(x), tuple(z))
            for t, d, w, x, z in zip(self.time, self.event, self.W, self.X, self.Z)
        ]

    def subset(self, mask) -> "SurvivalData":
        return SurvivalData(self.time[mask], self.event[mask], self.W[mask],
                            self.X[mask], self.Z[mask], self.time_unit,
                            dict(self.column_names))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.W.shape[1], self.X.shape[1], self.Z.shape[1]


def as_data(data) -> SurvivalData:
    if isinstance(data, SurvivalData):
        return data
    return SurvivalData.from_records(list(data))


@dataclass(frozen=True)
class ModelParameters:
    zeta: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    frailty: FrailtySpec = FrailtySpec()

    def __post_init__(self):
        for name in ("zeta", "eta", "nu"):
            vec = np.array(getattr(self, name), dtype=float).ravel()
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.zeta.size, self.eta.size, self.nu.size

    def with_frailty(self, frailty: FrailtySpec) -> "ModelParameters":
        return ModelParameters(self.zeta, self.eta, self.nu, frailty)

    def natural_vector(self, free_gamma: bool | None = None) -> np.ndarray:
        """(zeta, eta, nu[, gamma][, sigma2]) on the natural scale."""
        parts = [self.zeta, self.eta, self.nu]
        f = self.frailty
        if free_gamma is None:
            free_gamma = f.variant is Variant.PVF
        if f.variant is Variant.PVF and free_gamma:
            parts.append([f.gamma])
        if f.variant is not Variant.NONE:
            parts.append([f.sigma2])
        return np.concatenate(parts)

    def names(self, free_gamma: bool | None = None) -> list[str]:
        q, p, r = self.shape
        out = ([f"zeta{i}" for i in range(q)] + [f"eta{i}" for i in range(p)]
               + [f"nu{i}" for i in range(r)])
        if free_gamma is None:
            free_gamma = self.frailty.variant is Variant.PVF
        if self.frailty.variant is Variant.PVF and free_gamma:
            out.append("gamma")
        if self.frailty.variant is not Variant.NONE:
            out.append("sigma2")
        return out


def _dot(row, coef, what):
    row = np.asarray(row, dtype=float)
    coef = np.asarray(coef, dtype=float)
    if row.shape[-1] != coef.shape[0]:
        raise DimensionError(
            f"{what}: design row has {row.shape[-1]} entries, coefficients {coef.shape[0]}")
    return row @ coef


def link_alpha(w, zeta):
    return np.exp(_dot(w, zeta, "alpha link"))


def link_beta(x, eta):
    return np.exp(-_dot(x, eta, "beta link"))


def expit(v):
    v = np.asarray(v, dtype=float)
    pos = v >= 0
    e = np.exp(-np.abs(v))
    out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def link_cure(z, nu):
    return expit(_dot(z, nu, "cure link"))


def subject_model(rec: SurvivalRecord, params: ModelParameters) -> DDPVFModel:
    alpha = float(link_alpha(rec.w, params.zeta))
    beta = float(link_beta(rec.x, params.eta))
    lin = float(_dot(rec.z, params.nu, "cure link"))
    code, gamma, sigma2 = params.frailty.kernel_args()
    # work from log p0 so that p0 underflowing to 0 lands on theta = 1
    s_inf = float(theta_from_log_cure(_log_expit(lin), code, gamma, sigma2))
    theta = 1.0 if s_inf == np.inf else float(-np.expm1(-s_inf))
    if theta <= 0:
        raise DomainError("cure link gives p0 = 1")
    return DDPVFModel(DagumParams(alpha, beta, theta), params.frailty)


# ---------------------------------------------------------------------------
# optimizer scale: coefficients as is, logit(gamma), log(sigma2)


@dataclass(frozen=True)
class ParameterLayout:
    """Shape of a packed vector: design sizes and which frailty terms are free."""

    q: int
    p: int
    r: int
    variant: Variant = Variant.NONE
    fixed_gamma: float | None = None

    @property
    def free_gamma(self) -> bool:
        return self.variant is Variant.PVF and self.fixed_gamma is None

    @property
    def has_sigma2(self) -> bool:
        return self.variant is not Variant.NONE

    @property
    def size(self) -> int:
        return self.q + self.p + self.r + int(self.free_gamma) + int(self.has_sigma2)

    @classmethod
    def for_params(cls, params: ModelParameters, fix_gamma: bool = False) -> "ParameterLayout":
        q, p, r = params.shape
        f = params.frailty
        fixed = f.gamma if (fix_gamma and f.variant is Variant.PVF) else None
        return cls(q, p, r, f.variant, fixed)


def _logit(x):
    return np.log(x) - np.log1p(-x)


def pack_parameters(params: ModelParameters, layout: ParameterLayout | None = None) -> np.ndarray:
    if layout is None:
        layout = ParameterLayout.for_params(params)
    if params.shape != (layout.q, layout.p, layout.r) or params.frailty.variant is not layout.variant:
        raise DimensionError("parameters do not match the layout")
    parts = [params.zeta, params.eta, params.nu]
    if layout.free_gamma:
        parts.append([_logit(params.frailty.gamma)])
    if layout.has_sigma2:
        parts.append([np.log(params.frailty.sigma2)])
    return np.concatenate(parts).astype(float)


def unpack_parameters(vector, layout: ParameterLayout) -> ModelParameters:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (layout.size,):
        raise DimensionError(f"expected vector of length {layout.size}, got {vector.shape}")
    q, p, r = layout.q, layout.p, layout.r
    zeta, eta, nu = vector[:q], vector[q:q + p], vector[q + p:q + p + r]
    i = q + p + r
    variant = layout.variant
    if variant is Variant.NONE:
        frailty = FrailtySpec.none()
    else:
        sigma2 = float(np.exp(vector[-1]))
        if variant is Variant.PVF:
            if layout.free_gamma:
                gamma = float(expit(vector[i]))
            else:
                gamma = layout.fixed_gamma
            frailty = FrailtySpec.pvf(gamma, sigma2)
        else:
            frailty = FrailtySpec(variant, sigma2=sigma2)
    return ModelParameters(zeta, eta, nu, frailty)


def natural_jacobian(vector, layout: ParameterLayout) -> np.ndarray:
    """d(natural) / d(packed), diagonal because each coordinate maps alone."""
    vector = np.asarray(vector, dtype=float)
    diag = np.ones(layout.size)
    i = layout.q + layout.p + layout.r
    if layout.free_gamma:
        g = expit(vector[i])
        diag[i] = g * (1.0 - g)
    if layout.has_sigma2:
        diag[-1] = np.exp(vector[-1])
    return np.diag(diag)


def linear_predictors(params: ModelParameters, data: SurvivalData):
    if params.shape != data.shape:
        raise DimensionError(f"parameter shape {params.shape} vs design shape {data.shape}")
    return data.W @ params.zeta, data.X @ params.eta, data.Z @ params.nu
