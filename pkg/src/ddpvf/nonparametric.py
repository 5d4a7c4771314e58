"""Kaplan-Meier survival and a kernel-smoothed hazard estimate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyDataError(ValueError):
    pass


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function equal to 1 before the first knot."""

    knots: np.ndarray
    values: np.ndarray
    variance: np.ndarray | None = None

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape:
            raise ValueError("knots and values must have the same length")
        if knots.size and np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right")
        padded = np.concatenate([[1.0], self.values])
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    def __len__(self):
        return self.knots.size

    @property
    def final_value(self) -> float:
        return float(self.values[-1]) if self.values.size else 1.0

    def records(self) -> list[tuple[float, float]]:
        return list(zip(self.knots.tolist(), self.values.tolist()))


def _risk_table(time, event):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    if time.size == 0:
        raise EmptyDataError("no observations")
    knots, inverse = np.unique(time, return_inverse=True)
    deaths = np.bincount(inverse, weights=(event > 0).astype(float), minlength=knots.size)
    removed = np.bincount(inverse, minlength=knots.size).astype(float)
    # at risk just before each knot; censorings at a knot still count (events first)
    at_risk = removed[::-1].cumsum()[::-1]
    return knots, deaths, at_risk


def kaplan_meier_arrays(time, event):
    """(knots, survival) of the product-limit estimator, one knot per distinct time."""
    knots, deaths, at_risk = _risk_table(time, event)
    return knots, np.cumprod(1.0 - deaths / at_risk)


def kaplan_meier(data) -> StepFunction:
    """Product-limit estimate from a :class:`SurvivalData` or record sequence.

    Ties between events and censorings are resolved events first.  The
    Greenwood variance is attached as ``variance``.
    """
    time, event = _time_event(data)
    knots, deaths, at_risk = _risk_table(time, event)
    surv = np.cumprod(1.0 - deaths / at_risk)
    with np.errstate(divide="ignore", invalid="ignore"):
        inc = np.where(at_risk > deaths, deaths / (at_risk * (at_risk - deaths)), 0.0)
    variance = surv ** 2 * np.cumsum(inc)
    return StepFunction(knots, surv, variance)


def _time_event(data):
    if hasattr(data, "time") and hasattr(data, "event") and not hasattr(data, "w"):
        return np.asarray(data.time, dtype=float), np.asarray(data.event, dtype=float)
    records = list(data)
    if not records:
        raise EmptyDataError("no observations")
    return (np.array([r.time for r in records], dtype=float),
            np.array([r.event for r in records], dtype=float))


@dataclass(frozen=True)
class HazardCurve:
    times: np.ndarray
    values: np.ndarray
    bandwidth: float

    def records(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))


def epanechnikov(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


def kernel_hazard(data, bandwidth: float | None = None, grid_size: int = 201) -> HazardCurve:
    """Epanechnikov smoothing of the Nelson-Aalen increments.

    The default bandwidth is the range of event times over 8.  The output
    grid is trimmed by one bandwidth at each end; if that leaves nothing the
    grid spans one bandwidth around the event times instead.  No boundary
    correction is applied.
    """
    time, event = _time_event(data)
    knots, deaths, at_risk = _risk_table(time, event)
    has_event = deaths > 0
    if not np.any(has_event):
        raise EmptyDataError("kernel hazard needs at least one event")
    t_ev = knots[has_event]
    increments = deaths[has_event] / at_risk[has_event]
    if bandwidth is None:
        bandwidth = (t_ev[-1] - t_ev[0]) / 8.0
        if bandwidth <= 0:
            bandwidth = max(t_ev[0], 1.0) / 8.0
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    lo, hi = t_ev[0] + bandwidth, t_ev[-1] - bandwidth
    if lo >= hi:
        lo, hi = max(t_ev[0] - bandwidth, 0.0), t_ev[-1] + bandwidth
    grid = np.linspace(lo, hi, grid_size)
    weights = epanechnikov((grid[:, None] - t_ev[None, :]) / bandwidth) / bandwidth
    return HazardCurve(grid, weights @ increments, float(bandwidth))
