"""Steady-state skin temperature from a single-point cooling trace.

The trace is modelled as ``T(t) = T_ss + beta * exp(-r t)`` with the steady
state ``T_ss`` boxed to 27-43 degC and the loading amplitude ``beta`` to
0-20 degC.  For every (beta, r) the best ``T_ss`` is a weighted mean, so the
search runs over two parameters only: a 41x41 grid (beta linear, r
log-spaced) followed by Nelder-Mead from the best grid node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .radiometry import DEFAULT_CORE_MAP, CoreMap, core_map

T_BOUNDS = (27.0, 43.0)
BETA_BOUNDS = (0.0, 20.0)
RATE_BOUNDS = (1e-4, 1e-1)
MIN_WINDOW_S = 30.0
GRID_SIZE = 41


class InsufficientData(ValueError):
    """Too few weighted samples, or too short a window, to fit."""


@dataclass(frozen=True)
class TransientTrace:
    times: np.ndarray
    temps: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.temps, dtype=float)
        w = np.ones_like(y) if self.weights is None else np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "temps", y)
        object.__setattr__(self, "weights", w)
        if not (t.ndim == y.ndim == w.ndim == 1) or not (len(t) == len(y) == len(w)):
            raise ValueError("times, temps and weights must be 1-D and equally long")
        if len(t) < 3:
            raise ValueError("a trace needs at least three samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any((w < 0) | (w > 1)):
            raise ValueError("weights must lie in [0, 1]")

    @property
    def window_s(self):
        return float(self.times[-1] - self.times[0])

    def effective_window(self):
        """Trapezoidal integral of the weights over time, in seconds."""
        return float(np.sum(np.diff(self.times) * (self.weights[1:] + self.weights[:-1]) / 2))

    def truncate(self, window_s):
        """Samples within ``window_s`` of the first one."""
        keep = self.times - self.times[0] <= window_s + 1e-9
        return TransientTrace(self.times[keep], self.temps[keep], self.weights[keep])


@dataclass(frozen=True)
class FitResult:
    t_skin_star: float
    beta_peak: float
    rate: float
    weighted_rmse: float
    window_s: float
    at_boundary: bool = False
    branch: str = "cooling"

    def predict(self, times):
        e = np.exp(-self.rate * np.asarray(times, dtype=float))
        if self.branch == "heating":
            return self.t_skin_star + self.beta_peak * (1.0 - e)
        return self.t_skin_star + self.beta_peak * e

    def as_dict(self):
        return {"t_skin_star_c": self.t_skin_star, "beta_peak_c": self.beta_peak, "rate_1_s": self.rate,
                "weighted_rmse_c": self.weighted_rmse, "window_s": self.window_s,
                "at_boundary": self.at_boundary}


def _shape(t, rate, branch):
    e = np.exp(-rate * t)
    return 1.0 - e if branch == "heating" else e


def _objective(t, y, w, beta, rate, branch):
    """Weighted SSE with the steady state profiled out (and clipped to its box)."""
    base = y - beta * _shape(t, rate, branch)
    t_ss = np.clip(np.sum(w * base) / np.sum(w), *T_BOUNDS)
    r = base - t_ss
    return float(np.sum(w * r * r)), float(t_ss)


def fit_cooling(trace: TransientTrace, branch="cooling", min_window_s=MIN_WINDOW_S) -> FitResult:
    """Bounded weighted least-squares fit of the exponential loading model.

    Zero-weight samples are dropped before anything else, so their values can
    never influence the result.  Ties on a flat objective resolve to the
    smallest beta and then the smallest rate; a fit with beta = 0 reports
    rate 0.
    """
    if branch not in ("cooling", "heating"):
        raise ValueError(f"unknown branch {branch!r}")
    keep = trace.weights > 0
    if np.count_nonzero(keep) < 3:
        raise InsufficientData("need at least three samples with positive weight")
    eff = trace.effective_window()
    if eff < min_window_s:
        raise InsufficientData(f"effective window {eff:.1f} s is below the {min_window_s:.0f} s floor")
    t, y, w = trace.times[keep], trace.temps[keep], trace.weights[keep]

    betas = np.linspace(*BETA_BOUNDS, GRID_SIZE)
    rates = np.geomspace(*RATE_BOUNDS, GRID_SIZE)
    # beta-major layout: argmin's first hit is the smallest beta, then smallest rate
    sse = np.array([[_objective(t, y, w, b, r, branch)[0] for r in rates] for b in betas])
    i, j = np.unravel_index(np.argmin(sse), sse.shape)
    best = sse[i, j]

    lo = np.array([BETA_BOUNDS[0], np.log(RATE_BOUNDS[0])])
    hi = np.array([BETA_BOUNDS[1], np.log(RATE_BOUNDS[1])])

    def f(p):
        p = np.clip(p, lo, hi)
        return _objective(t, y, w, p[0], np.exp(p[1]), branch)[0]

    scale = float(np.sum(w * (y - np.average(y, weights=w)) ** 2)) or 1.0
    res = optimize.minimize(lambda p: f(p) / scale, x0=[betas[i], np.log(rates[j])], method="Nelder-Mead",
                            options={"xatol": 1e-11, "fatol": 1e-18, "maxiter": 4000, "maxfev": 8000,
                                     "initial_simplex": [[betas[i], np.log(rates[j])],
                                                         [betas[i] + 0.25, np.log(rates[j])],
                                                         [betas[i], np.log(rates[j]) + 0.1]]})
    p = np.clip(res.x, lo, hi)
    beta, rate = float(p[0]), float(np.exp(p[1]))
    obj, t_ss = _objective(t, y, w, beta, rate, branch)
    if obj > best:
        beta, rate = float(betas[i]), float(rates[j])
        obj, t_ss = _objective(t, y, w, beta, rate, branch)

    flat, flat_t = _objective(t, y, w, 0.0, rates[0], branch)
    if flat <= obj * (1 + 1e-12) + 1e-24:
        beta, rate, obj, t_ss = 0.0, 0.0, flat, flat_t

    edge = 1e-6
    at_boundary = bool(
        t_ss <= T_BOUNDS[0] + edge or t_ss >= T_BOUNDS[1] - edge or beta >= BETA_BOUNDS[1] - edge
        or (beta > 0 and (rate <= RATE_BOUNDS[0] * (1 + edge) or rate >= RATE_BOUNDS[1] * (1 - edge))))
    return FitResult(t_skin_star=t_ss, beta_peak=beta, rate=rate,
                     weighted_rmse=float(np.sqrt(obj / np.sum(w))), window_s=trace.window_s,
                     at_boundary=at_boundary, branch=branch)


def fit_heating(trace: TransientTrace, min_window_s=MIN_WINDOW_S) -> FitResult:
    """Heating-branch counterpart, used to validate simulated loading curves."""
    return fit_cooling(trace, branch="heating", min_window_s=min_window_s)


def correct_core(fit: FitResult, mapping: CoreMap = DEFAULT_CORE_MAP) -> float:
    return core_map(fit.t_skin_star, mapping)
