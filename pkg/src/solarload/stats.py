"""Error metrics and equity statistics.

The Student-t distribution (through the regularised incomplete beta
function) and the Kolmogorov distribution are evaluated here directly, so
the statistics layer depends on numpy only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

MI_THRESHOLD = 45.0


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorMetrics:
    mae: float
    rmse: float
    mape: float | None   # percent; None when a truth value is zero
    n: int


def error_metrics(pred, truth) -> ErrorMetrics:
    """MAE, RMSE and MAPE (percent of the degC truth values).

    A zero truth value leaves MAPE undefined; it is reported as ``None``
    while MAE and RMSE are still returned.  Use :func:`mape` for the strict
    form that raises.
    """
    p, t = _pair(pred, truth)
    err = p - t
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    try:
        pct = mape(p, t)
    except DomainError:
        pct = None
    return ErrorMetrics(mae, rmse, pct, len(p))


def mape(pred, truth):
    p, t = _pair(pred, truth)
    if np.any(t == 0):
        raise DomainError("MAPE is undefined when a truth value is zero")
    return float(100.0 * np.mean(np.abs((p - t) / t)))


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("inputs must be non-empty and equally long")
    return a, b


# ------------------------------------------------------------ special functions

def _betacf(a, b, x, tol=1e-15, max_iter=10000):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf(t, df):
    """Upper tail P(T > t) of Student's t."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t, df):
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t >= 0 else tail


def t_ppf(q, df, tol=1e-13):
    """Quantile of Student's t by bisection on the CDF."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, df, tol)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        lo, hi = hi, hi * 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kolmogorov_sf(x, terms=200):
    """P(K > x) for the Kolmogorov distribution: 2 sum (-1)^(k-1) exp(-2 k^2 x^2)."""
    if x <= 0:
        return 1.0
    if x < 0.2:
        # the alternating series converges slowly here; use the theta-function form of the CDF
        s = sum(math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * x * x)) for k in range(1, terms))
        return 1.0 - math.sqrt(2 * math.pi) / x * s
    total = 0.0
    for k in range(1, terms + 1):
        term = (-1) ** (k - 1) * math.exp(-2.0 * k * k * x * x)
        total += term
        if abs(term) < 1e-18:
            break
    return min(1.0, max(0.0, 2.0 * total))


# ------------------------------------------------------------ tests

@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    alternative: str
    n_effective: float


def ks_two_sample(a, b, alternative="two-sided") -> KSResult:
    """Two-sample Kolmogorov-Smirnov test.

    ``alternative="greater"`` (alias ``"one-tailed"``) tests whether ``a``
    tends to take larger values than ``b``: ``D = sup(F_b - F_a)`` and
    ``p = exp(-2 n_e D^2)``.  The two-sided p-value uses the asymptotic
    Kolmogorov distribution at ``(sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)) D``
    with ``n_e = n_a n_b / (n_a + n_b)``.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    ne = len(a) * len(b) / (len(a) + len(b))
    if alternative == "two-sided":
        d = float(np.max(np.abs(fa - fb)))
        root = math.sqrt(ne)
        p = kolmogorov_sf((root + 0.12 + 0.11 / root) * d)
    elif alternative in ("greater", "one-tailed"):
        d = float(max(0.0, np.max(fb - fa)))
        p = math.exp(-2.0 * ne * d * d)
        alternative = "greater"
    elif alternative == "less":
        d = float(max(0.0, np.max(fa - fb)))
        p = math.exp(-2.0 * ne * d * d)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return KSResult(d, float(min(1.0, max(0.0, p))), alternative, ne)


@dataclass(frozen=True)
class PairedTResult:
    t: float
    p_value: float
    ci95: tuple
    mean_diff: float
    df: int


def paired_t(a, b, confidence=0.95) -> PairedTResult:
    """Paired t-test on ``a - b`` with a two-sided p-value and a CI on the mean difference."""
    a, b = _pair(a, b)
    if len(a) < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    n = len(d)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return PairedTResult(0.0, 1.0, (0.0, 0.0), 0.0, df)
        return PairedTResult(math.copysign(math.inf, mean), 0.0, (mean, mean), mean, df)
    se = sd / math.sqrt(n)
    t = mean / se
    p = min(1.0, 2.0 * t_sf(abs(t), df))
    half = t_ppf(0.5 + confidence / 2.0, df) * se
    return PairedTResult(float(t), float(p), (mean - half, mean + half), mean, df)


def pearson_r(x, y):
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.sum(xc * xc) * np.sum(yc * yc)))
    if denom == 0:
        raise DomainError("correlation is undefined for a constant input")
    return float(np.sum(xc * yc) / denom)


# ------------------------------------------------------------ equity

@dataclass
class GroupStats:
    n: int
    mae: float
    rmse: float
    mean_error: float


@dataclass
class StratifiedReport:
    threshold: float
    dark: GroupStats | None
    light: GroupStats | None

    @property
    def difference(self):
        """Mean error of the dark group minus the light group (None if either is absent)."""
        if self.dark is None or self.light is None:
            return None
        return self.dark.mean_error - self.light.mean_error


def _group(e):
    if len(e) == 0:
        return None
    return GroupStats(len(e), float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e))), float(np.mean(e)))


def stratified_bias(errors, melanin, threshold=MI_THRESHOLD) -> StratifiedReport:
    """Split signed errors into dark (MI >= threshold) and light (MI < threshold)."""
    e, mi = _pair(errors, melanin)
    dark = mi >= threshold
    return StratifiedReport(float(threshold), _group(e[dark]), _group(e[~dark]))


@dataclass
class EquityReport:
    stages: dict = field(default_factory=dict)   # stage name -> dict of statistics
    threshold: float = MI_THRESHOLD
    schema: str = "solarload.equity/1"

    def add_stage(self, name, errors, melanin):
        """Record group statistics and the dark-vs-light tests for one set of signed errors."""
        errors = np.asarray(errors, dtype=float)
        melanin = np.asarray(melanin, dtype=float)
        rep = stratified_bias(errors, melanin, self.threshold)
        row = {"dark": None if rep.dark is None else asdict(rep.dark),
               "light": None if rep.light is None else asdict(rep.light),
               "difference_c": rep.difference}
        if rep.dark is not None and rep.light is not None:
            dark = errors[melanin >= self.threshold]
            light = errors[melanin < self.threshold]
            ks1 = ks_two_sample(dark, light, "greater")
            ks2 = ks_two_sample(dark, light, "two-sided")
            row.update(ks_statistic=ks1.statistic, ks_p=ks1.p_value,
                       ks_two_sided_statistic=ks2.statistic, ks_two_sided_p=ks2.p_value)
            if len(dark) == len(light) and len(dark) >= 2:
                pt = paired_t(dark, light)
                row.update(t_statistic=pt.t, t_p=pt.p_value, ci95_c=list(pt.ci95))
        self.stages[name] = row
        return row

    def to_json(self):
        return json.dumps({"schema": self.schema, "threshold_mi": self.threshold, "stages": self.stages},
                          indent=2, sort_keys=True, default=_json_default)

    def to_table(self):
        header = ["stage", "n_dark", "n_light", "mae_dark", "mae_light", "diff_c", "ks_D", "ks_p"]
        rows = []
        for name, s in self.stages.items():
            dark, light = s["dark"] or {}, s["light"] or {}
            rows.append([name, dark.get("n", 0), light.get("n", 0), dark.get("mae"), light.get("mae"),
                         s.get("difference_c"), s.get("ks_statistic"), s.get("ks_p")])
        return format_table(header, rows)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def format_table(header, rows):
    """Plain aligned text table; floats get four decimals, missing cells a dash."""
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}" if (v != 0 and (abs(v) < 1e-3 or abs(v) >= 1e5)) else f"{v:.4f}"
        return str(v)

    text = [[cell(v) for v in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in text]) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in text:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)
