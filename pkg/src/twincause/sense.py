"""Robustness machinery: omitted-variable-bias statistics and the shadow-wage sweep.

The confounding analysis works on partial-R2 parameterizations: how much
residual variance an unobserved variable would need to explain, in both
the exposure and the outcome, to overturn a reported coefficient. The
wage sweep re-prices the hours component of the per-row effects under
scaled market wages and re-estimates the mean with its bootstrap interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .causal import AteResult, IteVector, bca_bootstrap
from .cohort import EconomicParams
from .infer import CoefTable

__all__ = [
    "SensitivityReport",
    "WageSweep",
    "robustness_value",
    "adjusted_estimate",
    "benchmark_bounds",
    "contour_grid",
    "wage_sweep",
]


@dataclass(frozen=True)
class SensitivityReport:
    coefficient: str
    estimate: float
    se: float
    t: float
    df: float
    rv_point: float
    rv_alpha: float
    alpha: float
    bounds: list[dict]
    contour_r2: np.ndarray
    contour_t: np.ndarray
    contour_estimate: np.ndarray

    def to_dict(self) -> dict:
        return {
            "coefficient": self.coefficient,
            "estimate": self.estimate,
            "se": self.se,
            "t": self.t,
            "df": self.df,
            "rv_point": self.rv_point,
            "rv_alpha": self.rv_alpha,
            "alpha": self.alpha,
            "bounds": self.bounds,
        }


@dataclass(frozen=True)
class WageSweep:
    multipliers: tuple[float, ...]
    nate: tuple[AteResult, ...]

    def to_dict(self) -> dict:
        return {
            "multipliers": list(self.multipliers),
            "nate": [r.to_dict() for r in self.nate],
        }


DEFAULT_MULTIPLIERS = (0.50, 0.75, 1.00, 1.25, 1.50)


def robustness_value(t: float, df: float, q: float = 1.0,
                     alpha: float | None = None) -> float:
    """Partial-R2 strength a confounder needs to reduce the estimate by the
    fraction q (or, with ``alpha``, to push it to the alpha critical bound).

    Returns RV in [0, 1]: the common value of the confounder's partial R2
    with the exposure and with the outcome that exactly achieves the
    reduction.
    """
    if df <= 0:
        raise ValueError(f"df must be > 0, got {df}")
    f = q * abs(t) / np.sqrt(df)
    if alpha is None:
        fq = f
    else:
        f_crit = abs(stats.t.ppf(alpha / 2.0, df - 1)) / np.sqrt(df - 1)
        fq = f - f_crit
        if fq < 0.0:
            return 0.0
        if f > 1.0 / f_crit:
            # beyond this point the quadratic branch is invalid
            return float((f**2 - f_crit**2) / (1.0 + f**2))
    rv = 0.5 * (np.sqrt(fq**4 + 4.0 * fq**2) - fq**2)
    return float(min(max(rv, 0.0), 1.0))


def adjusted_estimate(estimate: float, se: float, df: float,
                      r2_yz: float, r2_dz: float) -> tuple[float, float, float]:
    """Coefficient, SE and t after removing a confounder of the given
    partial-R2 strengths; the bias is taken against the reported sign
    (worst case)."""
    for name, v in (("r2_yz", r2_yz), ("r2_dz", r2_dz)):
        if not (0.0 <= v < 1.0):
            raise ValueError(f"{name} must be in [0, 1), got {v}")
    if df <= 1:
        raise ValueError(f"df must be > 1, got {df}")
    bias = se * np.sqrt(df) * np.sqrt(r2_yz * r2_dz / (1.0 - r2_dz))
    est_adj = estimate - np.sign(estimate) * bias
    se_adj = se * np.sqrt((1.0 - r2_yz) / (1.0 - r2_dz)) * np.sqrt(df / (df - 1.0))
    t_adj = est_adj / se_adj if se_adj > 0 else np.inf * np.sign(est_adj)
    return float(est_adj), float(se_adj), float(t_adj)


def partial_r2_from_t(t: float, df: float) -> float:
    """Partial R2 implied by a coefficient's t statistic: t^2/(t^2 + df)."""
    return float(t**2 / (t**2 + df))


def benchmark_partials(X: np.ndarray, y: np.ndarray, exposure_col: int,
                       benchmark_col: int) -> tuple[float, float]:
    """Benchmark covariate's partial R2 with the exposure and the outcome.

    Both are residual-variance ratios from explicit refits with and
    without the benchmark column: R2_dz from regressing the exposure on
    the remaining columns, R2_yz from the outcome regression given the
    exposure and the remaining columns.
    """
    n, k = X.shape
    others = [j for j in range(k) if j not in (exposure_col, benchmark_col)]
    Xo = X[:, others]
    d = X[:, exposure_col]
    z = X[:, benchmark_col]

    def rss(A, b):
        coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        r = b - A @ coef
        return float(r @ r)

    rss_d_without = rss(Xo, d)
    rss_d_with = rss(np.column_stack([Xo, z]), d)
    r2_dz = 0.0 if rss_d_without <= 0 else max(0.0, 1.0 - rss_d_with / rss_d_without)

    Xy_without = np.column_stack([Xo, d])
    rss_y_without = rss(Xy_without, y)
    rss_y_with = rss(np.column_stack([Xy_without, z]), y)
    r2_yz = 0.0 if rss_y_without <= 0 else max(0.0, 1.0 - rss_y_with / rss_y_without)
    return r2_dz, r2_yz


def benchmark_bounds(fit: CoefTable, coefficient: str, r2_dz_bench: float,
                     r2_yz_bench: float, multipliers=(1.0, 2.0, 3.0)) -> list[dict]:
    """Adjusted estimates if a confounder were k times the benchmark's
    strength; partials are capped below 1 and flagged when the cap binds."""
    i = fit.names.index(coefficient)
    est, se, df = float(fit.estimates[i]), float(fit.se[i]), float(fit.df[i])
    out = []
    for m in multipliers:
        r2_dz = m * r2_dz_bench
        r2_yz = m * r2_yz_bench
        capped = r2_dz >= 1.0 or r2_yz >= 1.0
        r2_dz = min(r2_dz, 1.0 - 1e-9)
        r2_yz = min(r2_yz, 1.0 - 1e-9)
        est_adj, se_adj, t_adj = adjusted_estimate(est, se, df, r2_yz, r2_dz)
        out.append({
            "multiplier": float(m), "r2_dz": float(r2_dz), "r2_yz": float(r2_yz),
            "adjusted_estimate": est_adj, "adjusted_se": se_adj,
            "adjusted_t": t_adj, "capped": bool(capped),
        })
    return out


def contour_grid(fit: CoefTable, coefficient: str, grid_points: int = 21,
                 r2_max: float = 0.95) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjusted t (and estimate) over the (r2_dz, r2_yz) grid.

    Returns (axis, t_grid, estimate_grid) with t_grid[i, j] the adjusted t
    at r2_dz = axis[i], r2_yz = axis[j]; the origin cell is the unadjusted
    fit.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    i = fit.names.index(coefficient)
    est, se, df = float(fit.estimates[i]), float(fit.se[i]), float(fit.df[i])
    axis = np.linspace(0.0, r2_max, grid_points)
    t_grid = np.empty((grid_points, grid_points))
    e_grid = np.empty((grid_points, grid_points))
    for a, r2_dz in enumerate(axis):
        for b, r2_yz in enumerate(axis):
            if a == 0 and b == 0:
                e_grid[a, b] = est
                t_grid[a, b] = est / se if se > 0 else np.inf
                continue
            est_adj, _, t_adj = adjusted_estimate(est, se, df, r2_yz, r2_dz)
            e_grid[a, b] = est_adj
            t_grid[a, b] = t_adj
    return axis, t_grid, e_grid


def sensitivity_report(fit: CoefTable, coefficient: str, r2_dz_bench: float,
                       r2_yz_bench: float, alpha: float = 0.05,
                       grid_points: int = 21) -> SensitivityReport:
    i = fit.names.index(coefficient)
    est, se, df = float(fit.estimates[i]), float(fit.se[i]), float(fit.df[i])
    t = est / se if se > 0 else np.inf
    axis, t_grid, e_grid = contour_grid(fit, coefficient, grid_points)
    return SensitivityReport(
        coefficient=coefficient, estimate=est, se=se, t=t, df=df,
        rv_point=robustness_value(t, df),
        rv_alpha=robustness_value(t, df, alpha=alpha),
        alpha=alpha,
        bounds=benchmark_bounds(fit, coefficient, r2_dz_bench, r2_yz_bench),
        contour_r2=axis, contour_t=t_grid, contour_estimate=e_grid,
    )


def wage_sweep(ite_oop: IteVector, ite_hours: IteVector, params: EconomicParams,
               cluster_labels, multipliers=DEFAULT_MULTIPLIERS,
               rng: np.random.Generator | None = None, B: int = 1000,
               alpha: float = 0.05) -> WageSweep:
    """Net mean effect under scaled shadow wages, with bootstrap intervals.

    Per row i in cluster c: net_i(m) = d_oop_i + d_hours_i * (W_c * m) / PPP_c.
    Each multiplier's mean is summarized with an independent BCa bootstrap
    on a spawned substream.
    """
    d_oop = np.asarray(ite_oop.deltas, dtype=np.float64)
    d_hours = np.asarray(ite_hours.deltas, dtype=np.float64)
    labels = np.asarray(cluster_labels)
    if not (len(d_oop) == len(d_hours) == len(labels)):
        raise ValueError("effect vectors and cluster labels must be aligned")
    if rng is None:
        rng = np.random.default_rng(0)
    wage = np.array([params.wage[c] for c in labels])
    ppp = np.array([params.ppp[c] for c in labels])
    rate = wage / ppp

    results = []
    streams = rng.spawn(len(multipliers))
    for m, sub in zip(multipliers, streams):
        net = d_oop + d_hours * rate * m
        results.append(bca_bootstrap(net, np.mean, B=B, alpha=alpha, rng=sub))
    return WageSweep(multipliers=tuple(float(m) for m in multipliers),
                     nate=tuple(results))
