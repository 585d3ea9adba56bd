"""Two-learner counterfactual estimation on the synthetic twin manifold.

One regression forest per treatment arm maps covariates to the expected
outcome under that arm; passing the empirical cohort through both surfaces
(G-computation) yields per-row effect estimates, which are winsorized and
summarized by a bias-corrected accelerated bootstrap of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .cohort import CohortTable
from .forest import ForestConfig, RegressionForest

__all__ = [
    "ForestConfig",
    "ResponseSurfacePair",
    "IteVector",
    "AteResult",
    "fit_forest",
    "fit_tlearner",
    "gcompute_ite",
    "winsorize",
    "bca_bootstrap",
    "encode_features",
]


@dataclass(frozen=True)
class ResponseSurfacePair:
    """Fitted treated/control response surfaces over a shared feature layout."""

    mu1: RegressionForest
    mu0: RegressionForest
    feature_order: tuple[str, ...]


@dataclass(frozen=True)
class IteVector:
    deltas: np.ndarray
    outcome_name: str
    winsor_bounds: tuple[float, float] | None = None
    y1: np.ndarray | None = None
    y0: np.ndarray | None = None


@dataclass(frozen=True)
class AteResult:
    point: float
    ci_low: float
    ci_high: float
    alpha: float
    replicates: int
    z0: float
    a: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "point": self.point, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "alpha": self.alpha, "replicates": self.replicates,
            "z0": self.z0, "a": self.a, "degenerate": self.degenerate,
        }


def fit_forest(X, y, cfg: ForestConfig, rng: np.random.Generator) -> RegressionForest:
    """Fit a bagged regression forest (see :mod:`twincause.forest`)."""
    return RegressionForest(cfg).fit(X, y, rng)


def encode_features(table: CohortTable, feature_names) -> np.ndarray:
    """Numeric design for the forests: continuous columns as-is, categorical
    columns as their integer codes (trees split on code order)."""
    cols = [table.values(name).astype(np.float64) for name in feature_names]
    return np.column_stack(cols) if cols else np.empty((table.n, 0))


def default_feature_names(table: CohortTable) -> tuple[str, ...]:
    """Covariate and stratum columns, in schema order."""
    return tuple(
        c.name for c in table.schema if c.role in ("covariate", "stratum")
    )


def fit_tlearner(twins: CohortTable, outcome: str, cfg: ForestConfig,
                 rng: np.random.Generator, treatment_positive: str = "yes",
                 feature_names=None) -> ResponseSurfacePair:
    """Fit the two arm-specific response surfaces on the twin cohort.

    The treated surface is fit on treated rows only, the control surface on
    control rows only, both over the same feature columns (treatment and
    outcomes excluded).
    """
    if outcome not in [c.name for c in twins.schema]:
        raise ValueError(f"outcome column {outcome!r} not in schema")
    if twins.has_missing:
        raise ValueError("twins must be complete (no missing cells)")
    feature_names = tuple(feature_names or default_feature_names(twins))
    treated = twins.treated_mask(treatment_positive)
    n1, n0 = int(treated.sum()), int((~treated).sum())
    if n1 < cfg.min_leaf or n0 < cfg.min_leaf:
        raise ValueError(
            f"both arms need >= min_leaf rows: treated={n1}, control={n0}"
        )
    X = encode_features(twins, feature_names)
    y = twins.values(outcome)
    # streams are keyed to the underlying arm values, not to the mu1/mu0
    # role, so relabeling the positive arm negates the deltas exactly
    treat_spec = twins.spec(twins.treatment_name)
    if treat_spec.kind == "categorical":
        arm_ids = sorted(treat_spec.categories)
        pos_idx = arm_ids.index(treatment_positive)
    else:
        pos_idx = 1
    streams = rng.spawn(2)
    mu1 = fit_forest(X[treated], y[treated], cfg, streams[pos_idx])
    mu0 = fit_forest(X[~treated], y[~treated], cfg, streams[1 - pos_idx])
    return ResponseSurfacePair(mu1=mu1, mu0=mu0, feature_order=feature_names)


def gcompute_ite(pair: ResponseSurfacePair, empirical: CohortTable,
                 outcome_name: str) -> IteVector:
    """Predict both potential outcomes for every empirical row; delta = y1 - y0."""
    if empirical.n == 0:
        z = np.empty(0)
        return IteVector(deltas=z, outcome_name=outcome_name, y1=z, y0=z)
    X = encode_features(empirical, pair.feature_order)
    y1 = pair.mu1.predict(X)
    y0 = pair.mu0.predict(X)
    return IteVector(deltas=y1 - y0, outcome_name=outcome_name, y1=y1, y0=y0)


def winsorize(v, low_q: float = 0.01, high_q: float = 0.99, bounds=None) -> np.ndarray:
    """Clamp values outside the [low_q, high_q] linear-interpolation quantiles.

    Passing ``bounds=(lo, hi)`` reuses previously computed clamp values
    instead of re-estimating the quantiles (reapplying with the same bounds
    is the identity on already-winsorized data).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot winsorize an empty vector")
    if not (0.0 <= low_q < high_q <= 1.0):
        raise ValueError(f"need 0 <= low_q < high_q <= 1, got ({low_q}, {high_q})")
    if bounds is None:
        bounds = (np.quantile(v, low_q), np.quantile(v, high_q))
    return np.clip(v, bounds[0], bounds[1])


def winsorize_ites(ite: IteVector, low_q: float = 0.01, high_q: float = 0.99) -> IteVector:
    lo = float(np.quantile(ite.deltas, low_q))
    hi = float(np.quantile(ite.deltas, high_q))
    return IteVector(
        deltas=np.clip(ite.deltas, lo, hi), outcome_name=ite.outcome_name,
        winsor_bounds=(lo, hi), y1=ite.y1, y0=ite.y0,
    )


def _jackknife_acceleration(v: np.ndarray) -> float:
    n = len(v)
    total = v.sum()
    loo = (total - v) / (n - 1)
    d = loo.mean() - loo
    denom = (d**2).sum() ** 1.5
    if denom == 0.0:
        return 0.0
    return float((d**3).sum() / (6.0 * denom))


def bca_percentiles(z0: float, a: float, alpha: float) -> tuple[float, float]:
    """Adjusted percentile levels for the BCa interval endpoints.

    With z0 = 0 and a = 0 this reduces exactly to (alpha/2, 1 - alpha/2),
    the plain percentile bootstrap.
    """
    z_lo = norm.ppf(alpha / 2.0)
    z_hi = norm.ppf(1.0 - alpha / 2.0)
    p_lo = norm.cdf(z0 + (z0 + z_lo) / (1.0 - a * (z0 + z_lo)))
    p_hi = norm.cdf(z0 + (z0 + z_hi) / (1.0 - a * (z0 + z_hi)))
    return float(p_lo), float(p_hi)


def percentile_of_replicates(sorted_reps: np.ndarray, p: float) -> float:
    """Order-statistic percentile: the ceil(p*B)-th smallest replicate."""
    B = len(sorted_reps)
    k = int(np.ceil(p * B))
    k = min(max(k, 1), B)
    return float(sorted_reps[k - 1])


def _exhaustive_means(v: np.ndarray) -> np.ndarray:
    """Means of all n**n index resamples (only viable for tiny n)."""
    n = len(v)
    total = n**n
    if total > 5_000_000:
        raise ValueError(f"exhaustive resampling infeasible for n={n}")
    grid = np.arange(total)
    sums = np.zeros(total)
    for _ in range(n):
        sums += v[grid % n]
        grid //= n
    return sums / n


def bca_bootstrap(v, statistic=np.mean, B: int = 1000, alpha: float = 0.05,
                  rng: np.random.Generator | None = None,
                  exhaustive: bool = False) -> AteResult:
    """Bias-corrected and accelerated bootstrap interval for a statistic.

    The bias correction z0 is the normal quantile of the fraction of
    replicates strictly below the point estimate (with half weight on
    ties); the acceleration comes from the jackknife skewness of the
    statistic. Endpoints are read from the replicate distribution at the
    adjusted percentiles.

    With ``exhaustive=True`` (mean statistic, tiny n only) the replicate
    set enumerates every one of the n**n resamples instead of Monte-Carlo
    draws, which makes the interval deterministic and rng-free.
    """
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    if n < 3:
        raise ValueError(f"need n >= 3 observations, got {n}")
    point = float(statistic(v))

    if exhaustive:
        if statistic is not np.mean:
            raise ValueError("exhaustive mode supports the mean statistic only")
        reps = _exhaustive_means(v)
        B = len(reps)
    else:
        if B < 100:
            raise ValueError(f"need B >= 100 replicates, got {B}")
        if rng is None:
            rng = np.random.default_rng(0)
        idx = rng.integers(0, n, size=(B, n))
        if statistic is np.mean:
            reps = v[idx].mean(axis=1)
        else:
            reps = np.array([statistic(v[idx[b]]) for b in range(B)])

    if np.ptp(reps) == 0.0:
        return AteResult(point=point, ci_low=float(reps[0]), ci_high=float(reps[0]),
                         alpha=alpha, replicates=B, z0=0.0, a=0.0, degenerate=True)

    frac_below = np.sum(reps < point) / B
    frac_below = min(max(frac_below, 1.0 / (2 * B)), 1.0 - 1.0 / (2 * B))
    z0 = float(norm.ppf(frac_below))
    if statistic is np.mean:
        a = _jackknife_acceleration(v)
    else:
        loo = np.array([statistic(np.delete(v, i)) for i in range(n)])
        d = loo.mean() - loo
        denom = (d**2).sum() ** 1.5
        a = float((d**3).sum() / (6.0 * denom)) if denom > 0 else 0.0

    p_lo, p_hi = bca_percentiles(z0, a, alpha)
    sorted_reps = np.sort(reps)
    lo = percentile_of_replicates(sorted_reps, p_lo)
    hi = percentile_of_replicates(sorted_reps, p_hi)
    return AteResult(point=point, ci_low=lo, ci_high=hi, alpha=alpha,
                     replicates=B, z0=z0, a=float(a))
