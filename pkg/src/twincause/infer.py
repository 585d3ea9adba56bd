"""Econometrics on the individual effect estimates.

Covers the least-squares heterogeneity model with CR2 cluster-robust
variance (leverage-corrected residuals, Satterthwaite-style degrees of
freedom), quantile regression on the asymmetric absolute loss with
xy-pair bootstrap standard errors, and stratified re-estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy import stats

from .cohort import CohortTable

__all__ = [
    "FormulaSpec",
    "DesignMatrix",
    "CoefTable",
    "build_design",
    "ols_cr2",
    "micro_jitter",
    "pinball_loss",
    "qreg_fit",
    "xy_pair_bootstrap",
    "stratified_fit",
    "significance_stars",
]

STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "+"))


def significance_stars(p: float) -> str:
    for cut, mark in STAR_THRESHOLDS:
        if p < cut:
            return mark
    return ""


@dataclass(frozen=True)
class FormulaSpec:
    """Regressor specification: dummy-coded factors plus raw covariates.

    ``factors`` maps a categorical column to its reference level; one dummy
    per non-reference level is emitted. ``covariates`` enter as-is.
    """

    factors: dict[str, str] = field(default_factory=dict)
    covariates: tuple[str, ...] = ()
    intercept: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "FormulaSpec":
        return cls(
            factors={k: v for k, v in doc.get("factors", {}).items()},
            covariates=tuple(doc.get("covariates", ())),
            intercept=bool(doc.get("intercept", True)),
        )


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    names: tuple[str, ...]
    cluster_ids: np.ndarray
    reference_levels: dict[str, str]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "DesignMatrix":
        return DesignMatrix(self.X[rows], self.names, self.cluster_ids[rows],
                            self.reference_levels)


@dataclass(frozen=True)
class CoefTable:
    names: tuple[str, ...]
    estimates: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    df: np.ndarray
    vcov: np.ndarray
    estimator_tag: str
    n: int
    r2: float
    tau: float | None = None

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {
            "name": name, "estimate": float(self.estimates[i]),
            "se": float(self.se[i]), "t": float(self.t[i]),
            "p": float(self.p[i]), "df": float(self.df[i]),
            "stars": significance_stars(float(self.p[i])),
        }

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_tag,
            "tau": self.tau,
            "n": self.n,
            "r2": self.r2,
            "coefficients": [self.row(name) for name in self.names],
        }


def build_design(table: CohortTable, formula: FormulaSpec) -> DesignMatrix:
    """Dummy-encode the formula against the cohort, with a rank check.

    Raises ValueError naming the collinear columns on rank deficiency.
    """
    cols, names = [], []
    if formula.intercept:
        cols.append(np.ones(table.n))
        names.append("intercept")
    for factor, ref in formula.factors.items():
        spec = table.spec(factor)
        if spec.kind != "categorical":
            raise ValueError(f"factor {factor!r} is not categorical")
        if ref not in spec.categories:
            raise ValueError(f"factor {factor!r}: unknown reference level {ref!r}")
        codes = table.values(factor)
        for level in spec.categories:
            if level == ref:
                continue
            cols.append((codes == spec.categories.index(level)).astype(float))
            names.append(f"{factor}:{level}")
    for cov in formula.covariates:
        spec = table.spec(cov)
        if spec.kind == "categorical":
            raise ValueError(f"covariate {cov!r} is categorical; declare it as a factor")
        cols.append(table.values(cov).astype(float))
        names.append(cov)
    if not cols:
        raise ValueError("formula produced an empty design")
    X = np.column_stack(cols)

    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        from scipy.linalg import qr

        _, _, piv = qr(X, mode="economic", pivoting=True)
        bad = sorted(names[j] for j in piv[rank:])
        raise ValueError(f"design is rank deficient; collinear columns: {bad}")

    cluster_codes = table.values(table.cluster_name)
    cluster_spec = table.spec(table.cluster_name)
    labels = np.array(cluster_spec.categories, dtype=object)
    return DesignMatrix(
        X=X, names=tuple(names), cluster_ids=labels[cluster_codes],
        reference_levels=dict(formula.factors),
    )


def _inv_sqrt_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a PSD matrix, pseudo-inverting
    eigenvalues that are numerically zero."""
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    w_adj = np.where(w > 1e-10, 1.0 / np.sqrt(np.clip(w, 1e-300, None)), 0.0)
    return (V * w_adj) @ V.T


def ols_cr2(design: DesignMatrix, y, df_rule: str = "satterthwaite") -> CoefTable:
    """Least squares with CR2 cluster-robust variance.

    Residuals are rescaled per cluster by the symmetric inverse square root
    of (I - H_gg) — the cluster generalization of the (1 - h_ii)^(-1/2)
    leverage correction — before entering the sandwich meat. Per-coefficient
    degrees of freedom follow the Satterthwaite approximation on the
    variance quadratic form; ``df_rule="clusters-1"`` uses G - 1 instead.
    With a single cluster the estimator falls back to HC2 with df = n - k.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    X = design.X
    n, k = X.shape
    if len(y) != n:
        raise ValueError("y length does not match design")
    if n <= k:
        raise ValueError(f"need n > k, got n={n}, k={k}")

    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < k:
        raise ValueError("singular normal equations")
    XtX_inv = np.linalg.inv(XtX)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta

    labels, cluster_idx = np.unique(design.cluster_ids, return_inverse=True)
    G = len(labels)
    single_cluster = G < 2
    if single_cluster:
        import warnings

        warnings.warn("single cluster: falling back to HC2 standard errors")
        groups = [np.array([i]) for i in range(n)]
    else:
        groups = [np.nonzero(cluster_idx == g)[0] for g in range(G)]
    G_eff = len(groups)

    meat = np.zeros((k, k))
    adjusted = []  # (rows, A_g) pairs reused by the df computation
    for rows in groups:
        Xg = X[rows]
        Ag = _inv_sqrt_psd(np.eye(len(rows)) - Xg @ XtX_inv @ Xg.T)
        sg = Xg.T @ (Ag @ resid[rows])
        meat += np.outer(sg, sg)
        adjusted.append((rows, Ag))

    vcov = XtX_inv @ meat @ XtX_inv
    vcov = (vcov + vcov.T) / 2.0
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    if single_cluster:
        df = np.full(k, float(n - k))
    elif df_rule == "satterthwaite":
        # V(beta_j) = sum_g (w_g' eps)^2 under iid errors, with resid =
        # (I - H) eps; df_j = tr(B)^2 / tr(B^2), B the Gram matrix of the
        # w_g = (I - H)' scatter(A_g X_g XtX_inv e_j).
        df = np.empty(k)
        for j in range(k):
            c = XtX_inv[:, j]
            W = np.zeros((n, G_eff))
            for g, (rows, Ag) in enumerate(adjusted):
                u = np.zeros(n)
                u[rows] = Ag @ (X[rows] @ c)
                W[:, g] = u - X @ (XtX_inv @ (X.T @ u))
            Bmat = W.T @ W
            tr = float(np.trace(Bmat))
            tr2 = float(np.sum(Bmat * Bmat))
            df[j] = tr**2 / tr2 if tr2 > 0 else float(max(G_eff - 1, 1))
    elif df_rule == "clusters-1":
        df = np.full(k, float(max(G_eff - 1, 1)))
    else:
        raise ValueError(f"unknown df_rule {df_rule!r}")

    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), 0.0)
    p = np.where(se > 0, 2.0 * stats.t.sf(np.abs(t), df), np.where(beta == 0, 1.0, 0.0))

    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    return CoefTable(
        names=design.names, estimates=beta, se=se, t=t, p=p, df=df, vcov=vcov,
        estimator_tag="ols-hc2" if single_cluster else "ols-cr2",
        n=n, r2=r2,
    )


def ols_classical(design: DesignMatrix, y) -> CoefTable:
    """Plain least squares with iid standard errors and df = n - k.

    This is the fit the omitted-variable-bias machinery consumes: its
    partial-R2 identities are exact only under the classical variance
    estimator.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    X = design.X
    n, k = X.shape
    if len(y) != n:
        raise ValueError("y length does not match design")
    if n <= k:
        raise ValueError(f"need n > k, got n={n}, k={k}")
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < k:
        raise ValueError("singular normal equations")
    XtX_inv = np.linalg.inv(XtX)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta
    df_val = n - k
    sigma2 = float(resid @ resid) / df_val
    vcov = sigma2 * XtX_inv
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), 0.0)
    p = np.where(se > 0, 2.0 * stats.t.sf(np.abs(t), df_val),
                 np.where(beta == 0, 1.0, 0.0))
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return CoefTable(
        names=design.names, estimates=beta, se=se, t=t, p=p,
        df=np.full(k, float(df_val)), vcov=vcov,
        estimator_tag="ols-classical", n=n, r2=r2,
    )


def micro_jitter(y, eps: float = 1e-4, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add elementwise Uniform(-eps, eps) noise to break exact ties."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if rng is None:
        rng = np.random.default_rng(0)
    y = np.asarray(y, dtype=np.float64)
    return y + rng.uniform(-eps, eps, size=y.shape)


def pinball_loss(u, tau: float):
    """Asymmetric absolute loss rho_tau(u) = u * (tau - 1[u < 0])."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    u = np.asarray(u, dtype=np.float64)
    out = u * (tau - (u < 0.0))
    return float(out) if out.ndim == 0 else out


def _pinball_objective(y, X, beta, tau):
    return float(np.sum(pinball_loss(y - X @ beta, tau)))


def subgradient_gap(X, y, beta, tau, zero_tol: float = 1e-9):
    """Per-regressor violation of the pinball subgradient condition.

    At an optimum, |sum_i x_ij * psi_tau(r_i)| over nonzero residuals must
    lie within the band sum_{r_i = 0} |x_ij| * max(tau, 1 - tau); the
    returned vector is the (clipped-at-zero) excess over that band.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    r = y - X @ np.asarray(beta, dtype=np.float64)
    scale = max(float(np.abs(r).max()), 1.0)
    at_zero = np.abs(r) <= zero_tol * scale
    psi = np.where(r > 0, tau, tau - 1.0)
    psi = np.where(at_zero, 0.0, psi)
    g = np.abs(X.T @ psi)
    band = np.abs(X[at_zero]).sum(axis=0) * max(tau, 1.0 - tau)
    return np.maximum(g - band, 0.0)


def _exact_quantile_intercept(y, tau):
    """Leftmost minimizer of the intercept-only pinball objective.

    For non-integer n*tau the minimizer is the ceil(n*tau)-th order
    statistic; for integer n*tau the optimum is the whole interval between
    the k-th and (k+1)-th order statistics and the lower endpoint is
    returned.
    """
    ys = np.sort(y)
    n = len(ys)
    k = n * tau
    if abs(k - round(k)) < 1e-9:
        idx = max(int(round(k)) - 1, 0)
    else:
        idx = int(np.ceil(k)) - 1
    return float(ys[idx])


_POLISH_MAX_CANDIDATES = 3200


def qreg_fit(design: DesignMatrix, y, tau: float, max_iter: int = 120,
             tol: float = 1e-11, beta0=None) -> np.ndarray:
    """Minimize the pinball objective by IRLS with annealed smoothing.

    The reweighting solves successive weighted least-squares problems with
    weights |tau - 1[r<0]| / max(|r|, eps), annealing eps down to 1e-6. For
    narrow designs a combinatorial polish then interpolates subsets of the
    observations nearest the fit (quantile-regression optima are basic
    solutions) and keeps the candidate with the lowest exact objective.
    Intercept-only designs use the closed-form sample quantile.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    y = np.asarray(y, dtype=np.float64).ravel()
    X = design.X
    n, k = X.shape
    if n <= k:
        raise ValueError(f"need n > k, got n={n}, k={k}")

    if k == 1 and np.all(X[:, 0] == 1.0):
        return np.array([_exact_quantile_intercept(y, tau)])

    if np.ptp(y) == 0.0:
        # constant outcome: put the value on a constant column when one
        # exists, so all replicate fits agree bit for bit
        const_cols = np.nonzero(X.std(axis=0) < 1e-12)[0]
        anchored = [j for j in const_cols if X[0, j] != 0.0]
        if anchored:
            beta = np.zeros(k)
            beta[anchored[0]] = y[0] / X[0, anchored[0]]
            return beta

    # standardize columns internally; smoothing floors are relative to the
    # outcome's robust scale so ties never blow up the reweighting
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd < 1e-12
    sd = np.where(const, np.maximum(np.abs(X).max(axis=0), 1.0), sd)
    mu = np.where(const, 0.0, mu)
    anchors = [j for j in np.nonzero(const)[0] if X[0, j] != 0.0]
    anchor_j = int(anchors[0]) if anchors else None
    c0 = float(X[0, anchor_j]) if anchor_j is not None else None
    if anchor_j is None:
        mu = np.zeros_like(mu)  # nothing can absorb a centering shift
    Xs = (X - mu) / sd
    y_scale = max(float(np.median(np.abs(y - np.median(y)))),
                  1e-12 * max(1.0, float(np.abs(y).max())), 1e-300)

    def to_std(b):
        b = np.asarray(b, dtype=np.float64)
        bs = b * sd
        if anchor_j is not None:
            bs[anchor_j] = sd[anchor_j] * (b[anchor_j] + float(mu @ b) / c0)
        return bs

    def from_std(bs):
        b = np.asarray(bs, dtype=np.float64) / sd
        if anchor_j is not None:
            b[anchor_j] -= float(mu @ b) / c0
        return b

    if beta0 is not None:
        beta_s = to_std(beta0)
        schedule = (1e-4, 1e-5, 1e-6)
    else:
        beta_s = np.linalg.lstsq(Xs, y, rcond=None)[0]
        schedule = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

    converged = False
    obj_prev = _pinball_objective(y, Xs, beta_s, tau)
    for eps in schedule:
        floor = eps * y_scale
        for _ in range(max_iter):
            r = y - Xs @ beta_s
            w = np.abs(tau - (r < 0.0)) / np.maximum(np.abs(r), floor)
            sw = np.sqrt(w)
            new_beta, *_ = np.linalg.lstsq(Xs * sw[:, None], y * sw, rcond=None)
            step = np.max(np.abs(new_beta - beta_s)) / max(1.0, np.max(np.abs(beta_s)))
            beta_s = new_beta
            if step < tol:
                converged = True
                break
            obj = _pinball_objective(y, Xs, beta_s, tau)
            if abs(obj_prev - obj) <= 1e-12 * max(1.0, abs(obj_prev)):
                # objective plateau: IRLS oscillates within float noise of
                # the optimum, which counts as converged
                converged = True
                obj_prev = obj
                break
            obj_prev = obj

    if not converged:
        # accept if the subgradient optimality band holds to a loose tolerance
        gap = subgradient_gap(Xs, y, beta_s, tau, zero_tol=1e-5)
        if np.all(gap <= 1e-4 * np.abs(Xs).sum(axis=0) + 1e-12):
            converged = True

    beta = from_std(beta_s)
    best = beta
    best_obj = _pinball_objective(y, X, beta, tau)
    if not np.isfinite(best_obj):
        raise RuntimeError(
            f"quantile regression diverged; final objective {best_obj}")

    n_cand = min(2 * k + 3, n)
    if comb(n_cand, k) <= _POLISH_MAX_CANDIDATES:
        for _ in range(3):
            improved = False
            r = np.abs(y - X @ best)
            cand_rows = np.argsort(r, kind="stable")[:n_cand]
            for rows in combinations(cand_rows, k):
                Xb = X[list(rows)]
                try:
                    cand = np.linalg.solve(Xb, y[list(rows)])
                except np.linalg.LinAlgError:
                    continue
                obj = _pinball_objective(y, X, cand, tau)
                if obj < best_obj - 1e-12 * max(1.0, best_obj):
                    best, best_obj, improved = cand, obj, True
            if not improved:
                break
        converged = True

    if not converged:
        raise RuntimeError(
            f"quantile regression did not converge; final objective {best_obj:.8g}"
        )
    return best


def qreg_pseudo_r2(design: DesignMatrix, y, beta, tau: float) -> float:
    """1 - pinball(fit) / pinball(intercept-only); can be negative."""
    y = np.asarray(y, dtype=np.float64).ravel()
    fit_loss = _pinball_objective(y, design.X, beta, tau)
    b0 = _exact_quantile_intercept(y, tau)
    null_loss = float(np.sum(pinball_loss(y - b0, tau)))
    if null_loss == 0.0:
        return 1.0 if fit_loss == 0.0 else -np.inf
    return 1.0 - fit_loss / null_loss


def xy_pair_bootstrap(design: DesignMatrix, y, tau: float, B: int = 1000,
                      rng: np.random.Generator | None = None,
                      max_failure_rate: float = 0.05) -> CoefTable:
    """Quantile-regression coefficients with xy-pair bootstrap SEs.

    Rows (x_i, y_i) are resampled with replacement B times and the model is
    refit on each replicate (warm-started from the full-sample fit); the SE
    is the replicate standard deviation and p-values use the normal
    approximation. Aborts if more than ``max_failure_rate`` of the
    replicate fits fail.
    """
    if B < 100:
        raise ValueError(f"need B >= 100 replicates, got {B}")
    y = np.asarray(y, dtype=np.float64).ravel()
    if rng is None:
        rng = np.random.default_rng(0)
    beta = qreg_fit(design, y, tau)
    n, k = design.X.shape

    reps = np.empty((B, k))
    failures = 0
    for b in range(B):
        rows = rng.integers(0, n, size=n)
        sub = design.subset(rows)
        try:
            reps[b] = qreg_fit(sub, y[rows], tau, beta0=beta)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            reps[b] = np.nan
            failures += 1
    if failures > max_failure_rate * B:
        raise RuntimeError(f"xy-pair bootstrap: {failures}/{B} replicate fits failed")
    ok = ~np.isnan(reps[:, 0])
    se = reps[ok].std(axis=0, ddof=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), 0.0)
    p = np.where(se > 0, 2.0 * stats.norm.sf(np.abs(t)), np.where(beta == 0, 1.0, 0.0))
    df = np.full(k, float(ok.sum() - 1))
    vcov = np.atleast_2d(np.cov(reps[ok].T, ddof=1))

    return CoefTable(
        names=design.names, estimates=beta, se=se, t=t, p=p, df=df, vcov=vcov,
        estimator_tag="qreg-xyboot", n=n,
        r2=qreg_pseudo_r2(design, y, beta, tau), tau=tau,
    )


def stratified_fit(table: CohortTable, stratum: str, fit_fn,
                   min_stratum_size: int = 2) -> list[tuple[str, object]]:
    """Run ``fit_fn(subtable, row_indices)`` independently per stratum level.

    Returns (level, result) pairs in declared category order; exactly
    equivalent to manual subsetting.
    """
    spec = table.spec(stratum)
    if spec.kind != "categorical":
        raise ValueError(f"stratum column {stratum!r} must be categorical")
    codes = table.values(stratum)
    out = []
    for code, level in enumerate(spec.categories):
        rows = np.nonzero(codes == code)[0]
        if len(rows) == 0:
            raise ValueError(f"stratum {level!r} is empty")
        if len(rows) < min_stratum_size:
            raise ValueError(
                f"stratum {level!r} has {len(rows)} rows, below minimum {min_stratum_size}"
            )
        out.append((level, fit_fn(table.subset(rows), rows)))
    return out
