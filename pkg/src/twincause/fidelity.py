"""Audit of a synthetic cohort against its source: distributional fidelity,
correlation-structure preservation, and privacy/overfitting metrics.

All metrics are pure functions of the two tables (plus a seed for the
adversarial classifier) and invariant to row order. Continuous columns are
compared on their transform-standardized values, using the real table's
constants for both sides, so affine rescalings of the raw data cancel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cohort import CohortTable, transform_monetary
from .forest import ForestConfig, RegressionForest

__all__ = [
    "FidelityReport",
    "ks_average",
    "marginal_mape",
    "corr_frobenius_score",
    "distance_to_closest_record",
    "adversarial_accuracy",
    "audit",
]


@dataclass(frozen=True)
class FidelityReport:
    ks_avg: float
    marginal_mape: float
    corr_frob_score: float
    dcr: float
    dcr_p5: float
    adv_acc: float
    corr_frob_raw_diff: float

    def to_dict(self) -> dict:
        return {
            "ks_avg": self.ks_avg,
            "marginal_mape": self.marginal_mape,
            "corr_frob_score": self.corr_frob_score,
            "dcr": self.dcr,
            "dcr_p5": self.dcr_p5,
            "adv_acc": self.adv_acc,
            "corr_frob_raw_diff": self.corr_frob_raw_diff,
        }

    def summary(self) -> str:
        lines = [
            "synthetic-cohort audit",
            "----------------------",
            f"KS average score           {self.ks_avg:8.3f}  (1 = identical marginals)",
            f"marginal MAPE              {self.marginal_mape:8.3f}  (0 = identical histograms)",
            f"correlation Frobenius score{self.corr_frob_score:8.3f}  (1 = structure preserved)",
            f"distance to closest record {self.dcr:8.3f}  (median; 0 = clones)",
            f"  5th percentile DCR       {self.dcr_p5:8.3f}",
            f"adversarial accuracy       {self.adv_acc:8.3f}  (0.5 = indistinguishable)",
        ]
        return "\n".join(lines)


def _check_shared_schema(real: CohortTable, synth: CohortTable):
    if [c.name for c in real.schema] != [c.name for c in synth.schema]:
        raise ValueError("tables do not share a schema")
    if real.n == 0 or synth.n == 0:
        raise ValueError("both tables must be nonempty")


def _standardized_continuous(real: CohortTable, synth: CohortTable, name: str):
    """Both columns on the real table's transform-standardized scale."""
    spec = real.spec(name)
    r = real.values(name)
    s = synth.values(name)
    if spec.transform:
        r = transform_monetary(r, spec.transform)
        s = transform_monetary(s, spec.transform)
    mu, sd = r.mean(), r.std()
    sd = sd if sd > 0 else 1.0
    return (r - mu) / sd, (s - mu) / sd


def _ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic via the merged ECDF."""
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / len(a)
    Fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(Fa - Fb)))


def ks_average(real: CohortTable, synth: CohortTable) -> float:
    """Mean over continuous columns of 1 - two-sample KS distance."""
    _check_shared_schema(real, synth)
    names = [c.name for c in real.schema if c.kind == "continuous"]
    if not names:
        raise ValueError("no continuous columns to compare")
    scores = []
    for name in names:
        r, s = _standardized_continuous(real, synth, name)
        scores.append(1.0 - _ks_distance(r, s))
    return float(np.mean(scores))


def marginal_mape(real: CohortTable, synth: CohortTable, bins: int = 20,
                  columns=None) -> float:
    """Mean absolute percentage error between binned marginals.

    Continuous columns are histogrammed on the real column's quantile bin
    edges; categorical columns compare category frequencies. Bins with zero
    real mass are excluded. Degenerate single-valued columns are skipped
    with a warning. ``columns`` restricts the comparison to a subset.
    """
    _check_shared_schema(real, synth)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    col_errors = []
    for spec in real.schema:
        if columns is not None and spec.name not in columns:
            continue
        if spec.kind == "continuous":
            r, s = _standardized_continuous(real, synth, spec.name)
            if np.ptp(r) == 0.0:
                warnings.warn(f"column {spec.name!r} is degenerate; skipped")
                continue
            edges = np.quantile(r, np.linspace(0.0, 1.0, bins + 1))
            edges = np.unique(edges)
            edges[0], edges[-1] = -np.inf, np.inf
            pr, _ = np.histogram(r, bins=edges)
            ps, _ = np.histogram(s, bins=edges)
            pr = pr / len(r)
            ps = ps / len(s)
        else:
            rv = real.values(spec.name)
            sv = synth.values(spec.name)
            if spec.kind == "binary":
                levels = np.array([0.0, 1.0])
                pr = np.array([(rv == lv).mean() for lv in levels])
                ps = np.array([(sv == lv).mean() for lv in levels])
            else:
                K = len(spec.categories)
                pr = np.bincount(rv.astype(int), minlength=K) / len(rv)
                ps = np.bincount(sv.astype(int), minlength=K) / len(sv)
        ok = pr > 0
        if not ok.any():
            continue
        col_errors.append(float(np.mean(np.abs(ps[ok] - pr[ok]) / pr[ok])))
    if not col_errors:
        raise ValueError("no usable columns for the marginal MAPE")
    return float(np.mean(col_errors))


def _encoded_matrix(table: CohortTable, ref: CohortTable) -> np.ndarray:
    """Transform-standardized continuous columns plus one-hot categoricals,
    using the reference table's standardization constants."""
    blocks = []
    for spec in ref.schema:
        if spec.kind == "continuous":
            _, s = _standardized_continuous(ref, table, spec.name)
            blocks.append(s[:, None])
        elif spec.kind == "binary":
            blocks.append(table.values(spec.name)[:, None])
        else:
            codes = table.values(spec.name).astype(int)
            K = len(spec.categories)
            onehot = np.zeros((table.n, K))
            onehot[np.arange(table.n), codes] = 1.0
            blocks.append(onehot)
    return np.concatenate(blocks, axis=1)


def corr_frobenius_score(real: CohortTable, synth: CohortTable,
                         raw_difference: bool = False) -> float:
    """1 - ||C_real - C_synth||_F / ||C_real||_F on encoded columns,
    clamped to [0, 1]. Constant columns (undefined correlation) are
    excluded with a warning. ``raw_difference=True`` returns the
    unnormalized Frobenius difference instead of the score.
    """
    _check_shared_schema(real, synth)
    R = _encoded_matrix(real, real)
    S = _encoded_matrix(synth, real)
    keep = (R.std(axis=0) > 0) & (S.std(axis=0) > 0)
    if keep.sum() < 2:
        raise ValueError("need >= 2 non-constant encoded columns")
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} constant encoded columns excluded")
    Cr = np.corrcoef(R[:, keep].T)
    Cs = np.corrcoef(S[:, keep].T)
    diff = float(np.linalg.norm(Cr - Cs))
    if raw_difference:
        return diff
    score = 1.0 - diff / float(np.linalg.norm(Cr))
    return float(min(max(score, 0.0), 1.0))


def distance_to_closest_record(real: CohortTable, synth: CohortTable,
                               percentile: float | None = None,
                               columns=None) -> float:
    """Median (or given percentile) over synthetic rows of the smallest
    Gower-style distance to any real row: |standardized difference| for
    continuous columns, mismatch indicator for categoricals, averaged over
    columns. ``columns`` restricts the comparison to a subset."""
    _check_shared_schema(real, synth)
    specs = [c for c in real.schema if columns is None or c.name in columns]
    n_cols = len(specs)
    if n_cols == 0:
        raise ValueError("no columns selected")
    cont, disc = [], []
    for spec in specs:
        if spec.kind == "continuous":
            cont.append(_standardized_continuous(real, synth, spec.name))
        else:
            disc.append((real.values(spec.name), synth.values(spec.name)))

    mins = np.empty(synth.n)
    chunk = max(1, int(2e7) // max(real.n, 1))
    for lo in range(0, synth.n, chunk):
        hi = min(lo + chunk, synth.n)
        dist = np.zeros((hi - lo, real.n))
        for r, s in cont:
            dist += np.abs(s[lo:hi, None] - r[None, :])
        for rv, sv in disc:
            dist += sv[lo:hi, None] != rv[None, :]
        mins[lo:hi] = dist.min(axis=1)
    mins /= n_cols
    if percentile is None:
        return float(np.median(mins))
    return float(np.percentile(mins, percentile))


ADVERSARY_FOREST = ForestConfig(n_trees=50, max_depth=8, min_leaf=20)


def adversarial_accuracy(real: CohortTable, synth: CohortTable,
                         rng: np.random.Generator | None = None) -> float:
    """Holdout accuracy of a forest classifier telling real from synthetic.

    Rows are pooled (real = 0, synth = 1), shuffled, split 70/30, and a
    bagged-trees classifier (regression on the label, threshold 0.5) is
    scored on the holdout. Holdout rows whose feature vector exactly
    matches a training row are excluded from scoring (their prediction is
    contaminated by the duplicate's label rather than by distributional
    signal); if that leaves too few rows, all are scored. 0.5 means
    indistinguishable.
    """
    _check_shared_schema(real, synth)
    if real.n < 50 or synth.n < 50:
        raise ValueError("need >= 50 rows in both tables")
    if rng is None:
        rng = np.random.default_rng(0)
    Xr = _encoded_matrix(real, real)
    Xs = _encoded_matrix(synth, real)
    X = np.vstack([Xr, Xs])
    y = np.concatenate([np.zeros(real.n), np.ones(synth.n)])
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm]
    n_train = int(round(0.7 * len(y)))
    forest = RegressionForest(ADVERSARY_FOREST)
    forest.fit(X[:n_train], y[:n_train], rng)

    train_keys = {row.tobytes() for row in np.ascontiguousarray(X[:n_train])}
    hold = np.ascontiguousarray(X[n_train:])
    fresh = np.array([row.tobytes() not in train_keys for row in hold])
    if fresh.sum() < 20:
        fresh = np.ones(len(hold), dtype=bool)
    pred = (forest.predict(hold[fresh]) >= 0.5).astype(float)
    return float((pred == y[n_train:][fresh]).mean())


def audit(real: CohortTable, synth: CohortTable, rng: np.random.Generator | None = None,
          bins: int = 20) -> FidelityReport:
    """Run the full metric battery."""
    if rng is None:
        rng = np.random.default_rng(0)
    return FidelityReport(
        ks_avg=ks_average(real, synth),
        marginal_mape=marginal_mape(real, synth, bins=bins),
        corr_frob_score=corr_frobenius_score(real, synth),
        dcr=distance_to_closest_record(real, synth),
        dcr_p5=distance_to_closest_record(real, synth, percentile=5.0),
        adv_acc=adversarial_accuracy(real, synth, rng),
        corr_frob_raw_diff=corr_frobenius_score(real, synth, raw_difference=True),
    )
