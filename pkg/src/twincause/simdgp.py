"""Simulated cohorts with known treatment effects, for oracle verification.

The generated tables mimic an end-of-life survey cohort (age, functional
dependency, wealth quartile, welfare-regime factor, financial distress)
with a binary care intervention and three outcomes: out-of-pocket spend,
informal care hours, and the net burden they imply under per-country wage
and PPP tables. Per-row true effects are returned alongside so estimators
can be checked against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortTable, ColumnSpec, EconomicParams

REGIMES = ("Continental", "Eastern", "Nordic", "Southern")


@dataclass(frozen=True)
class EffectSpec:
    """Treatment effect on the net burden: constant, linear in the severity
    index, or zero."""

    kind: str  # "constant" | "linear" | "zero"
    c: float = 0.0
    a: float = 0.0
    b: float = 0.0

    def tau(self, severity: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(severity.shape, self.c)
        if self.kind == "linear":
            return self.a + self.b * severity
        if self.kind == "zero":
            return np.zeros(severity.shape)
        raise ValueError(f"unknown effect kind {self.kind!r}")

    def mean(self) -> float:
        """E[tau(x)] under severity ~ Uniform(0, 1)."""
        if self.kind == "constant":
            return self.c
        if self.kind == "linear":
            return self.a + self.b / 2.0
        if self.kind == "zero":
            return 0.0
        raise ValueError(f"unknown effect kind {self.kind!r}")


@dataclass(frozen=True)
class DgpConfig:
    n: int = 2000
    clusters: int = 8
    effect: EffectSpec = field(default_factory=lambda: EffectSpec("constant", c=-2000.0))
    confounding: float = 1.0
    outcome_noise: float = 3000.0
    missing_rate: float = 0.0
    zero_inflation: float = 0.0
    hours_share: float = 0.6  # fraction of the net effect routed through hours
    baseline_scale: float = 1.0  # scales the heterogeneous part of the baselines
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.missing_rate < 1.0):
            raise ValueError("missing_rate must be in [0, 1)")
        if not (0.0 <= self.zero_inflation < 1.0):
            raise ValueError("zero_inflation must be in [0, 1)")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if not (0.0 <= self.hours_share <= 1.0):
            raise ValueError("hours_share must be in [0, 1]")


def dgp_schema(clusters: int) -> tuple[ColumnSpec, ...]:
    cluster_labels = tuple(f"C{i:02d}" for i in range(clusters))
    return (
        ColumnSpec("age", "continuous", "covariate", unit="years"),
        ColumnSpec("adl", "continuous", "covariate", unit="score 0-6"),
        ColumnSpec("severity", "continuous", "covariate", unit="index 0-1"),
        ColumnSpec("distress", "continuous", "covariate", unit="score"),
        ColumnSpec("wealth_q", "categorical", "covariate",
                   categories=("Q1", "Q2", "Q3", "Q4")),
        ColumnSpec("regime", "categorical", "covariate", categories=REGIMES),
        ColumnSpec("era", "categorical", "stratum", categories=("pre", "during")),
        ColumnSpec("country", "categorical", "cluster", categories=cluster_labels),
        ColumnSpec("pc", "categorical", "treatment", categories=("no", "yes")),
        # outcomes are near-Gaussian by construction, so they enter the
        # generator standardized without a latent transform
        ColumnSpec("oop", "continuous", "outcome", unit="PPS euros"),
        ColumnSpec("hours", "continuous", "outcome", unit="hours/year"),
        ColumnSpec("net_burden", "continuous", "outcome", unit="PPS euros"),
    )


def dgp_economic_params(clusters: int, seed: int = 0) -> EconomicParams:
    """Per-country wage/PPP tables, fixed by the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xECC0]))
    labels = [f"C{i:02d}" for i in range(clusters)]
    wage = {lab: float(w) for lab, w in zip(labels, rng.uniform(14.0, 26.0, clusters))}
    ppp = {lab: float(p) for lab, p in zip(labels, rng.uniform(0.85, 1.15, clusters))}
    return EconomicParams(wage=wage, ppp=ppp)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def generate(cfg: DgpConfig) -> tuple[CohortTable, np.ndarray]:
    """Simulate a cohort; returns (table, true per-row net-burden effects).

    Treatment probability follows a logistic model in a standardized
    vulnerability index scaled by ``cfg.confounding`` (0 = randomized).
    Outcomes decompose the net effect into an hours component (monetized at
    the row's country wage/PPP) and a direct out-of-pocket component, so
    that ``net = oop + hours * wage / ppp`` holds exactly per row. A shared
    zero-inflation indicator forces all outcomes (and hence the true
    effect) to zero for the affected rows.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD69]))
    n = cfg.n
    params = dgp_economic_params(cfg.clusters, cfg.seed)

    age = np.clip(rng.normal(78.0, 9.6, n), 50.0, 102.0)
    adl = rng.binomial(6, 0.5, n).astype(float)
    severity = rng.uniform(0.0, 1.0, n)
    distress = np.round(np.abs(rng.normal(0.0, 20.0, n)), 2)
    wealth = rng.integers(0, 4, n).astype(np.int32)
    country = rng.integers(0, cfg.clusters, n).astype(np.int32)
    regime = (country % 4).astype(np.int32)
    era = (rng.uniform(size=n) < 0.35).astype(np.int32)

    # vulnerability index drives both treatment uptake and the baseline burden
    vul = (
        0.05 * (age - 78.0)
        + 3.0 * (adl - 3.0)
        + 8.0 * (severity - 0.5)
        - 2.5 * (wealth - 1.5)
    )
    vul_std = (vul - vul.mean()) / max(vul.std(), 1e-12)
    treat = (rng.uniform(size=n) < _sigmoid(cfg.confounding * vul_std)).astype(np.int32)

    labels = sorted(params.wage)
    wage_row = np.array([params.wage[labels[c]] for c in country])
    ppp_row = np.array([params.ppp[labels[c]] for c in country])
    rate = wage_row / ppp_row

    tau_net = cfg.effect.tau(severity)
    tau_hours = cfg.hours_share * tau_net / rate
    tau_oop = (1.0 - cfg.hours_share) * tau_net

    s = cfg.baseline_scale
    base_hours = 1500.0 + s * (
        180.0 * (adl - 3.0)
        + 600.0 * (severity - 0.5)
        + 4.0 * (age - 78.0)
        + np.array([0.0, 260.0, -120.0, 180.0])[regime]
    )
    base_oop = 2400.0 + s * (
        55.0 * (distress - 16.0)
        + 450.0 * (adl - 3.0)
        - 220.0 * (wealth - 1.5)
        + np.array([0.0, 300.0, -150.0, 120.0])[regime]
    )

    noise_hours = rng.normal(0.0, 0.5 * cfg.outcome_noise, n) / rate
    noise_oop = rng.normal(0.0, 0.5 * cfg.outcome_noise, n)

    zero = rng.uniform(size=n) < cfg.zero_inflation
    alive = (~zero).astype(float)

    hours = alive * (base_hours + tau_hours * treat + noise_hours)
    oop = alive * (base_oop + tau_oop * treat + noise_oop)
    net = oop + hours * rate

    # both potential outcomes share the noise draw, so the realized per-row
    # effect is exactly the structural one (zeroed where the row is inflated)
    true_ites = alive * tau_net

    schema = dgp_schema(cfg.clusters)
    columns = {
        "age": age, "adl": adl, "severity": severity, "distress": distress,
        "wealth_q": wealth, "regime": regime, "era": era, "country": country,
        "pc": treat, "oop": oop, "hours": hours, "net_burden": net,
    }
    mask = np.zeros((n, len(schema)), dtype=bool)
    if cfg.missing_rate > 0.0:
        maskable = [i for i, c in enumerate(schema)
                    if c.role not in ("treatment", "cluster")]
        for j in maskable:
            mask[:, j] = rng.uniform(size=n) < cfg.missing_rate
        # keep every column anchored by a healthy observed share
        for j in maskable:
            if mask[:, j].all():
                mask[0, j] = False
    table = CohortTable(schema, columns, mask, provenance="simulated")
    return table, true_ites


def true_ate(cfg: DgpConfig) -> float:
    """Analytic E[effect] under the covariate law (severity ~ U(0,1)),
    including the zero-inflation share of structurally zero effects."""
    return (1.0 - cfg.zero_inflation) * cfg.effect.mean()
