"""Pipeline orchestration: stages, artifacts, and the run manifest.

Stages execute in a fixed order (simulate/load -> select -> impute ->
synth -> audit -> estimate -> cate -> qte -> sense -> report), each
reading its inputs from the output directory and writing its artifacts
there. Every stage derives its random stream from the global seed and a
fixed per-stage offset, so toggling stages on or off never shifts another
stage's stream. A manifest with input hashes, the seed, and artifact
hashes is written at the end of a successful run.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import causal, fidelity, impute, infer, sense, simdgp, synth
from .cohort import (
    CohortTable,
    EconomicParams,
    SelectionRules,
    load_cohort,
    load_manifest,
    manifest_dict,
    save_cohort,
)

STAGE_ORDER = ("simulate", "select", "impute", "synth", "audit",
               "estimate", "cate", "qte", "sense", "report")

# fixed per-stage seed offsets
_STAGE_SEED = {name: i + 1 for i, name in enumerate(STAGE_ORDER)}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    stages: dict[str, dict] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    threads: int = 1

    @classmethod
    def from_file(cls, path, seed=None, out_dir=None, threads=None) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_dict(doc, seed=seed, out_dir=out_dir, threads=threads)

    @classmethod
    def from_dict(cls, doc: dict, seed=None, out_dir=None, threads=None) -> "PipelineConfig":
        if seed is None:
            seed = doc.get("seed")
        if seed is None:
            raise ConfigError("a global seed is mandatory (config 'seed' or --seed)")
        out = out_dir or doc.get("out_dir")
        if out is None:
            raise ConfigError("an output directory is mandatory ('out_dir' or --out)")
        cfg = cls(
            seed=int(seed), out_dir=Path(out),
            stages=dict(doc.get("stages", {})),
            inputs=dict(doc.get("inputs", {})),
            threads=int(threads if threads is not None else doc.get("threads", 1)),
        )
        cfg.validate()
        return cfg

    def validate(self):
        for name in self.stages:
            if name not in STAGE_ORDER:
                raise ConfigError(f"unknown stage {name!r}")
        for key, path in self.inputs.items():
            if key not in ("cohort_csv", "manifest", "economic_params"):
                raise ConfigError(f"unknown input key {key!r}")
            if not Path(path).exists():
                raise ConfigError(f"input path does not exist: {path}")
        if not self.stage_enabled("simulate") and self.stages_enabled():
            needs_cohort = any(self.stage_enabled(s) for s in STAGE_ORDER[1:])
            if needs_cohort and "cohort_csv" not in self.inputs:
                have = (self.out_dir / "cohort.csv").exists()
                if not have:
                    raise ConfigError(
                        "no cohort source: enable the simulate stage, provide "
                        "inputs.cohort_csv, or point out_dir at a prior run"
                    )

    def stage_enabled(self, name: str) -> bool:
        block = self.stages.get(name)
        if block is None:
            return False
        return bool(block.get("enabled", True))

    def stages_enabled(self) -> list[str]:
        return [s for s in STAGE_ORDER if self.stage_enabled(s)]

    def stage_params(self, name: str) -> dict:
        block = dict(self.stages.get(name) or {})
        block.pop("enabled", None)
        return block

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "out_dir": str(self.out_dir),
            "threads": self.threads, "inputs": dict(self.inputs),
            "stages": self.stages,
        }


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


@dataclass
class RunContext:
    cfg: PipelineConfig
    artifacts: list[Path] = field(default_factory=list)
    cache: dict = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return self.cfg.out_dir

    def rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, _STAGE_SEED[stage]]))

    def record(self, path: Path) -> Path:
        self.artifacts.append(path)
        return path

    # -- shared artifact loading -------------------------------------------

    def manifest_path(self) -> Path:
        if "manifest" in self.cfg.inputs:
            return Path(self.cfg.inputs["manifest"])
        return self.out / "schema_manifest.json"

    def cohort(self) -> CohortTable:
        if "cohort" not in self.cache:
            csv_path = Path(self.cfg.inputs.get("cohort_csv", self.out / "cohort.csv"))
            self.cache["cohort"] = load_cohort(csv_path, str(self.manifest_path()))
        return self.cache["cohort"]

    def analysis_table(self) -> CohortTable:
        """Cohort after selection/imputation, whichever ran most recently."""
        for key in ("imputed_primary", "selected", "cohort"):
            if key in self.cache:
                return self.cache[key]
        for name, key in (("imputed_01.csv", "imputed_primary"),
                          ("analysis_cohort.csv", "selected")):
            path = self.out / name
            if path.exists():
                self.cache[key] = load_cohort(path, str(self.manifest_path()))
                return self.cache[key]
        return self.cohort()

    def economic_params(self) -> EconomicParams:
        if "econ" not in self.cache:
            path = Path(self.cfg.inputs.get("economic_params",
                                            self.out / "economic_params.json"))
            self.cache["econ"] = EconomicParams.from_json(path)
        return self.cache["econ"]

    def twins(self) -> CohortTable:
        if "twins" not in self.cache:
            self.cache["twins"] = load_cohort(self.out / "twins.csv",
                                              str(self.manifest_path()))
        return self.cache["twins"]

    def treatment_positive(self) -> str:
        man = load_manifest(str(self.manifest_path()))
        pos = man.get("treatment_positive")
        if pos:
            return pos
        table = self.analysis_table()
        spec = table.spec(table.treatment_name)
        return spec.categories[-1] if spec.kind == "categorical" else "1"

    def ites(self, outcome: str) -> dict[str, np.ndarray]:
        path = self.out / f"ites_{outcome}.csv"
        if not path.exists():
            raise FileNotFoundError(
                f"missing artifact {path.name}; run the estimate stage first")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(x) for x in row] for row in reader])
        return {name: rows[:, j] for j, name in enumerate(header)}


# -- stages -------------------------------------------------------------------


def stage_simulate(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("simulate")
    eff = p.get("effect", {"kind": "constant", "c": -2000.0})
    cfg = simdgp.DgpConfig(
        n=int(p.get("n", 2000)),
        clusters=int(p.get("clusters", 6)),
        effect=simdgp.EffectSpec(
            kind=eff.get("kind", "constant"), c=float(eff.get("c", 0.0)),
            a=float(eff.get("a", 0.0)), b=float(eff.get("b", 0.0))),
        confounding=float(p.get("confounding", 1.0)),
        outcome_noise=float(p.get("outcome_noise", 3000.0)),
        missing_rate=float(p.get("missing_rate", 0.0)),
        zero_inflation=float(p.get("zero_inflation", 0.0)),
        hours_share=float(p.get("hours_share", 0.6)),
        seed=ctx.cfg.seed,
    )
    table, true_ites = simdgp.generate(cfg)
    params = simdgp.dgp_economic_params(cfg.clusters, cfg.seed)

    save_cohort(table, ctx.record(ctx.out / "cohort.csv"))
    write_json(ctx.record(ctx.out / "schema_manifest.json"),
               manifest_dict(table.schema, treatment_positive="yes"))
    write_json(ctx.record(ctx.out / "economic_params.json"), params.to_json_dict())
    write_json(ctx.record(ctx.out / "truth.json"), {
        "true_ate": simdgp.true_ate(cfg),
        "true_ites_mean": float(true_ites.mean()),
        "effect": eff, "n": cfg.n, "clusters": cfg.clusters,
        "confounding": cfg.confounding, "outcome_noise": cfg.outcome_noise,
        "zero_inflation": cfg.zero_inflation, "missing_rate": cfg.missing_rate,
    })
    write_csv(ctx.record(ctx.out / "true_ites.csv"), ["true_ite"],
              [[v] for v in true_ites])
    ctx.cache["cohort"] = table


def stage_select(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("select")
    man = load_manifest(str(ctx.manifest_path()))
    rules = man.get("selection")
    if rules is None:
        rules = SelectionRules(
            treatment_positive=p["treatment_positive"],
            reason_column=p["reason_column"],
            retain_reasons=tuple(p["retain_reasons"]),
        )
    from .cohort import select_analysis_sample

    table = select_analysis_sample(ctx.cohort(), rules)
    save_cohort(table, ctx.record(ctx.out / "analysis_cohort.csv"))
    ctx.cache["selected"] = table


def stage_impute(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("impute")
    table = ctx.analysis_table()
    result = impute.impute_pmm(
        table, m=int(p.get("m", 5)), iterations=int(p.get("iterations", 10)),
        donor_k=int(p.get("donor_k", 5)), rng=ctx.rng("impute"),
    )
    for i, completed in enumerate(result.completed, start=1):
        save_cohort(completed, ctx.record(ctx.out / f"imputed_{i:02d}.csv"))
    ctx.cache["imputed_primary"] = result.completed[0]

    # FMI on a quick pooled linear model of the primary outcome
    diagnostics = {"m": result.m, "iterations": result.iterations,
                   "donor_k": result.donor_k, "fmi": {}}
    outcome = p.get("fmi_outcome", "net_burden")
    formula = infer.FormulaSpec(covariates=tuple(
        c.name for c in table.schema
        if c.role == "covariate" and c.kind != "categorical"))
    try:
        per_imp = []
        for completed in result.completed:
            design = infer.build_design(completed, formula)
            fit = infer.ols_classical(design, completed.values(outcome))
            per_imp.append((fit.estimates, fit.se**2))
        names = infer.build_design(result.completed[0], formula).names
        fmis = {}
        for j, name in enumerate(names):
            diag = impute.pool_fmi([(est[j], var[j]) for est, var in per_imp])
            fmis[name] = diag.fmi
        diagnostics["fmi"] = fmis
        diagnostics["fmi_mean"] = float(np.mean(list(fmis.values())))
    except (KeyError, ValueError):
        diagnostics["fmi"] = {}
    if result.chain_means:
        last_two = {
            name: float(abs(arr[:, -1].mean() - arr[:, -2].mean())
                        / max(abs(arr[:, -2].mean()), 1e-12))
            for name, arr in result.chain_means.items() if arr.shape[1] >= 2
        }
        diagnostics["chain_relative_change"] = last_two
    write_json(ctx.record(ctx.out / "impute_diagnostics.json"), diagnostics)


def stage_synth(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("synth")
    table = ctx.analysis_table()
    dcfg = synth.DiffusionConfig(
        timesteps=int(p.get("timesteps", 1000)),
        noise_schedule=p.get("noise_schedule", "cosine"),
        epochs=int(p.get("epochs", 3000)),
        batch_size=int(p.get("batch_size", 256)),
        hidden_layout=tuple(p.get("hidden_layout", (256, 256, 256))),
        learning_rate=float(p.get("learning_rate", 2e-3)),
        optimizer=p.get("optimizer", "adam"),
        lr_decay=bool(p.get("lr_decay", True)),
        ema_decay=float(p.get("ema_decay", 0.999)),
        predict=p.get("predict", "x0"),
        time_embed_dim=int(p.get("time_embed_dim", 32)),
    )
    rng = ctx.rng("synth")
    model = synth.fit_diffusion(table, dcfg, rng)
    synth.save_model(model, ctx.record(ctx.out / "model.npz"))
    n_samples = int(p.get("samples", 30000))
    twins = synth.sample_twins(
        model, n_samples, rng,
        balance_arms=bool(p.get("balance_arms", False)),
        treatment_positive=ctx.treatment_positive(),
    )
    twins = _recompose_net_burden(ctx, twins)
    save_cohort(twins, ctx.record(ctx.out / "twins.csv"))
    write_json(ctx.record(ctx.out / "synth_log.json"), {
        "loss_first_epoch": model.train_loss_trace[0],
        "loss_last_epoch": model.train_loss_trace[-1],
        "epochs": dcfg.epochs, "timesteps": dcfg.timesteps,
        "samples": n_samples,
    })
    ctx.cache["twins"] = twins


def _recompose_net_burden(ctx: RunContext, twins: CohortTable) -> CohortTable:
    """Re-derive the net burden of sampled twins from their sampled oop and
    hours under the per-country wage/PPP tables, so the accounting identity
    holds row by row. Skipped when the schema lacks the three columns or no
    economic-params artifact is available."""
    names = {c.name for c in twins.schema}
    if not {"oop", "hours", "net_burden"} <= names or twins.n == 0:
        return twins
    try:
        params = ctx.economic_params()
    except FileNotFoundError:
        return twins
    spec = twins.spec(twins.cluster_name)
    labels = np.array(spec.categories, dtype=object)[twins.values(twins.cluster_name)]
    wage = np.array([params.wage[c] for c in labels])
    ppp = np.array([params.ppp[c] for c in labels])
    hours = np.clip(twins.values("hours"), 0.0, params.hours_cap)
    # oop is already PPS-deflated in this schema, so only hours are re-priced
    net = twins.values("oop") + hours * wage / ppp
    return twins.with_columns({"hours": hours, "net_burden": net})


def stage_audit(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("audit")
    report = fidelity.audit(ctx.analysis_table(), ctx.twins(),
                            rng=ctx.rng("audit"), bins=int(p.get("bins", 20)))
    write_json(ctx.record(ctx.out / "fidelity.json"), report.to_dict())
    path = ctx.record(ctx.out / "fidelity.txt")
    path.write_text(report.summary() + "\n", encoding="utf-8")


def stage_estimate(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("estimate")
    table = ctx.analysis_table()
    twins = ctx.twins()
    outcomes = list(p.get("outcomes") or table.names(role="outcome"))
    fcfg_doc = p.get("forest", {})
    fcfg = causal.ForestConfig(
        n_trees=int(fcfg_doc.get("n_trees", 100)),
        max_depth=int(fcfg_doc.get("max_depth", 15)),
        min_leaf=int(fcfg_doc.get("min_leaf", 5)),
        features_per_split=fcfg_doc.get("features_per_split", "all"),
        bootstrap=bool(fcfg_doc.get("bootstrap", True)),
    )
    low_q, high_q = p.get("winsor", (0.01, 0.99))
    B = int(p.get("bootstrap_b", 1000))
    alpha = float(p.get("alpha", 0.05))
    pos = ctx.treatment_positive()
    if bool(p.get("pool_empirical", False)):
        pooled = {
            name: np.concatenate([twins.values(name), table.values(name)])
            for name in twins.columns
        }
        mask = np.zeros((twins.n + table.n, len(twins.schema)), dtype=bool)
        twins = CohortTable(twins.schema, pooled, mask, provenance="synthetic")

    rng = ctx.rng("estimate")
    for outcome in outcomes:
        sub_fit, sub_boot = rng.spawn(2)
        pair = causal.fit_tlearner(twins, outcome, fcfg, sub_fit,
                                   treatment_positive=pos)
        ite = causal.gcompute_ite(pair, table, outcome)
        wite = causal.winsorize_ites(ite, float(low_q), float(high_q))
        ate = causal.bca_bootstrap(wite.deltas, np.mean, B=B, alpha=alpha,
                                   rng=sub_boot)
        write_csv(ctx.record(ctx.out / f"ites_{outcome}.csv"),
                  ["delta", "delta_winsorized", "y1_hat", "y0_hat"],
                  zip(ite.deltas, wite.deltas, ite.y1, ite.y0))
        doc = ate.to_dict()
        doc["outcome"] = outcome
        doc["winsor_bounds"] = list(wite.winsor_bounds)
        write_json(ctx.record(ctx.out / f"ate_{outcome}.json"), doc)


def _cate_formula(ctx: RunContext, p: dict) -> infer.FormulaSpec:
    if "formula" in p:
        return infer.FormulaSpec.from_dict(p["formula"])
    table = ctx.analysis_table()
    factors = {}
    covariates = []
    for spec in table.schema:
        if spec.role not in ("covariate", "stratum"):
            continue
        if spec.kind == "categorical":
            factors[spec.name] = spec.categories[0]
        else:
            covariates.append(spec.name)
    return infer.FormulaSpec(factors=factors, covariates=tuple(covariates))


def stage_cate(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("cate")
    table = ctx.analysis_table()
    outcomes = list(p.get("outcomes") or table.names(role="outcome"))
    formula = _cate_formula(ctx, p)
    df_rule = p.get("df_rule", "satterthwaite")
    design = infer.build_design(table, formula)
    for outcome in outcomes:
        deltas = ctx.ites(outcome)["delta_winsorized"]
        fit = infer.ols_cr2(design, deltas, df_rule=df_rule)
        write_json(ctx.record(ctx.out / f"cate_{outcome}.json"), fit.to_dict())
        write_csv(ctx.record(ctx.out / f"cate_{outcome}.csv"),
                  ["name", "estimate", "se", "t", "p", "df", "stars"],
                  [[r["name"], r["estimate"], r["se"], r["t"], r["p"], r["df"],
                    r["stars"]] for r in fit.to_dict()["coefficients"]])
        stratum = p.get("stratify")
        if stratum:
            deltas_arr = np.asarray(deltas)
            # the stratum is constant within each subset, so it leaves the formula
            sub_formula = infer.FormulaSpec(
                factors={k: v for k, v in formula.factors.items() if k != stratum},
                covariates=tuple(c for c in formula.covariates if c != stratum),
                intercept=formula.intercept,
            )

            def fit_stratum(subtable, rows):
                sub_design = infer.build_design(subtable, sub_formula)
                return infer.ols_cr2(sub_design, deltas_arr[rows], df_rule=df_rule)

            results = infer.stratified_fit(table, stratum, fit_stratum)
            doc = {level: fit.to_dict() for level, fit in results}
            write_json(ctx.record(ctx.out / f"cate_{outcome}_by_{stratum}.json"), doc)


def stage_qte(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("qte")
    table = ctx.analysis_table()
    outcome = p.get("outcome", "net_burden")
    taus = [float(t) for t in p.get("taus", (0.5, 0.75, 0.9))]
    B = int(p.get("b", 1000))
    jitter_eps = p.get("jitter", 1e-4)
    formula = _cate_formula(ctx, p)
    design = infer.build_design(table, formula)
    deltas = ctx.ites(outcome)["delta_winsorized"]
    rng = ctx.rng("qte")
    if jitter_eps:
        deltas = infer.micro_jitter(deltas, float(jitter_eps), rng)
    fits = {}
    for tau in taus:
        fits[tau] = infer.xy_pair_bootstrap(design, deltas, tau, B=B,
                                            rng=rng.spawn(1)[0])
    write_json(ctx.record(ctx.out / f"qte_{outcome}.json"),
               {str(tau): fit.to_dict() for tau, fit in fits.items()})
    rows = []
    for tau, fit in fits.items():
        for r in fit.to_dict()["coefficients"]:
            rows.append([tau, r["name"], r["estimate"], r["se"], r["t"],
                         r["p"], r["stars"], fit.r2])
    write_csv(ctx.record(ctx.out / f"qte_{outcome}.csv"),
              ["tau", "name", "estimate", "se", "t", "p", "stars", "pseudo_r2"],
              rows)


def stage_sense(ctx: RunContext) -> None:
    p = ctx.cfg.stage_params("sense")
    table = ctx.analysis_table()
    formula = _cate_formula(ctx, p)
    design = infer.build_design(table, formula)
    outcome = p.get("outcome", "net_burden")
    deltas = np.asarray(ctx.ites(outcome)["delta_winsorized"])

    fit = infer.ols_classical(design, deltas)
    coef = p.get("coefficient")
    if coef is None:
        # default: largest |t| among non-intercept coefficients
        cand = [(abs(fit.t[i]), name) for i, name in enumerate(fit.names)
                if name != "intercept"]
        coef = max(cand)[1]
    benchmark = p.get("benchmark")
    if benchmark is None:
        benchmark = next(name for name in fit.names
                         if name not in ("intercept", coef))
    j = fit.names.index(coef)
    bj = fit.names.index(benchmark)
    r2_dz, r2_yz = sense.benchmark_partials(design.X, deltas, j, bj)
    report = sense.sensitivity_report(
        fit, coef, r2_dz, r2_yz, alpha=float(p.get("alpha", 0.05)),
        grid_points=int(p.get("grid_points", 21)))
    doc = report.to_dict()
    doc["benchmark"] = {"name": benchmark, "r2_dz": r2_dz, "r2_yz": r2_yz}
    write_json(ctx.record(ctx.out / "sensitivity.json"), doc)
    axis = report.contour_r2
    rows = []
    for a, r2d in enumerate(axis):
        for b, r2y in enumerate(axis):
            rows.append([r2d, r2y, report.contour_t[a, b],
                         report.contour_estimate[a, b]])
    write_csv(ctx.record(ctx.out / "sensitivity_contour.csv"),
              ["r2_dz", "r2_yz", "adjusted_t", "adjusted_estimate"], rows)

    # shadow-wage sweep over the oop/hours effect vectors
    params = ctx.economic_params()
    d_oop = ctx.ites("oop")["delta"]
    d_hours = ctx.ites("hours")["delta"]
    cluster_labels = np.array(
        table.spec(table.cluster_name).categories, dtype=object
    )[table.values(table.cluster_name)]
    multipliers = tuple(float(m) for m in p.get("multipliers",
                                                sense.DEFAULT_MULTIPLIERS))
    sweep = sense.wage_sweep(
        causal.IteVector(deltas=d_oop, outcome_name="oop"),
        causal.IteVector(deltas=d_hours, outcome_name="hours"),
        params, cluster_labels, multipliers=multipliers,
        rng=ctx.rng("sense"), B=int(p.get("b", 1000)),
    )
    write_json(ctx.record(ctx.out / "wage_sweep.json"), sweep.to_dict())
    write_csv(ctx.record(ctx.out / "wage_sweep.csv"),
              ["multiplier", "nate", "ci_low", "ci_high"],
              [[m, r.point, r.ci_low, r.ci_high]
               for m, r in zip(sweep.multipliers, sweep.nate)])


def stage_report(ctx: RunContext) -> None:
    from . import report as report_mod

    report_mod.emit_report(ctx)


_STAGE_FN = {
    "simulate": stage_simulate,
    "select": stage_select,
    "impute": stage_impute,
    "synth": stage_synth,
    "audit": stage_audit,
    "estimate": stage_estimate,
    "cate": stage_cate,
    "qte": stage_qte,
    "sense": stage_sense,
    "report": stage_report,
}


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the enabled stages in order; returns the run manifest."""
    cfg.validate()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg=cfg)
    ran = []
    for stage in STAGE_ORDER:
        if not cfg.stage_enabled(stage):
            continue
        fn = _STAGE_FN[stage]
        try:
            fn(ctx)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        ran.append(stage)

    manifest = {
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config_sha256": hashlib.sha256(
            json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest(),
        "inputs": {k: _sha256_file(Path(v)) for k, v in cfg.inputs.items()},
        "stages_run": ran,
        "artifacts": {
            str(p.relative_to(cfg.out_dir)): _sha256_file(p)
            for p in sorted(set(ctx.artifacts))
        },
    }
    write_json(cfg.out_dir / "run_manifest.json", manifest)
    return manifest
