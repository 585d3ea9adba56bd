"""Report emission: descriptive tables and the figure set with CSV sidecars.

Every figure gets a sidecar CSV holding exactly the numbers plotted. SVG
output is made reproducible by pinning the hash salt and stripping the
creation date.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from scipy import stats

from .cohort import CohortTable
from .pipeline import RunContext, write_csv

plt.rcParams["svg.hashsalt"] = "twincause"

_SAVEFIG = {"format": "svg", "metadata": {"Date": None}}


def _savefig(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def silverman_bandwidth(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    spread = min(v.std(), iqr / 1.34) if iqr > 0 else v.std()
    if spread <= 0:
        spread = max(abs(v.mean()), 1.0)
    return 0.9 * spread * n ** (-0.2)


def kde_curve(v: np.ndarray, grid_size: int = 256):
    h = silverman_bandwidth(v)
    lo, hi = v.min() - 3 * h, v.max() + 3 * h
    grid = np.linspace(lo, hi, grid_size)
    dens = stats.norm.pdf((grid[:, None] - v[None, :]) / h).mean(axis=1) / h
    return grid, dens


# -- descriptive tables --------------------------------------------------------


def descriptive_rows(table: CohortTable, group_mask: np.ndarray) -> list[list]:
    """Continuous mean/sd and categorical N/% for one group."""
    rows = []
    n_group = int(group_mask.sum())
    for spec in table.schema:
        observed = ~table.column_missing(spec.name) & group_mask
        if spec.kind == "continuous":
            v = table.values(spec.name)[observed]
            rows.append(["continuous", spec.name, "",
                         float(v.mean()) if len(v) else float("nan"),
                         float(v.std()) if len(v) else float("nan")])
        else:
            if spec.kind == "binary":
                levels = [(0.0, "0"), (1.0, "1")]
                vals = table.values(spec.name)
                for raw, label in levels:
                    cnt = int(((vals == raw) & observed).sum())
                    rows.append(["categorical", spec.name, label, cnt,
                                 100.0 * cnt / max(n_group, 1)])
            else:
                codes = table.values(spec.name)
                for ci, label in enumerate(spec.categories):
                    cnt = int(((codes == ci) & observed).sum())
                    rows.append(["categorical", spec.name, label, cnt,
                                 100.0 * cnt / max(n_group, 1)])
    return rows


def emit_descriptive_table(ctx: RunContext, table: CohortTable, name: str) -> None:
    pos = ctx.treatment_positive()
    treated = table.treated_mask(pos)
    rows = []
    for arm, mask in (("treated", treated), ("control", ~treated)):
        for row in descriptive_rows(table, mask):
            rows.append([arm] + row)
    path = ctx.record(ctx.out / f"descriptive_{name}.csv")
    write_csv(path, ["arm", "type", "variable", "level", "stat1", "stat2"], rows)

    lines = [f"baseline characteristics ({name})",
             f"treated N={int(treated.sum())}  control N={int((~treated).sum())}", ""]
    lines.append(f"{'variable':<22}{'level':<16}{'treated':>16}{'control':>16}")
    by_key = {}
    for row in rows:
        key = (row[1], row[2], row[3])
        by_key.setdefault(key, {})[row[0]] = row[4:6]
    for (typ, var, level), arms in by_key.items():
        tr = arms.get("treated", [float("nan"), float("nan")])
        co = arms.get("control", [float("nan"), float("nan")])
        if typ == "continuous":
            cell_t = f"{tr[0]:.1f} ({tr[1]:.1f})"
            cell_c = f"{co[0]:.1f} ({co[1]:.1f})"
        else:
            cell_t = f"{int(tr[0])} ({tr[1]:.1f}%)"
            cell_c = f"{int(co[0])} ({co[1]:.1f}%)"
        lines.append(f"{var:<22}{level:<16}{cell_t:>16}{cell_c:>16}")
    txt = ctx.record(ctx.out / f"descriptive_{name}.txt")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- figures -------------------------------------------------------------------


def fig_kde_shift(ctx: RunContext, outcome: str) -> None:
    cols = ctx.ites(outcome)
    y1 = np.asarray(cols["y1_hat"])
    y0 = np.asarray(cols["y0_hat"])
    from .causal import winsorize

    y1w, y0w = winsorize(y1), winsorize(y0)
    g0, d0 = kde_curve(y0w)
    g1, d1 = kde_curve(y1w)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(g0, d0, label="standard care (Y0)", color="#b2182b")
    ax.plot(g1, d1, label="intervention (Y1)", color="#2166ac")
    ax.fill_between(g0, d0, alpha=0.15, color="#b2182b")
    ax.fill_between(g1, d1, alpha=0.15, color="#2166ac")
    ax.set_xlabel(f"predicted {outcome}")
    ax.set_ylabel("density")
    ax.set_title(f"distribution shift: {outcome}")
    ax.legend()
    _savefig(fig, ctx.record(ctx.out / "figures" / f"kde_shift_{outcome}.svg"))
    rows = [[g0[i], d0[i], g1[i], d1[i]] for i in range(len(g0))]
    write_csv(ctx.record(ctx.out / "figures" / f"kde_shift_{outcome}.csv"),
              ["grid_y0", "density_y0", "grid_y1", "density_y1"], rows)


def _load_coef_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def fig_cate_forest(ctx: RunContext, outcome: str) -> None:
    rows = _load_coef_rows(ctx.out / f"cate_{outcome}.csv")
    names = [r["name"] for r in rows]
    est = np.array([float(r["estimate"]) for r in rows])
    se = np.array([float(r["se"]) for r in rows])
    df = np.array([float(r["df"]) for r in rows])
    crit = stats.t.ppf(0.975, np.maximum(df, 1.0))
    lo, hi = est - crit * se, est + crit * se
    ypos = np.arange(len(names))[::-1]
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(names) + 1.5))
    ax.errorbar(est, ypos, xerr=[est - lo, hi - est], fmt="o", color="#333333",
                ecolor="#888888", capsize=3)
    ax.axvline(0.0, color="#b2182b", linestyle="--", linewidth=1)
    ax.set_yticks(ypos)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel(f"conditional effect on {outcome}")
    ax.set_title("marginal conditional effects")
    _savefig(fig, ctx.record(ctx.out / "figures" / f"cate_forest_{outcome}.svg"))
    write_csv(ctx.record(ctx.out / "figures" / f"cate_forest_{outcome}.csv"),
              ["name", "estimate", "ci_low", "ci_high"],
              [[n, e, l, h] for n, e, l, h in zip(names, est, lo, hi)])


def fig_qte_lines(ctx: RunContext, outcome: str, max_lines: int = 6) -> None:
    rows = _load_coef_rows(ctx.out / f"qte_{outcome}.csv")
    taus = sorted({float(r["tau"]) for r in rows})
    names = []
    for r in rows:
        if r["name"] not in names:
            names.append(r["name"])
    keep = [n for n in names if n == "intercept" or ":" in n][:max_lines]
    series = {n: [next(float(r["estimate"]) for r in rows
                       if r["name"] == n and float(r["tau"]) == t)
                  for t in taus] for n in keep}
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, vals in series.items():
        ax.plot(taus, vals, marker="o", label=name)
    ax.axhline(0.0, color="#b2182b", linestyle="--", linewidth=1)
    ax.set_xlabel("quantile level")
    ax.set_ylabel(f"effect on {outcome}")
    ax.set_title("quantile treatment effects by level")
    ax.legend(fontsize=7)
    _savefig(fig, ctx.record(ctx.out / "figures" / f"qte_lines_{outcome}.svg"))
    csv_rows = []
    for name, vals in series.items():
        for t, v in zip(taus, vals):
            csv_rows.append([name, t, v])
    write_csv(ctx.record(ctx.out / "figures" / f"qte_lines_{outcome}.csv"),
              ["name", "tau", "estimate"], csv_rows)


def fig_sensitivity_contour(ctx: RunContext) -> None:
    path = ctx.out / "sensitivity_contour.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    r2d = sorted({float(r["r2_dz"]) for r in rows})
    r2y = sorted({float(r["r2_yz"]) for r in rows})
    tgrid = np.empty((len(r2d), len(r2y)))
    for r in rows:
        i = r2d.index(float(r["r2_dz"]))
        j = r2y.index(float(r["r2_yz"]))
        tgrid[i, j] = float(r["adjusted_t"])
    fig, ax = plt.subplots(figsize=(6, 5))
    cs = ax.contourf(r2d, r2y, tgrid.T, levels=14, cmap="RdBu_r")
    fig.colorbar(cs, ax=ax, label="adjusted t")
    lines = ax.contour(r2d, r2y, tgrid.T, levels=[0.0], colors="#b2182b")
    ax.clabel(lines, fmt="t=0")
    ax.set_xlabel("confounder partial R2 with exposure")
    ax.set_ylabel("confounder partial R2 with outcome")
    ax.set_title("unobserved-confounding contours")
    _savefig(fig, ctx.record(ctx.out / "figures" / "sensitivity_contour.svg"))
    write_csv(ctx.record(ctx.out / "figures" / "sensitivity_contour.csv"),
              ["r2_dz", "r2_yz", "adjusted_t"],
              [[r["r2_dz"], r["r2_yz"], float(r["adjusted_t"])] for r in rows])


def fig_wage_sweep(ctx: RunContext) -> None:
    with open(ctx.out / "wage_sweep.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    m = np.array([float(r["multiplier"]) for r in rows])
    nate = np.array([float(r["nate"]) for r in rows])
    lo = np.array([float(r["ci_low"]) for r in rows])
    hi = np.array([float(r["ci_high"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(m, nate, marker="o", color="#2166ac", label="net mean effect")
    ax.fill_between(m, lo, hi, alpha=0.2, color="#2166ac", label="95% CI")
    ax.axhline(0.0, color="red", linestyle="--", linewidth=1.2,
               label="zero-effect threshold")
    ax.set_xlabel("shadow-wage multiplier")
    ax.set_ylabel("net mean effect")
    ax.set_title("sensitivity of the net effect to the shadow wage")
    ax.legend()
    _savefig(fig, ctx.record(ctx.out / "figures" / "wage_sweep.svg"))
    write_csv(ctx.record(ctx.out / "figures" / "wage_sweep.csv"),
              ["multiplier", "nate", "ci_low", "ci_high"],
              [[a, b, c, d] for a, b, c, d in zip(m, nate, lo, hi)])


def emit_report(ctx: RunContext) -> None:
    """Emit every figure/table whose upstream artifacts exist."""
    emitted = False
    table = ctx.analysis_table()
    emit_descriptive_table(ctx, table, table.provenance)
    emitted = True
    if (ctx.out / "twins.csv").exists():
        emit_descriptive_table(ctx, ctx.twins(), "twins")
    for outcome in table.names(role="outcome"):
        if (ctx.out / f"ites_{outcome}.csv").exists():
            fig_kde_shift(ctx, outcome)
        if (ctx.out / f"cate_{outcome}.csv").exists():
            fig_cate_forest(ctx, outcome)
        if (ctx.out / f"qte_{outcome}.csv").exists():
            fig_qte_lines(ctx, outcome)
    if (ctx.out / "sensitivity_contour.csv").exists():
        fig_sensitivity_contour(ctx)
    if (ctx.out / "wage_sweep.csv").exists():
        fig_wage_sweep(ctx)
    if not emitted:
        import warnings

        warnings.warn("no artifacts available; nothing to report")
