"""Cohort data model, analysis-sample selection, and outcome monetization.

The cohort table is a rectangular mixed-type dataset with an explicit
missingness mask. Continuous and binary columns are stored as float64,
categorical columns as integer codes into a declared category list.
Tables are immutable after construction; every operation returns a new
table.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

KINDS = ("continuous", "categorical", "binary")
ROLES = ("covariate", "outcome", "treatment", "cluster", "stratum", "weight-free")
TRANSFORMS = ("arcsinh", "log1p")

#: Default map from care-frequency label to an hours-per-year band.
#: Daily band is 4-16 active hours/day, weekly 4-16 hours/week, monthly
#: 4-16 hours/month, "less often" below the monthly floor. The map is a
#: documented default and can be overridden from the schema manifest.
DEFAULT_HOURS_BANDS: dict[str, tuple[float, float]] = {
    "none": (0.0, 0.0),
    "about every day": (4.0 * 365, 16.0 * 365),
    "about every week": (4.0 * 52, 16.0 * 52),
    "about every month": (4.0 * 12, 16.0 * 12),
    "less often": (0.0, 4.0 * 12),
}

#: Physiological ceiling on informal care: 16 active hours/day.
DEFAULT_HOURS_CAP = 5840.0


@dataclass(frozen=True)
class ColumnSpec:
    """Schema entry for one cohort column."""

    name: str
    kind: str
    role: str
    categories: tuple[str, ...] = ()
    unit: str = ""
    transform: str | None = None
    missing_codes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind == "categorical" and len(self.categories) < 2:
            raise ValueError(
                f"column {self.name!r}: categorical columns need >= 2 categories"
            )
        if self.transform is not None and self.transform not in TRANSFORMS:
            raise ValueError(
                f"column {self.name!r}: unknown transform {self.transform!r}"
            )

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("continuous", "binary")


def _validate_schema(schema: tuple[ColumnSpec, ...]) -> None:
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise ValueError("duplicate column names in schema")
    n_treat = sum(c.role == "treatment" for c in schema)
    n_clust = sum(c.role == "cluster" for c in schema)
    if n_treat != 1:
        raise ValueError(f"schema must declare exactly one treatment column, got {n_treat}")
    if n_clust != 1:
        raise ValueError(f"schema must declare exactly one cluster column, got {n_clust}")


class CohortTable:
    """Immutable rectangular cohort with schema and missingness mask.

    Parameters
    ----------
    schema : sequence of ColumnSpec
    columns : dict mapping column name to a 1-d array. float64 for
        continuous/binary columns (NaN allowed only where masked),
        int32 category codes for categorical columns (-1 where masked).
    missing_mask : (n, k) bool array in schema column order.
    provenance : one of {"empirical", "imputed", "synthetic", "simulated"}.
    """

    PROVENANCES = ("empirical", "imputed", "synthetic", "simulated")

    def __init__(self, schema, columns, missing_mask, provenance="empirical"):
        self.schema = tuple(schema)
        _validate_schema(self.schema)
        if provenance not in self.PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.provenance = provenance
        self._index = {c.name: i for i, c in enumerate(self.schema)}

        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise ValueError("ragged columns: unequal lengths")
        self.n = lengths.pop() if lengths else 0
        if self.n < 1:
            # n >= 1 is the steady-state invariant; empty tables are allowed
            # only as the degenerate output of sampling n=0.
            pass

        cols = {}
        for spec in self.schema:
            if spec.name not in columns:
                raise ValueError(f"missing column {spec.name!r}")
            arr = np.asarray(columns[spec.name])
            if spec.is_numeric:
                arr = arr.astype(np.float64)
            else:
                arr = arr.astype(np.int32)
            arr.setflags(write=False)
            cols[spec.name] = arr
        self.columns = cols

        mask = np.asarray(missing_mask, dtype=bool)
        if mask.shape != (self.n, len(self.schema)):
            raise ValueError(
                f"missing_mask shape {mask.shape} != ({self.n}, {len(self.schema)})"
            )
        mask = mask.copy()
        mask.setflags(write=False)
        self.missing_mask = mask
        self._check_cells()

    def _check_cells(self):
        for j, spec in enumerate(self.schema):
            arr = self.columns[spec.name]
            miss = self.missing_mask[:, j]
            if spec.kind == "categorical":
                bad = (~miss) & ((arr < 0) | (arr >= len(spec.categories)))
                if bad.any():
                    row = int(np.nonzero(bad)[0][0])
                    raise ValueError(
                        f"column {spec.name!r}, row {row}: code {arr[row]} outside "
                        f"declared categories {list(spec.categories)}"
                    )
            else:
                bad = (~miss) & ~np.isfinite(arr)
                if bad.any():
                    row = int(np.nonzero(bad)[0][0])
                    raise ValueError(
                        f"column {spec.name!r}, row {row}: non-finite value in "
                        "unmasked cell"
                    )

    # -- accessors ---------------------------------------------------------

    def col_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def spec(self, name: str) -> ColumnSpec:
        return self.schema[self.col_index(name)]

    def values(self, name: str) -> np.ndarray:
        """Raw stored values (float64 or int32 codes)."""
        return self.columns[name]

    def labels(self, name: str) -> np.ndarray:
        """Categorical column as string labels (empty string where missing)."""
        spec = self.spec(name)
        if spec.kind != "categorical":
            raise ValueError(f"column {name!r} is not categorical")
        cats = np.array(spec.categories, dtype=object)
        codes = self.columns[name]
        out = np.empty(self.n, dtype=object)
        ok = codes >= 0
        out[ok] = cats[codes[ok]]
        out[~ok] = ""
        return out

    def column_missing(self, name: str) -> np.ndarray:
        return self.missing_mask[:, self.col_index(name)]

    @property
    def has_missing(self) -> bool:
        return bool(self.missing_mask.any())

    def names(self, role=None, kind=None) -> list[str]:
        out = []
        for c in self.schema:
            if role is not None and c.role != role:
                continue
            if kind is not None and c.kind != kind:
                continue
            out.append(c.name)
        return out

    @property
    def treatment_name(self) -> str:
        return self.names(role="treatment")[0]

    @property
    def cluster_name(self) -> str:
        return self.names(role="cluster")[0]

    # -- derived tables ----------------------------------------------------

    def subset(self, row_idx) -> "CohortTable":
        row_idx = np.asarray(row_idx)
        cols = {name: arr[row_idx] for name, arr in self.columns.items()}
        return CohortTable(self.schema, cols, self.missing_mask[row_idx], self.provenance)

    def with_columns(self, new_cols: dict, provenance=None, missing_mask=None) -> "CohortTable":
        cols = dict(self.columns)
        cols.update(new_cols)
        mask = self.missing_mask if missing_mask is None else missing_mask
        return CohortTable(self.schema, cols, mask, provenance or self.provenance)

    def treated_mask(self, positive_label: str) -> np.ndarray:
        spec = self.spec(self.treatment_name)
        if spec.kind == "categorical":
            code = spec.categories.index(positive_label)
            return self.columns[self.treatment_name] == code
        return self.columns[self.treatment_name] == float(positive_label)


@dataclass(frozen=True)
class EconomicParams:
    """Per-cluster hourly wage and PPP deflator, plus the care-hours cap."""

    wage: dict[str, float]
    ppp: dict[str, float]
    hours_cap: float = DEFAULT_HOURS_CAP

    def __post_init__(self):
        for label, w in self.wage.items():
            if w <= 0:
                raise ValueError(f"cluster {label!r}: wage must be > 0")
        for label, p in self.ppp.items():
            if p <= 0:
                raise ValueError(f"cluster {label!r}: ppp must be > 0")
        if self.hours_cap <= 0:
            raise ValueError("hours_cap must be > 0")

    @classmethod
    def from_json(cls, path) -> "EconomicParams":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        clusters = doc["clusters"]
        return cls(
            wage={k: float(v["wage"]) for k, v in clusters.items()},
            ppp={k: float(v["ppp"]) for k, v in clusters.items()},
            hours_cap=float(doc.get("hours_cap", DEFAULT_HOURS_CAP)),
        )

    def to_json_dict(self) -> dict:
        return {
            "hours_cap": self.hours_cap,
            "clusters": {
                k: {"wage": self.wage[k], "ppp": self.ppp[k]} for k in sorted(self.wage)
            },
        }


@dataclass(frozen=True)
class OutcomeTriple:
    """Out-of-pocket spend, care hours, and the PPS net burden they imply."""

    oop: float
    hours: float
    net_burden: float

    def check(self, wage: float, ppp: float, hours_cap: float = DEFAULT_HOURS_CAP):
        if not (0.0 <= self.hours <= hours_cap):
            raise ValueError(f"hours {self.hours} outside [0, {hours_cap}]")
        expected = monetize_burden(self.oop, self.hours, wage, ppp)
        scale = max(abs(expected), 1.0)
        if abs(self.net_burden - expected) > 1e-9 * scale:
            raise ValueError(
                f"net_burden {self.net_burden} != oop/ppp + hours*wage/ppp = {expected}"
            )


@dataclass(frozen=True)
class SelectionRules:
    """Treated/control filter for the analysis sample.

    Retains rows that are treated, or untreated with a non-uptake reason in
    ``retain_reasons`` (availability- or cost-driven non-uptake).
    """

    treatment_positive: str
    reason_column: str
    retain_reasons: tuple[str, ...]


# -- schema manifest io ------------------------------------------------------


def load_manifest(path) -> dict:
    """Parse a schema manifest JSON into specs, selection rules and bands."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    specs = []
    for c in doc["columns"]:
        specs.append(
            ColumnSpec(
                name=c["name"],
                kind=c["kind"],
                role=c["role"],
                categories=tuple(c.get("categories", ())),
                unit=c.get("unit", ""),
                transform=c.get("transform"),
                missing_codes=tuple(str(m) for m in c.get("missing_codes", ())),
            )
        )
    selection = None
    if "selection" in doc:
        s = doc["selection"]
        selection = SelectionRules(
            treatment_positive=s["treatment_positive"],
            reason_column=s["reason_column"],
            retain_reasons=tuple(s["retain_reasons"]),
        )
    bands = {k: (float(v[0]), float(v[1])) for k, v in doc.get("hours_bands", {}).items()}
    return {
        "schema": tuple(specs),
        "selection": selection,
        "hours_bands": bands or dict(DEFAULT_HOURS_BANDS),
        "treatment_positive": doc.get("treatment", {}).get("positive"),
    }


def manifest_dict(schema, selection=None, hours_bands=None, treatment_positive=None) -> dict:
    cols = []
    for c in schema:
        entry = {"name": c.name, "kind": c.kind, "role": c.role}
        if c.categories:
            entry["categories"] = list(c.categories)
        if c.unit:
            entry["unit"] = c.unit
        if c.transform:
            entry["transform"] = c.transform
        if c.missing_codes:
            entry["missing_codes"] = list(c.missing_codes)
        cols.append(entry)
    doc = {"version": 1, "columns": cols}
    if selection is not None:
        doc["selection"] = {
            "treatment_positive": selection.treatment_positive,
            "reason_column": selection.reason_column,
            "retain_reasons": list(selection.retain_reasons),
        }
    if hours_bands:
        doc["hours_bands"] = {k: list(v) for k, v in hours_bands.items()}
    if treatment_positive is not None:
        doc["treatment"] = {"positive": treatment_positive}
    return doc


def load_cohort(csv_path, manifest) -> CohortTable:
    """Load a cohort CSV against a schema manifest.

    ``manifest`` is either a path to the manifest JSON or the dict returned
    by :func:`load_manifest`. Cells equal to a column's declared missing
    codes are masked. Raises ValueError naming the offending row/column on
    any schema violation.
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    schema = manifest["schema"]
    by_name = {c.name: c for c in schema}

    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{csv_path}: empty file") from None
        rows = list(reader)

    for col in header:
        if col not in by_name:
            raise ValueError(f"unknown column {col!r}: not declared in manifest")
    for spec in schema:
        if spec.name not in header:
            raise ValueError(f"manifest column {spec.name!r} absent from file")

    n, k = len(rows), len(schema)
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i}: ragged row ({len(row)} cells, expected {width})")

    pos = {name: header.index(name) for name in by_name}
    mask = np.zeros((n, k), dtype=bool)
    columns = {}
    for j, spec in enumerate(schema):
        raw = [rows[i][pos[spec.name]] for i in range(n)]
        if spec.kind == "categorical":
            arr = np.full(n, -1, dtype=np.int32)
            cat_index = {c: ci for ci, c in enumerate(spec.categories)}
            for i, cell in enumerate(raw):
                cell = cell.strip()
                if cell == "" or cell in spec.missing_codes:
                    mask[i, j] = True
                    continue
                if cell not in cat_index:
                    raise ValueError(
                        f"column {spec.name!r}, row {i}: value {cell!r} outside "
                        f"declared categories {list(spec.categories)}"
                    )
                arr[i] = cat_index[cell]
        else:
            arr = np.full(n, np.nan)
            for i, cell in enumerate(raw):
                cell = cell.strip()
                if cell == "" or cell in spec.missing_codes:
                    mask[i, j] = True
                    continue
                try:
                    arr[i] = float(cell)
                except ValueError:
                    raise ValueError(
                        f"column {spec.name!r}, row {i}: cell {cell!r} is not numeric"
                    ) from None
        columns[spec.name] = arr
    return CohortTable(schema, columns, mask, provenance="empirical")


def save_cohort(table: CohortTable, path) -> None:
    """Write a cohort to CSV with labels for categoricals, blanks for missing."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in table.schema])
        label_cols = {}
        for spec in table.schema:
            if spec.kind == "categorical":
                label_cols[spec.name] = table.labels(spec.name)
        for i in range(table.n):
            row = []
            for j, spec in enumerate(table.schema):
                if table.missing_mask[i, j]:
                    row.append("")
                elif spec.kind == "categorical":
                    row.append(label_cols[spec.name][i])
                else:
                    row.append(repr(float(table.columns[spec.name][i])))
            writer.writerow(row)


# -- operations --------------------------------------------------------------


def select_analysis_sample(table: CohortTable, rules: SelectionRules) -> CohortTable:
    """Keep treated rows, plus control rows with a retained non-uptake reason.

    Row order is preserved. Control rows whose reason cell is missing are
    dropped (the reason is unknowable, so the retain condition fails).
    """
    if rules.reason_column not in table._index:
        raise ValueError(f"selection rule references missing column {rules.reason_column!r}")
    treated = table.treated_mask(rules.treatment_positive)
    reason_spec = table.spec(rules.reason_column)
    if reason_spec.kind != "categorical":
        raise ValueError(f"reason column {rules.reason_column!r} must be categorical")
    codes = table.columns[rules.reason_column]
    retain_codes = {reason_spec.categories.index(r) for r in rules.retain_reasons}
    reason_ok = np.isin(codes, list(retain_codes)) & ~table.column_missing(rules.reason_column)
    keep = treated | (~treated & reason_ok)
    return table.subset(np.nonzero(keep)[0])


def smooth_care_hours(freq_category: str, rng: np.random.Generator,
                      params: EconomicParams, bands=None) -> float:
    """Draw annual care hours uniformly from the category's band.

    The draw is clamped to [0, params.hours_cap]. Deterministic given the
    generator state.
    """
    bands = bands if bands is not None else DEFAULT_HOURS_BANDS
    if freq_category not in bands:
        raise ValueError(f"unmapped care-frequency category {freq_category!r}")
    lo, hi = bands[freq_category]
    draw = lo if hi == lo else rng.uniform(lo, hi)
    return float(min(max(draw, 0.0), params.hours_cap))


def monetize_burden(oop: float, hours: float, wage: float, ppp: float) -> float:
    """Net economic burden in PPS currency: oop/ppp + hours*wage/ppp."""
    if ppp <= 0:
        raise ValueError(f"ppp must be > 0, got {ppp}")
    if hours < 0:
        raise ValueError(f"hours must be >= 0, got {hours}")
    return oop / ppp + hours * wage / ppp


def transform_monetary(value, kind: str):
    """Map a monetary value into the generator's latent space."""
    value = np.asarray(value, dtype=float)
    if kind == "arcsinh":
        out = np.arcsinh(value)
    elif kind == "log1p":
        if np.any(value < 0):
            raise ValueError("log1p transform requires value >= 0")
        out = np.log1p(value)
    else:
        raise ValueError(f"unknown transform {kind!r}")
    return float(out) if out.ndim == 0 else out


def inverse_transform_monetary(latent, kind: str):
    """Invert :func:`transform_monetary`."""
    latent = np.asarray(latent, dtype=float)
    if not np.all(np.isfinite(latent)):
        raise ValueError("inverse transform requires finite latent values")
    if kind == "arcsinh":
        out = np.sinh(latent)
    elif kind == "log1p":
        out = np.expm1(latent)
    else:
        raise ValueError(f"unknown transform {kind!r}")
    return float(out) if out.ndim == 0 else out
