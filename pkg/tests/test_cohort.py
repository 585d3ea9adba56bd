import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twincause.cohort import (
    CohortTable,
    ColumnSpec,
    EconomicParams,
    OutcomeTriple,
    SelectionRules,
    inverse_transform_monetary,
    load_cohort,
    load_manifest,
    monetize_burden,
    save_cohort,
    select_analysis_sample,
    smooth_care_hours,
    transform_monetary,
)


def small_schema():
    return (
        ColumnSpec("age", "continuous", "covariate"),
        ColumnSpec("pc", "categorical", "treatment", categories=("no", "yes")),
        ColumnSpec("reason", "categorical", "covariate",
                   categories=("availability", "expensiveness", "personal-choice"),
                   missing_codes=("-9",)),
        ColumnSpec("country", "categorical", "cluster", categories=("AT", "DE")),
    )


def write_csv(tmp_path, text, name="cohort.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def write_manifest(tmp_path, schema):
    doc = {
        "version": 1,
        "columns": [
            {
                "name": c.name, "kind": c.kind, "role": c.role,
                "categories": list(c.categories),
                "missing_codes": list(c.missing_codes),
            }
            for c in schema
        ],
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


class TestLoadCohort:
    def test_three_valid_rows(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country\n70,yes,availability,AT\n80,no,expensiveness,DE\n65,yes,personal-choice,AT\n")
        table = load_cohort(csv_path, write_manifest(tmp_path, small_schema()))
        assert table.n == 3
        assert not table.missing_mask.any()
        assert table.provenance == "empirical"

    def test_missing_code_sets_mask(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country\n70,yes,-9,AT\n")
        table = load_cohort(csv_path, write_manifest(tmp_path, small_schema()))
        assert table.column_missing("reason")[0]
        assert not table.column_missing("age")[0]

    def test_unknown_categorical_value_names_cell(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country\n70,yes,availability,ZZ\n")
        with pytest.raises(ValueError, match=r"country.*row 0"):
            load_cohort(csv_path, write_manifest(tmp_path, small_schema()))

    def test_unknown_column(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country,extra\n70,yes,availability,AT,1\n")
        with pytest.raises(ValueError, match="extra"):
            load_cohort(csv_path, write_manifest(tmp_path, small_schema()))

    def test_ragged_row(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country\n70,yes,availability\n")
        with pytest.raises(ValueError, match="ragged"):
            load_cohort(csv_path, write_manifest(tmp_path, small_schema()))

    def test_round_trip(self, tmp_path):
        csv_path = write_csv(tmp_path, "age,pc,reason,country\n70.5,yes,-9,AT\n81,no,expensiveness,DE\n")
        manifest = write_manifest(tmp_path, small_schema())
        table = load_cohort(csv_path, manifest)
        save_cohort(table, tmp_path / "again.csv")
        table2 = load_cohort(tmp_path / "again.csv", manifest)
        assert np.array_equal(table.missing_mask, table2.missing_mask)
        for name in ("age", "pc", "reason", "country"):
            got, want = table2.values(name), table.values(name)
            ok = ~table.column_missing(name)
            assert np.array_equal(got[ok], want[ok])


class TestSchemaInvariants:
    def test_categorical_needs_two_categories(self):
        with pytest.raises(ValueError, match="categories"):
            ColumnSpec("x", "categorical", "covariate", categories=("only",))

    def test_exactly_one_treatment(self):
        schema = (
            ColumnSpec("a", "categorical", "treatment", categories=("no", "yes")),
            ColumnSpec("b", "categorical", "treatment", categories=("no", "yes")),
            ColumnSpec("c", "categorical", "cluster", categories=("x", "y")),
        )
        cols = {"a": [0], "b": [0], "c": [0]}
        with pytest.raises(ValueError, match="treatment"):
            CohortTable(schema, cols, np.zeros((1, 3), dtype=bool))


def selection_fixture():
    schema = small_schema()
    cols = {
        "age": np.array([70.0, 71.0, 72.0, 73.0]),
        "pc": np.array([1, 0, 0, 0]),
        "reason": np.array([2, 1, 2, 0]),  # personal-choice, expensiveness, personal-choice, availability
        "country": np.array([0, 0, 1, 1]),
    }
    table = CohortTable(schema, cols, np.zeros((4, 4), dtype=bool))
    rules = SelectionRules(treatment_positive="yes", reason_column="reason",
                           retain_reasons=("availability", "expensiveness"))
    return table, rules


class TestSelectAnalysisSample:
    def test_treated_retained(self):
        table, rules = selection_fixture()
        out = select_analysis_sample(table, rules)
        assert 70.0 in out.values("age")

    def test_control_expensiveness_retained_choice_dropped(self):
        table, rules = selection_fixture()
        out = select_analysis_sample(table, rules)
        ages = list(out.values("age"))
        assert ages == [70.0, 71.0, 73.0]

    def test_missing_reason_column(self):
        table, _ = selection_fixture()
        rules = SelectionRules("yes", "nonexistent", ("availability",))
        with pytest.raises(ValueError, match="nonexistent"):
            select_analysis_sample(table, rules)

    def test_idempotent(self):
        table, rules = selection_fixture()
        once = select_analysis_sample(table, rules)
        twice = select_analysis_sample(once, rules)
        assert twice.n == once.n
        for name in ("age", "pc", "reason"):
            assert np.array_equal(once.values(name), twice.values(name))


class TestSmoothCareHours:
    def params(self):
        return EconomicParams(wage={"AT": 20.0}, ppp={"AT": 1.0})

    def test_none_is_zero(self):
        h = smooth_care_hours("none", np.random.default_rng(0), self.params())
        assert h == 0.0

    def test_clamped_to_cap(self):
        bands = {"extreme": (6000.0, 9000.0)}
        for seed in range(20):
            h = smooth_care_hours("extreme", np.random.default_rng(seed),
                                  self.params(), bands)
            assert h == 5840.0

    def test_deterministic_given_seed(self):
        a = smooth_care_hours("about every week", np.random.default_rng(42), self.params())
        b = smooth_care_hours("about every week", np.random.default_rng(42), self.params())
        assert a == b

    def test_unmapped_category(self):
        with pytest.raises(ValueError, match="unmapped"):
            smooth_care_hours("sometimes", np.random.default_rng(0), self.params())

    def test_bounds_hold_over_many_draws(self):
        rng = np.random.default_rng(7)
        params = self.params()
        for category in ("about every day", "about every week", "about every month",
                         "less often", "none"):
            draws = np.array([smooth_care_hours(category, rng, params)
                              for _ in range(100_000)])
            assert draws.min() >= 0.0
            assert draws.max() <= params.hours_cap


class TestMonetizeBurden:
    def test_zero_case(self):
        assert monetize_burden(0.0, 0.0, 20.0, 1.0) == 0.0

    def test_direct_formula(self):
        assert monetize_burden(1200.0, 100.0, 24.0, 1.2) == pytest.approx(3000.0, rel=1e-12)

    def test_hours_free(self):
        assert monetize_burden(500.0, 0.0, 999.0, 1.0) == 500.0

    def test_bad_ppp(self):
        with pytest.raises(ValueError, match="ppp"):
            monetize_burden(1.0, 1.0, 1.0, 0.0)

    @given(oop=st.floats(-1e6, 1e6), hours=st.floats(0, 5840),
           wage=st.floats(0.1, 200), ppp=st.floats(0.1, 5))
    @settings(max_examples=200, deadline=None)
    def test_doubling_ppp_halves_output(self, oop, hours, wage, ppp):
        full = monetize_burden(oop, hours, wage, ppp)
        half = monetize_burden(oop, hours, wage, 2 * ppp)
        assert half == pytest.approx(full / 2, rel=1e-9, abs=1e-9)

    def test_linear_in_each_argument(self):
        base = monetize_burden(100.0, 50.0, 10.0, 2.0)
        assert monetize_burden(200.0, 50.0, 10.0, 2.0) - base == pytest.approx(
            monetize_burden(100.0, 50.0, 10.0, 2.0) - monetize_burden(0.0, 50.0, 10.0, 2.0),
            rel=1e-12)


class TestTransforms:
    def test_arcsinh_at_origin(self):
        assert transform_monetary(0.0, "arcsinh") == 0.0

    def test_arcsinh_closed_form(self):
        assert transform_monetary(-1.0, "arcsinh") == pytest.approx(
            math.log(math.sqrt(2) - 1), rel=1e-12)

    def test_log1p_at_origin(self):
        assert transform_monetary(0.0, "log1p") == 0.0

    def test_log1p_rejects_negative(self):
        with pytest.raises(ValueError, match="log1p"):
            transform_monetary(-0.5, "log1p")

    def test_round_trip_arcsinh(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(-1e7, 1e7, size=1000)
        back = inverse_transform_monetary(transform_monetary(vals, "arcsinh"), "arcsinh")
        rel = np.abs(back - vals) / np.maximum(np.abs(vals), 1.0)
        assert rel.max() < 1e-9

    def test_round_trip_log1p(self):
        rng = np.random.default_rng(1)
        vals = rng.uniform(0, 1e7, size=1000)
        back = inverse_transform_monetary(transform_monetary(vals, "log1p"), "log1p")
        rel = np.abs(back - vals) / np.maximum(np.abs(vals), 1.0)
        assert rel.max() < 1e-9


class TestOutcomeTriple:
    def test_identity_holds(self):
        t = OutcomeTriple(oop=1200.0, hours=100.0,
                          net_burden=monetize_burden(1200.0, 100.0, 24.0, 1.2))
        t.check(wage=24.0, ppp=1.2)

    def test_identity_violation(self):
        t = OutcomeTriple(oop=1200.0, hours=100.0, net_burden=999.0)
        with pytest.raises(ValueError, match="net_burden"):
            t.check(wage=24.0, ppp=1.2)

    def test_hours_above_cap(self):
        t = OutcomeTriple(oop=0.0, hours=6000.0, net_burden=0.0)
        with pytest.raises(ValueError, match="hours"):
            t.check(wage=24.0, ppp=1.2)


class TestEconomicParams:
    def test_from_json(self, tmp_path):
        path = tmp_path / "econ.json"
        path.write_text(json.dumps({
            "hours_cap": 5840,
            "clusters": {"AT": {"wage": 31.0, "ppp": 1.07}},
        }), encoding="utf-8")
        params = EconomicParams.from_json(path)
        assert params.wage["AT"] == 31.0
        assert params.ppp["AT"] == 1.07

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            EconomicParams(wage={"AT": 0.0}, ppp={"AT": 1.0})


def test_manifest_selection_block(tmp_path):
    doc = {
        "version": 1,
        "columns": [
            {"name": "pc", "kind": "categorical", "role": "treatment",
             "categories": ["no", "yes"]},
            {"name": "c", "kind": "categorical", "role": "cluster",
             "categories": ["x", "y"]},
        ],
        "selection": {"treatment_positive": "yes", "reason_column": "r",
                      "retain_reasons": ["availability"]},
        "treatment": {"positive": "yes"},
    }
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    man = load_manifest(path)
    assert man["selection"].retain_reasons == ("availability",)
    assert man["treatment_positive"] == "yes"
