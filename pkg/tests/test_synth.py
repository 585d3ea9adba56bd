import numpy as np
import pytest

from twincause.cohort import CohortTable, ColumnSpec
from twincause.synth import (
    Denoiser,
    DiffusionConfig,
    NoiseSchedule,
    diffusion_loss_and_grads,
    fit_diffusion,
    gaussian_noising,
    load_model,
    multinomial_noising,
    sample_twins,
    save_model,
)

DESK = dict(timesteps=24, epochs=60, batch_size=64, hidden_layout=(48, 48),
            learning_rate=4e-3, time_embed_dim=8)


def mixed_table(n, rng, point_mass=False, bimodal=False):
    schema = (
        ColumnSpec("u", "continuous", "covariate"),
        ColumnSpec("v", "continuous", "outcome"),
        ColumnSpec("regime", "categorical", "covariate",
                   categories=("Continental", "Eastern", "Nordic", "Southern")),
        ColumnSpec("pc", "categorical", "treatment", categories=("no", "yes")),
        ColumnSpec("country", "categorical", "cluster", categories=("a", "b")),
    )
    if point_mass:
        u = np.full(n, 2.5)
        v = np.full(n, -1.0)
        regime = np.zeros(n, dtype=np.int32)
        pc = np.ones(n, dtype=np.int32)
        country = np.zeros(n, dtype=np.int32)
    elif bimodal:
        comp = rng.uniform(size=n) < 0.5
        u = np.where(comp, rng.normal(-3.0, 0.4, n), rng.normal(3.0, 0.4, n))
        v = rng.normal(size=n)
        regime = rng.integers(0, 4, n).astype(np.int32)
        pc = rng.integers(0, 2, n).astype(np.int32)
        country = rng.integers(0, 2, n).astype(np.int32)
    else:
        u = rng.normal(size=n)
        v = u * 0.5 + rng.normal(size=n)
        regime = rng.integers(0, 4, n).astype(np.int32)
        pc = rng.integers(0, 2, n).astype(np.int32)
        country = rng.integers(0, 2, n).astype(np.int32)
    cols = {"u": u, "v": v, "regime": regime, "pc": pc, "country": country}
    return CohortTable(schema, cols, np.zeros((n, 5), dtype=bool), "simulated")


class TestSchedule:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_abar_strictly_decreasing_from_one(self, kind):
        sch = NoiseSchedule(DiffusionConfig(timesteps=50, noise_schedule=kind, epochs=1))
        assert sch.abar[0] == 1.0
        assert np.all(np.diff(sch.abar) < 0)
        assert sch.abar[-1] > 0

    def test_bad_schedule_name(self):
        with pytest.raises(ValueError):
            DiffusionConfig(noise_schedule="quadratic")


class TestGaussianNoising:
    def schedule(self):
        return NoiseSchedule(DiffusionConfig(timesteps=10, epochs=1))

    def test_identity_limit(self):
        sch = self.schedule()
        sch.abar = np.array([1.0] + [1.0] * 10)  # degenerate: no corruption
        out = gaussian_noising(np.array([1.5, -2.0]), 3, np.array([9.0, 9.0]), sch)
        assert np.array_equal(out, np.array([1.5, -2.0]))

    def test_pure_noise_limit(self):
        sch = self.schedule()
        sch.abar = np.array([1.0] + [0.0] * 10)
        out = gaussian_noising(np.array([1.5, -2.0]), 5, np.array([9.0, -4.0]), sch)
        assert np.array_equal(out, np.array([9.0, -4.0]))

    def test_direct_formula(self):
        sch = self.schedule()
        sch.abar = np.array([1.0] + [0.25] * 10)
        out = gaussian_noising(np.array([0.0]), 1, np.array([1.0]), sch)
        assert out[0] == pytest.approx(np.sqrt(0.75), rel=1e-12)

    def test_t_out_of_range(self):
        sch = self.schedule()
        with pytest.raises(ValueError):
            gaussian_noising(np.zeros(2), 11, np.zeros(2), sch)


class TestMultinomialNoising:
    def test_identity_when_beta_bar_zero(self):
        sch = NoiseSchedule(DiffusionConfig(timesteps=5, epochs=1))
        sch.abar = np.array([1.0, 1.0, 0.5, 0.3, 0.1, 0.05])
        v = np.array([0.0, 1.0, 0.0])
        out = multinomial_noising(v, 1, np.random.default_rng(0), sch)
        assert np.array_equal(out, v)

    def test_uniform_limit_frequencies(self):
        sch = NoiseSchedule(DiffusionConfig(timesteps=5, epochs=1))
        sch.abar = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(1)
        v = np.array([1.0, 0.0, 0.0, 0.0])
        counts = np.zeros(4)
        n = 100_000
        for _ in range(n):
            counts += multinomial_noising(v, 3, rng, sch)
        freqs = counts / n
        assert np.all(np.abs(freqs - 0.25) < 0.02)

    def test_single_category_unchanged(self):
        sch = NoiseSchedule(DiffusionConfig(timesteps=5, epochs=1))
        v = np.array([1.0])
        out = multinomial_noising(v, 5, np.random.default_rng(2), sch)
        assert np.array_equal(out, v)

    def test_invalid_onehot(self):
        sch = NoiseSchedule(DiffusionConfig(timesteps=5, epochs=1))
        with pytest.raises(ValueError):
            multinomial_noising(np.array([0.5, 0.5]), 1, np.random.default_rng(0), sch)


class TestGradients:
    def test_analytic_matches_central_differences_on_toy_network(self):
        rng = np.random.default_rng(3)
        # 1 numeric column + one 2-category block + no time embedding padding:
        # in=3, hidden=2, out=3 -> 3*2 + 2 + 2*3 + 3 = 17 params; check the
        # first 10 as the toy slice
        net = Denoiser(3, (2,), 3, rng)
        x_in = rng.normal(size=(5, 3))
        eps = rng.normal(size=(5, 1))
        targets = [rng.integers(0, 2, size=5)]
        loss, gW, gb = diffusion_loss_and_grads(net, x_in, eps, targets, 1, [2])
        flat_params = net.params
        flat_grads = gW + gb
        h = 1e-6
        checked = 0
        for p, g in zip(flat_params, flat_grads):
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished and checked < 10:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                lp, *_ = diffusion_loss_and_grads(net, x_in, eps, targets, 1, [2])
                p[idx] = orig - h
                lm, *_ = diffusion_loss_and_grads(net, x_in, eps, targets, 1, [2])
                p[idx] = orig
                fd = (lp - lm) / (2 * h)
                rel = abs(g[idx] - fd) / max(abs(fd), 1e-8)
                assert rel < 1e-4, (idx, g[idx], fd)
                checked += 1
                it.iternext()
        assert checked == 10


class TestFitDiffusion:
    def test_epochs_zero_rejected(self):
        with pytest.raises(ValueError):
            DiffusionConfig(epochs=0)

    def test_missing_cells_rejected(self):
        rng = np.random.default_rng(4)
        table = mixed_table(100, rng)
        mask = np.zeros((100, 5), dtype=bool)
        mask[0, 0] = True
        cols = dict(table.columns)
        holed = CohortTable(table.schema, cols, mask, "simulated")
        with pytest.raises(ValueError, match="complete"):
            fit_diffusion(holed, DiffusionConfig(**DESK), rng)

    def test_batch_larger_than_n(self):
        rng = np.random.default_rng(5)
        table = mixed_table(30, rng)
        with pytest.raises(ValueError, match="batch_size"):
            fit_diffusion(table, DiffusionConfig(**DESK), rng)

    def test_loss_trace_length_and_decrease(self):
        rng = np.random.default_rng(6)
        table = mixed_table(400, rng)
        cfg = DiffusionConfig(**DESK)
        model = fit_diffusion(table, cfg, np.random.default_rng(7))
        assert len(model.train_loss_trace) == cfg.epochs
        assert model.train_loss_trace[-1] < model.train_loss_trace[0]

    def test_point_mass_recovery(self):
        rng = np.random.default_rng(8)
        table = mixed_table(256, rng, point_mass=True)
        model = fit_diffusion(table, DiffusionConfig(**DESK), np.random.default_rng(9))
        twins = sample_twins(model, 1000, np.random.default_rng(10))
        for name, target in (("u", 2.5), ("v", -1.0)):
            vals = twins.values(name)
            # training sd is zero, so the standardized tolerance is absolute
            assert np.all(np.abs(vals - target) <= 0.1)

    def test_bimodal_marginal_recovers_both_modes(self):
        rng = np.random.default_rng(11)
        table = mixed_table(1200, rng, bimodal=True)
        cfg = DiffusionConfig(timesteps=40, epochs=220, batch_size=128,
                              hidden_layout=(96, 96), learning_rate=4e-3,
                              time_embed_dim=16)
        model = fit_diffusion(table, cfg, np.random.default_rng(12))
        twins = sample_twins(model, 2000, np.random.default_rng(13))
        u = twins.values("u")
        for mode in (-3.0, 3.0):
            share = np.mean(np.abs(u - mode) <= 0.8)
            assert share >= 0.25, (mode, share)


class TestSampleTwins:
    def make_model(self, n=300, seed=14):
        rng = np.random.default_rng(seed)
        table = mixed_table(n, rng)
        return fit_diffusion(table, DiffusionConfig(**DESK), np.random.default_rng(seed + 1))

    def test_zero_rows(self):
        model = self.make_model()
        twins = sample_twins(model, 0, np.random.default_rng(0))
        assert twins.n == 0
        assert [c.name for c in twins.schema] == ["u", "v", "regime", "pc", "country"]

    def test_categorical_support_closure(self):
        model = self.make_model()
        twins = sample_twins(model, 500, np.random.default_rng(1))
        assert set(np.unique(twins.values("regime"))) <= {0, 1, 2, 3}
        assert set(np.unique(twins.labels("regime"))) <= {
            "Continental", "Eastern", "Nordic", "Southern"}
        assert np.all(np.isfinite(twins.values("u")))
        assert twins.provenance == "synthetic"

    def test_same_seed_bitwise_identical(self):
        model = self.make_model()
        a = sample_twins(model, 200, np.random.default_rng(2))
        b = sample_twins(model, 200, np.random.default_rng(2))
        for name in ("u", "v", "regime", "pc", "country"):
            assert np.array_equal(a.values(name), b.values(name))

    def test_balance_arms(self):
        model = self.make_model(n=400)
        twins = sample_twins(model, 300, np.random.default_rng(3),
                             balance_arms=True, treatment_positive="yes")
        treated = twins.treated_mask("yes")
        assert int(treated.sum()) == 150
        assert int((~treated).sum()) == 150


class TestCheckpoint:
    def test_round_trip_identical_samples(self, tmp_path):
        rng = np.random.default_rng(15)
        table = mixed_table(300, rng)
        model = fit_diffusion(table, DiffusionConfig(**DESK), np.random.default_rng(16))
        path = tmp_path / "model.npz"
        save_model(model, path)
        loaded = load_model(path)
        a = sample_twins(model, 100, np.random.default_rng(4))
        b = sample_twins(loaded, 100, np.random.default_rng(4))
        for name in ("u", "v", "regime", "pc", "country"):
            assert np.array_equal(a.values(name), b.values(name))
        assert loaded.train_loss_trace == model.train_loss_trace
        assert loaded.config == model.config

    def test_version_check(self, tmp_path):
        rng = np.random.default_rng(17)
        table = mixed_table(300, rng)
        model = fit_diffusion(table, DiffusionConfig(**DESK), np.random.default_rng(18))
        path = tmp_path / "model.npz"
        import json

        import twincause.synth as synth_mod

        save_model(model, path)
        orig = synth_mod.CHECKPOINT_VERSION
        try:
            synth_mod.CHECKPOINT_VERSION = orig + 1
            with pytest.raises(ValueError, match="version"):
                load_model(path)
        finally:
            synth_mod.CHECKPOINT_VERSION = orig
