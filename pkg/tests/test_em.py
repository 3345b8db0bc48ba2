import math

import numpy as np
import pytest

from oracles import ols_var1
from tschain.dataset import OrdinalSeriesDataset, VarKind, compute_bounds, estimate_marginals
from tschain.em import ChainGraphModel, FitOptions, bic, default_grids, fit, grid_search
from tschain.estep import SufficientStats, accumulate_stats, expected_s_gamma
from tschain.mstep import PenaltyConfig
from tschain.simulate import GroundTruth, gen_gamma, gen_theta, simulate_panel


def latent_var_dataset(rng, theta, gamma, n, T):
    p = theta.shape[0]
    chol = np.linalg.cholesky(np.linalg.inv(theta))
    z = np.empty((n, T, p))
    z[:, 0, :] = rng.standard_normal((n, p)) @ chol.T
    for t in range(1, T):
        z[:, t, :] = z[:, t - 1, :] @ gamma.T + rng.standard_normal((n, p)) @ chol.T
    return OrdinalSeriesDataset(z, [VarKind("continuous")] * p), z


@pytest.fixture(scope="module")
def ordinal_instance():
    th = gen_theta(6, seed=31)
    gm = gen_gamma(6, seed=32)
    ds, _ = simulate_panel(GroundTruth(th, gm, 33), n=18, T=4, categories=4, seed=34)
    return ds


class TestFit:
    def test_full_penalization_fixed_point(self, ordinal_instance):
        model = fit(ordinal_instance, PenaltyConfig("l1", lam=1e3, rho=1e3))
        off = ~np.eye(6, dtype=bool)
        assert np.all(model.theta[off] == 0.0)
        assert np.all(model.gamma == 0.0)
        assert model.iterations <= 2
        assert model.converged

    def test_continuous_matches_ols_var(self, rng):
        # lambda = rho = 0 on continuous data reduces to least squares on the
        # normal-score panel (raw scale, so no correlation projection).
        th = gen_theta(3, seed=41)
        gm = gen_gamma(3, seed=42)
        ds, _ = latent_var_dataset(rng, th, gm, n=200, T=11)  # n(T-1) = 2000
        model = fit(ds, PenaltyConfig("l1", lam=0.0, rho=0.0),
                    FitOptions(rescale_correlation=False))
        bounds = compute_bounds(ds, estimate_marginals(ds))
        gamma_hat, theta_hat = ols_var1(bounds.lower)
        assert np.abs(model.gamma - gamma_hat).max() <= 1e-2
        assert np.abs(model.theta - theta_hat).max() <= 1e-2

    def test_fixed_point_stability(self, ordinal_instance):
        # One EM iteration from a converged state must stay within em_tol
        # (contraction); exercised on the single-loop L1 path, since a SCAD
        # call re-derives its warm start and weights from scratch.
        opts = FitOptions()
        pen = PenaltyConfig("l1", lam=0.2, rho=0.2)
        model = fit(ordinal_instance, pen, opts)
        assert model.converged
        again = fit(
            ordinal_instance, pen,
            FitOptions(em_max_iter=1),
            init=(model.theta, model.gamma),
        )
        assert np.abs(again.theta - model.theta).max() <= opts.em_tol
        assert np.abs(again.gamma - model.gamma).max() <= opts.em_tol

    def test_determinism(self, ordinal_instance):
        pen = PenaltyConfig("scad", lam=0.15, rho=0.15)
        m1 = fit(ordinal_instance, pen, FitOptions())
        m2 = fit(ordinal_instance, pen, FitOptions())
        np.testing.assert_array_equal(m1.theta, m2.theta)
        np.testing.assert_array_equal(m1.gamma, m2.gamma)
        assert m1.bic == m2.bic

    def test_q_trace_monotone_on_continuous_data(self, rng):
        # Exact EM on continuous data (raw alternation, no projection): the
        # penalized objective may not decrease across iterations.
        th = gen_theta(3, seed=51)
        gm = gen_gamma(3, seed=52)
        ds, _ = latent_var_dataset(rng, th, gm, n=40, T=5)
        model = fit(ds, PenaltyConfig("l1", lam=0.05, rho=0.05),
                    FitOptions(rescale_correlation=False))
        trace = np.array(model.q_trace)
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-6 * np.abs(trace[:-1]))

    def test_nonconvergence_flagged(self, ordinal_instance):
        model = fit(ordinal_instance, PenaltyConfig("l1", lam=0.05, rho=0.05),
                    FitOptions(em_max_iter=1, em_tol=1e-12))
        assert not model.converged
        assert model.iterations == 1

    def test_df_counts(self, ordinal_instance):
        model = fit(ordinal_instance, PenaltyConfig("scad", lam=0.3, rho=0.3),
                    FitOptions(rescale_correlation=True))
        off = ~np.eye(6, dtype=bool)
        assert model.df_theta == int(np.count_nonzero(model.theta[off]))
        assert model.df_gamma == int(np.count_nonzero(model.gamma))
        assert model.df_theta % 2 == 0  # symmetric support


class TestBic:
    def test_complexity_term_arithmetic(self):
        # p=10, n=20, T=5, 4 off-diagonal nonzeros, 3 gamma nonzeros:
        # log(80) * (4/2 + 3 + 10).
        p = 10
        theta = np.eye(p)
        theta[0, 1] = theta[1, 0] = 0.2
        theta[2, 3] = theta[3, 2] = -0.1
        gamma = np.zeros((p, p))
        gamma[0, 0] = gamma[1, 2] = gamma[4, 5] = 0.3
        model = ChainGraphModel(theta=theta, gamma=gamma, penalty=PenaltyConfig("l1"))
        stats = SufficientStats(np.eye(p), np.eye(p), np.zeros((p, p)), n_eff=80.0)
        val = bic(model, stats, n=20, T=5)
        s_e = expected_s_gamma(stats, gamma)
        sign, logdet = np.linalg.slogdet(theta)
        fit_term = 80.0 * (-logdet + np.sum(s_e * theta))
        assert val - fit_term == pytest.approx(math.log(80) * 15.0, abs=1e-10)
        assert math.log(80) * 15.0 == pytest.approx(65.73, abs=0.01)

    def test_identity_fit_term(self):
        p, n, T = 4, 6, 3
        n_eff = n * (T - 1)
        model = ChainGraphModel(theta=np.eye(p), gamma=np.zeros((p, p)), penalty=PenaltyConfig("l1"))
        stats = SufficientStats(np.eye(p) * n_eff, np.eye(p), np.zeros((p, p)), n_eff=float(n_eff))
        val = bic(model, stats, n, T)
        assert val == pytest.approx(n_eff * p + math.log(n_eff) * p)

    def test_matches_independent_reevaluation(self, rng):
        th = gen_theta(4, seed=61)
        gm = gen_gamma(4, seed=62)
        ds, _ = simulate_panel(GroundTruth(th, gm, 63), n=10, T=3, categories=3, seed=64)
        model = fit(ds, PenaltyConfig("l1", lam=0.2, rho=0.2))
        stats = model.stats
        s_e = expected_s_gamma(stats, model.gamma)
        sign, logdet = np.linalg.slogdet(model.theta)
        n_eff = stats.n_eff
        expected = n_eff * (-logdet + float(np.sum(s_e * model.theta)))
        expected += math.log(n_eff) * (model.df_theta / 2 + model.df_gamma + 4)
        assert bic(model, stats, 10, 3) == pytest.approx(expected, abs=1e-10)


class TestGridSearch:
    def test_singleton_grid(self, ordinal_instance):
        res = grid_search(ordinal_instance, "l1", lambdas=[0.2], rhos=[0.3])
        assert len(res.grid) == 1
        direct = fit(ordinal_instance, PenaltyConfig("l1", lam=0.2, rho=0.3))
        assert res.best.bic == pytest.approx(direct.bic)

    def test_pure_noise_prefers_heavy_penalty(self):
        # Independent-noise panels: the fully penalized (empty) model should
        # win the BIC comparison in the clear majority of seeds.
        wins = 0
        trials = 20
        for seed in range(trials):
            rng = np.random.default_rng(1000 + seed)
            vals = rng.integers(0, 3, size=(30, 4, 3)).astype(float)
            ds = OrdinalSeriesDataset(vals, [VarKind("ordinal", 3)] * 3)
            res = grid_search(ds, "l1", lambdas=[0.05, 1e3], rhos=[0.05, 1e3])
            best = min(res.grid, key=lambda r: (r["bic"], -r["lam"], -r["rho"]))
            if best["lam"] == 1e3 and best["rho"] == 1e3:
                wins += 1
        assert wins >= trials * 0.9

    def test_tie_breaks_toward_sparser(self, ordinal_instance):
        res = grid_search(ordinal_instance, "l1", lambdas=[5e2, 1e3], rhos=[1e3])
        # Both grid points give the empty model and identical BIC; the larger
        # penalty pair must be selected.
        bics = [r["bic"] for r in res.grid]
        assert bics[0] == pytest.approx(bics[1], rel=1e-12)
        assert res.best.penalty.lam == 1e3

    def test_grid_rows_complete_and_sorted(self, ordinal_instance):
        res = grid_search(ordinal_instance, "l1", lambdas=[0.1, 0.4], rhos=[0.2, 0.5])
        assert len(res.grid) == 4
        keys = [(r["rho"], r["lam"]) for r in res.grid]
        assert keys == sorted(keys)

    def test_empty_grid_rejected(self, ordinal_instance):
        with pytest.raises(ValueError):
            grid_search(ordinal_instance, "l1", lambdas=[], rhos=[0.1])

    def test_default_grids_are_log_spaced(self, ordinal_instance):
        lambdas, rhos, _ = default_grids(ordinal_instance)
        assert lambdas.size == 10 and rhos.size == 10
        ratios = lambdas[1:] / lambdas[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)
        assert lambdas[-1] / lambdas[0] == pytest.approx(100.0, rel=1e-9)

    def test_workers_match_serial(self, ordinal_instance):
        lams, rhos = [0.15, 0.45], [0.2, 0.6]
        serial = grid_search(ordinal_instance, "scad", lambdas=lams, rhos=rhos,
                             opts=FitOptions(workers=1))
        par = grid_search(ordinal_instance, "scad", lambdas=lams, rhos=rhos,
                          opts=FitOptions(workers=2))
        for a, b in zip(serial.grid, par.grid):
            assert a["bic"] == pytest.approx(b["bic"], rel=1e-12)
        np.testing.assert_array_equal(serial.best.theta, par.best.theta)
