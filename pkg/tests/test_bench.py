import math

import numpy as np
import pytest

from gpselect.bench import (
    AUTO,
    OPTIMAL,
    AnovaSummary,
    BenchmarkRecord,
    anova_decompose,
    anova_two_factor,
    baselines,
    bundle_for,
    evaluate_R,
    format_table,
    mean_table,
    optimal_R_star,
    read_records,
    records_to_csv,
    run_campaign,
    write_records,
)
from gpselect.criteria import evaluate
from gpselect.gp import GaussianPredictive, predict
from gpselect.kernel import MaternParams, Regularity, cov_matrix
from gpselect.scoring import CRPS, IS95, NLPD, SPE, score
from gpselect.selection import FitConfig, fit
from gpselect.testfns import DesignBundle

CFG = FitConfig(n_starts=2, seed=0)


@pytest.fixture(scope="module")
def small_bundle():
    return bundle_for("goldstein-price-1d", 0, 8, 200, 1, seed=0)


@pytest.fixture(scope="module")
def small_campaign():
    return run_campaign(
        ["goldstein-price-1d"], 8, 200, 2, ["NLL", "LOO-SPE", "LOO-CRPS"], ["1/2", "5/2", "inf", AUTO],
        [SPE, NLPD], seed=0, config=CFG,
    )


def make_bundle(X, z, Xt, zt):
    return DesignBundle("toy", 0, np.asarray(X, float), np.asarray(z, float), np.asarray(Xt, float), np.asarray(zt, float), 0.0, 1.0)


class TestEvaluateR:
    def test_loop_oracle(self, small_bundle):
        theta = MaternParams(1.3, [0.2], Regularity(2))
        p = predict(theta, small_bundle.dataset(), small_bundle.X_test)
        for rule in (SPE, NLPD, CRPS, IS95):
            loop = np.mean([score(rule, GaussianPredictive(m, v), z) for m, v, z in zip(p.mu, p.sigma2, small_bundle.z_test)])
            assert evaluate_R(theta, small_bundle, rule) == pytest.approx(loop, rel=1e-13)

    def test_perfect_interpolant(self):
        X = np.linspace(0, 1, 7)[:, None]
        z = np.sin(4 * X[:, 0])
        b = make_bundle(X, z, X, z)
        assert evaluate_R(MaternParams(1.0, [0.3], Regularity(1)), b, SPE) <= 1e-20


class TestBaselines:
    def test_constant_data(self):
        X = np.random.default_rng(0).random((6, 2))
        b = make_bundle(X, np.full(6, 2.0), np.random.default_rng(1).random((20, 2)), np.full(20, 2.0))
        out = baselines(b)
        assert out["linear"] == pytest.approx(0.0, abs=1e-25)
        assert out["1NN"] == 0.0 and out["2NN"] == 0.0

    def test_linear_normal_equations(self, rng):
        X, Xt = rng.random((10, 3)), rng.random((40, 3))
        z, zt = rng.standard_normal(10), rng.standard_normal(40)
        A = np.column_stack([np.ones(10), X])
        beta = np.linalg.solve(A.T @ A, A.T @ z)
        pred = np.column_stack([np.ones(40), Xt]) @ beta
        out = baselines(make_bundle(X, z, Xt, zt))
        assert out["linear"] == pytest.approx(np.mean((zt - pred) ** 2), rel=1e-10)

    def test_nearest_neighbours(self, rng):
        X = rng.random((8, 2))
        z = rng.standard_normal(8)
        # test points on the design: 1NN is exact
        assert baselines(make_bundle(X, z, X, z))["1NN"] == 0.0
        Xt = rng.random((15, 2))
        zt = rng.standard_normal(15)
        D = np.linalg.norm(Xt[:, None] - X[None], axis=2)
        order = np.argsort(D, axis=1)
        p2 = z[order[:, :2]].mean(axis=1)
        assert baselines(make_bundle(X, z, Xt, zt))["2NN"] == pytest.approx(np.mean((zt - p2) ** 2), rel=1e-12)

    def test_rank_deficient(self):
        X = np.column_stack([np.linspace(0, 1, 5), np.linspace(0, 1, 5)])
        out = baselines(make_bundle(X, np.arange(5.0), X, np.arange(5.0)))
        assert out["linear"] is None


class TestOptimalR:
    def test_dominates_fitted(self, small_bundle):
        data = small_bundle.dataset()
        nu = Regularity(2)
        fits = [fit(c, data, nu, CFG).theta_hat for c in ("NLL", "LOO-SPE", "LOO-CRPS")]
        for rule in (SPE, CRPS):
            _, R = optimal_R_star(small_bundle, rule, nu, CFG, starts=fits)
            assert all(R <= evaluate_R(t, small_bundle, rule) for t in fits)

    def test_spe_sigma2_blind(self, small_bundle):
        t, R = optimal_R_star(small_bundle, SPE, "3/2", CFG)
        # equal up to rounding; the optimum sits close to cond(R) = 1e11
        assert evaluate_R(t.with_sigma2(t.sigma2 * 50), small_bundle, SPE) == pytest.approx(R, rel=1e-6)

    def test_true_parameters_feasible(self):
        r = np.random.default_rng(3)
        X = np.sort(r.random(12))[:, None]
        Xt = np.linspace(0, 1, 60)[:, None]
        theta0 = MaternParams(1.0, [0.3], Regularity(1))
        Xall = np.vstack([X, Xt])
        f = np.linalg.cholesky(cov_matrix(Xall, theta0) + 1e-10 * np.eye(72)) @ r.standard_normal(72)
        b = make_bundle(X, f[:12], Xt, f[12:])
        _, R = optimal_R_star(b, NLPD, "3/2", CFG, starts=[theta0])
        assert R <= evaluate_R(theta0, b, NLPD)

    def test_rejects_mismatched_start(self, small_bundle):
        with pytest.raises(ValueError):
            optimal_R_star(small_bundle, SPE, "3/2", CFG, starts=[MaternParams(1.0, [0.3], Regularity(0))])


class TestCampaign:
    def test_single_cell_matches_direct_fit(self):
        recs = run_campaign(["mystery"], 8, 100, 1, ["LOO-SPE"], ["3/2"], [SPE], seed=2, config=CFG, optimal=False, baselines=False)
        assert len(recs) == 1
        b = bundle_for("mystery", 0, 8, 100, 1, seed=2)
        res = fit("LOO-SPE", b.dataset(), "3/2", CFG)
        assert recs[0].R == evaluate_R(res.theta_hat, b, SPE)
        assert recs[0].rho == tuple(res.theta_hat.rho)

    def test_record_contents(self, small_campaign):
        crits = {r.criterion for r in small_campaign}
        assert {"NLL", "LOO-SPE", "LOO-CRPS", OPTIMAL, "linear", "1NN", "2NN"} <= crits
        autos = [r for r in small_campaign if r.nu == AUTO]
        assert autos and all(r.selected_nu in ("1/2", "3/2", "5/2", "7/2", "9/2", "inf") for r in autos if not r.failed)
        assert all(r.R >= 0 for r in small_campaign if r.rule == "SPE" and not r.failed)

    def test_criterion_values_reevaluate(self, small_campaign):
        for r in small_campaign:
            if r.criterion in ("NLL", "LOO-SPE", "LOO-CRPS") and not r.failed and r.rule == "SPE":
                b = bundle_for(r.problem, r.replicate, 8, 200, 2, seed=0)
                nu = r.selected_nu if r.nu == AUTO else r.nu
                theta = MaternParams(r.sigma2, r.rho, nu)
                assert evaluate(r.criterion, theta, b.dataset()) == pytest.approx(r.criterion_value, rel=1e-12)

    def test_deterministic_and_worker_independent(self, small_campaign):
        again = run_campaign(
            ["goldstein-price-1d"], 8, 200, 2, ["NLL", "LOO-SPE", "LOO-CRPS"], ["1/2", "5/2", "inf", AUTO],
            [SPE, NLPD], seed=0, config=CFG, workers=2,
        )
        assert records_to_csv(again) == records_to_csv(small_campaign)

    def test_unknown_problem(self):
        with pytest.raises(KeyError):
            run_campaign(["nope"], 8, 100, 1, ["NLL"], ["1/2"], [SPE], seed=0)

    def test_collection_replicates_are_members(self):
        b0 = bundle_for("rotated-rosenbrock-2d", 0, 6, 64, 3, seed=0)
        b2 = bundle_for("rotated-rosenbrock-2d", 2, 6, 64, 3, seed=0)
        assert np.array_equal(b0.X, b2.X)
        assert not np.array_equal(b0.z, b2.z)
        assert b2.family_index == 2


class TestCsv:
    def test_round_trip(self, small_campaign, tmp_path):
        path = tmp_path / "records.csv"
        write_records(small_campaign, path)
        back = read_records(path)
        assert len(back) == len(small_campaign)
        for a, b in zip(small_campaign, back):
            assert (a.problem, a.d, a.n, a.replicate, a.criterion, a.nu, a.rule, a.converged) == (
                b.problem, b.d, b.n, b.replicate, b.criterion, b.nu, b.rule, b.converged,
            )
            assert a.R == b.R or (math.isnan(a.R) and math.isnan(b.R))
            assert a.rho == b.rho
        assert records_to_csv(back) == records_to_csv(small_campaign)

    def test_header(self, small_campaign):
        head = records_to_csv(small_campaign).splitlines()[0]
        assert head == "problem,d,n,replicate,criterion,nu,rule,R,converged,sigma2,rho_1"


class TestAnova:
    def test_constant_criterion_axis(self):
        Y = np.array([[1.0, 2.0, 4.0]] * 3)
        s = anova_two_factor(Y)
        assert s.S_criterion == pytest.approx(0.0, abs=1e-15)
        assert s.S_nu == pytest.approx(1.0, rel=1e-14)
        assert s.S_int == pytest.approx(0.0, abs=1e-15)

    def test_sum_to_one(self, rng):
        for _ in range(10):
            s = anova_two_factor(rng.standard_normal((4, 6)))
            assert s.S_criterion + s.S_nu + s.S_int == pytest.approx(1.0, abs=1e-10)
            assert all(0.0 <= v <= 1.0 for v in (s.S_criterion, s.S_nu, s.S_int))

    def test_zero_variance_undefined(self):
        s = anova_two_factor(np.ones((2, 3)))
        assert not s.defined and math.isnan(s.S_nu)

    def test_total_variance_is_population_variance(self, rng):
        Y = rng.standard_normal((3, 5))
        assert anova_two_factor(Y).total_variance == pytest.approx(Y.var(), rel=1e-14)

    def test_from_records(self, small_campaign):
        s = anova_decompose(small_campaign, "goldstein-price-1d", SPE, criteria=["NLL", "LOO-SPE", "LOO-CRPS"])
        assert isinstance(s, AnovaSummary)
        assert s.nus == ("1/2", "5/2", "inf")
        table = mean_table(small_campaign, "goldstein-price-1d", SPE)
        Y = np.log10([[table[c, nu][0] for nu in s.nus] for c in s.criteria])
        assert s.total_variance == pytest.approx(Y.var(), rel=1e-12)

    def test_listwise_exclusion(self):
        recs = []
        for c in ("NLL", "LOO-SPE"):
            for nu, R in (("1/2", 1.0), ("3/2", 0.1), ("inf", math.nan if c == "NLL" else 0.01)):
                recs.append(BenchmarkRecord("p", 1, 5, 0, c, nu, "SPE", R, True))
        s = anova_decompose(recs, "p", SPE, criteria=["NLL", "LOO-SPE"])
        assert s.nus == ("1/2", "3/2") and s.n_excluded == 1

    def test_format_table_mentions_all_cells(self, small_campaign):
        text = format_table(small_campaign, "goldstein-price-1d", SPE)
        assert "nu = 1/2" in text and "nu auto" in text and "R*" in text and "baselines" in text
