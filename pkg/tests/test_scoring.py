import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gpselect.gp import GaussianPredictive
from gpselect.scoring import (
    CRPS,
    IS95,
    NLPD,
    SPE,
    ScoringRule,
    gaussian_quantile,
    mean_score,
    score,
    score_derivatives,
)

import oracles

RULES = [SPE, NLPD, CRPS, IS95]
finite = st.floats(-5.0, 5.0, allow_nan=False)
positive = st.floats(0.05, 4.0)


def N(mu, s2):
    return GaussianPredictive(mu, s2)


class TestExamples:
    def test_spe(self):
        assert score(SPE, N(0.0, 1.0), 2.0) == 4.0

    def test_nlpd(self):
        assert score(NLPD, N(0.0, 1.0), 0.0) == pytest.approx(0.5 * math.log(2 * math.pi), rel=1e-15)

    def test_crps_at_center(self):
        expected = 2 * stats.norm.pdf(0.0) - 1 / math.sqrt(math.pi)
        assert score(CRPS, N(0.0, 1.0), 0.0) == pytest.approx(expected, rel=1e-14)
        assert score(CRPS, N(0.0, 1.0), 0.0) == pytest.approx(oracles.crps_quadrature(0.0, 1.0, 0.0), abs=1e-8)

    def test_interval_score_inside(self):
        assert score(IS95, N(0.0, 1.0), 0.0) == pytest.approx(2 * stats.norm.ppf(0.975), rel=1e-12)
        assert score(IS95, N(0.0, 1.0), 0.0) == pytest.approx(3.919928, abs=1e-6)

    def test_interval_score_jump(self):
        u = stats.norm.ppf(0.975)
        z = u + 0.01
        assert score(IS95, N(0.0, 1.0), z) == pytest.approx(2 * u + (2 / 0.05) * 0.01, rel=1e-12)

    def test_rejects_nonpositive_variance(self):
        for rule in RULES:
            with pytest.raises(ValueError):
                score(rule, N(0.0, 0.0), 1.0)


def test_crps_quadrature_grid():
    grid = [-1.5, 0.0, 2.0, 0.3, -0.7]
    sigmas = [0.1, 0.5, 1.0, 2.0, 3.0]
    for mu, sigma, z in itertools.product(grid, sigmas, grid):
        got = score(CRPS, N(mu, sigma * sigma), z)
        assert got == pytest.approx(oracles.crps_quadrature(mu, sigma, z), abs=1e-8)


def test_interval_score_direct_quantiles(rng):
    for alpha in (0.05, 0.1, 0.5):
        rule = ScoringRule("is", alpha)
        for _ in range(30):
            mu, sigma, z = rng.normal(), rng.uniform(0.1, 2.0), rng.normal(scale=3.0)
            assert score(rule, N(mu, sigma**2), z) == pytest.approx(
                oracles.interval_score_direct(mu, sigma, z, alpha), rel=1e-10
            )


def test_quantile_accuracy():
    p = np.array([1e-6, 0.025, 0.3, 0.5, 0.975])
    assert np.allclose(gaussian_quantile(p), stats.norm.ppf(p), rtol=1e-12, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(mu=finite, s2=positive, r=finite, c=st.floats(0.1, 10.0))
def test_scale_equivariance(mu, s2, r, c):
    sigma = math.sqrt(s2)
    for rule in (CRPS, IS95):
        base = score(rule, N(mu, s2), mu + sigma * r)
        scaled = score(rule, N(mu, c * c * s2), mu + c * sigma * r)
        assert scaled == pytest.approx(c * base, rel=1e-9, abs=1e-12)


def test_nlpd_limits():
    sig = [10.0**-k for k in range(1, 8)]
    off = [score(NLPD, N(0.0, s * s), 0.5) for s in sig]
    on = [score(NLPD, N(0.0, s * s), 0.0) for s in sig]
    assert all(b > a for a, b in zip(off, off[1:]))
    assert all(b < a for a, b in zip(on, on[1:]))


@settings(max_examples=40, deadline=None)
@given(z=finite, s2=positive)
def test_minimized_at_truth(z, s2):
    mus = z + np.linspace(-3, 3, 601)
    for rule in RULES:
        vals = score(rule, N(mus, np.full_like(mus, s2)), z)
        assert vals[300] <= vals.min() + 1e-12


@pytest.mark.parametrize("rule", [SPE, NLPD, CRPS, IS95], ids=str)
def test_derivatives_match_finite_differences(rule, rng):
    for _ in range(20):
        mu, s2, z = rng.normal(), rng.uniform(0.2, 2.0), rng.normal(scale=2.0)
        dmu, ds2 = score_derivatives(rule, mu, s2, z)
        h = 1e-6
        fm = (score(rule, N(mu + h, s2), z) - score(rule, N(mu - h, s2), z)) / (2 * h)
        fs = (score(rule, N(mu, s2 + h), z) - score(rule, N(mu, s2 - h), z)) / (2 * h)
        assert float(dmu) == pytest.approx(fm, rel=1e-5, abs=1e-7)
        assert float(ds2) == pytest.approx(fs, rel=1e-5, abs=1e-7)


class TestMeanScore:
    def test_single(self):
        assert mean_score(NLPD, [N(0.3, 2.0)], [1.0]) == score(NLPD, N(0.3, 2.0), 1.0)

    def test_constant(self):
        p = N(np.full(5, 0.2), np.full(5, 1.5))
        assert mean_score(CRPS, p, np.full(5, 1.0)) == pytest.approx(score(CRPS, N(0.2, 1.5), 1.0), rel=1e-14)

    def test_loop(self, rng):
        mu, s2, z = rng.normal(size=50), rng.uniform(0.1, 2, 50), rng.normal(size=50)
        for rule in RULES:
            loop = sum(score(rule, N(m, v), t) for m, v, t in zip(mu, s2, z)) / 50
            assert mean_score(rule, N(mu, s2), z) == pytest.approx(loop, rel=1e-13)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            mean_score(SPE, [], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mean_score(SPE, N(np.zeros(3), np.ones(3)), np.zeros(2))


class TestParse:
    @pytest.mark.parametrize(
        "text,rule",
        [("spe", SPE), ("NLPD", NLPD), ("crps", CRPS), ("is", IS95), ("IS95", IS95), ("is:0.1", ScoringRule("is", 0.1))],
    )
    def test_parse(self, text, rule):
        assert ScoringRule.parse(text) == rule

    def test_names(self):
        assert [r.name for r in RULES] == ["SPE", "NLPD", "CRPS", "IS95"]

    @pytest.mark.parametrize("kind,alpha", [("is", None), ("is", 1.0), ("spe", 0.1), ("log", None)])
    def test_invalid(self, kind, alpha):
        with pytest.raises(ValueError):
            ScoringRule(kind, alpha)
