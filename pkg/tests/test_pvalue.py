"""Tests for singleton/pair/conditional mixture p-values.

The sampling oracle draws the component first (from the posterior at x), then
the observation from that component, and applies the component-conditioned
extremeness definition; estimates must agree within 3 standard errors.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import ndtr
from scipy.stats import kstest

from groupscan.gmm import BivariateGMM, EMConfig, UnivariateGMM, fit_univariate, marginalize
from groupscan.pvalue import (
    LOG_P_MIN,
    P_MIN,
    conditional_pvalue,
    log_pair_pvalue,
    log_pair_tail,
    log_singleton_pvalue,
    log_singleton_tail,
    pair_pvalue,
    pit_z,
    singleton_pvalue,
)


def _std_normal():
    return UnivariateGMM(weights=[1.0], means=[0.0], variances=[1.0])


def _pair(rho, sig0=1.0, sig1=1.0, mean=(0.0, 0.0)):
    cov = [[sig0**2, rho * sig0 * sig1], [rho * sig0 * sig1, sig1**2]]
    return BivariateGMM(weights=[1.0], means=[list(mean)], covariances=[cov])


class TestSingleton:
    def test_zero_deviation_is_one(self):
        assert singleton_pvalue(_std_normal(), 0.0) == 1.0

    def test_standard_two_sided_tail(self):
        assert abs(singleton_pvalue(_std_normal(), 1.959964) - 0.05) < 1e-6

    def test_bimodal_monte_carlo_oracle(self):
        model = UnivariateGMM(weights=[0.5, 0.5], means=[-3.0, 3.0], variances=[1.0, 1.0])
        x = 0.0
        p = singleton_pvalue(model, x)
        rng = np.random.default_rng(42)
        M = 10**6
        resp = model.responsibilities(x)
        comps = rng.choice(2, size=M, p=resp)
        y = rng.normal(model.means[comps], 1.0)
        hits = np.abs(y - model.means[comps]) >= np.abs(x - model.means[comps])
        est = hits.mean()
        se = np.sqrt(est * (1 - est) / M)
        assert abs(p - est) < 3 * se

    def test_floor_in_deep_tail(self):
        assert log_singleton_pvalue(_std_normal(), np.array([60.0]))[0] == LOG_P_MIN
        assert abs(singleton_pvalue(_std_normal(), 60.0) / P_MIN - 1.0) < 1e-12

    def test_held_out_null_is_uniform(self):
        rng = np.random.default_rng(7)
        train = np.concatenate([rng.normal(-2, 1, 3000), rng.normal(2, 0.5, 2000)])
        model = fit_univariate(train, EMConfig(max_components=4))
        held_out = np.concatenate([rng.normal(-2, 1, 6000), rng.normal(2, 0.5, 4000)])
        p = singleton_pvalue(model, held_out)
        stat = kstest(p, "uniform").statistic
        assert stat < 0.03

    def test_monotone_in_deviation(self):
        x = np.linspace(0.0, 8.0, 200)
        p = singleton_pvalue(_std_normal(), x)
        assert np.all(np.diff(p) <= 1e-15)


class TestPair:
    def test_component_mean_is_one(self):
        model = _pair(0.6, mean=(1.0, -2.0))
        assert pair_pvalue(model, np.array([1.0, -2.0])) == 1.0

    def test_independence_factorizes(self):
        model = _pair(0.0, sig0=2.0, sig1=0.5, mean=(1.0, 3.0))
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=2) * [2.0, 0.5] + [1.0, 3.0]
            p = pair_pvalue(model, x)
            s0 = singleton_pvalue(marginalize(model, 0), x[0])
            s1 = singleton_pvalue(marginalize(model, 1), x[1])
            assert abs(p - s0 * s1) < 1e-8

    def test_correlated_monte_carlo_oracle(self):
        rho = 0.8
        model = _pair(rho)
        x = np.array([1.0, 1.0])  # a = b = 1 sigma
        p = pair_pvalue(model, x)
        rng = np.random.default_rng(3)
        M = 10**6
        z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=M)
        est = np.mean((np.abs(z[:, 0]) >= 1.0) & (np.abs(z[:, 1]) >= 1.0))
        se = np.sqrt(est * (1 - est) / M)
        assert abs(p - est) < 3 * se

    def test_mixture_monte_carlo_oracle(self):
        model = BivariateGMM(
            weights=[0.4, 0.6],
            means=[[-1.0, 0.0], [2.0, 1.0]],
            covariances=[[[1.0, 0.5], [0.5, 2.0]], [[0.8, -0.3], [-0.3, 0.5]]],
        )
        x = np.array([0.5, -0.7])
        p = pair_pvalue(model, x)
        rng = np.random.default_rng(4)
        M = 10**6
        resp = model.responsibilities(x)
        comps = rng.choice(2, size=M, p=resp)
        draws = np.empty((M, 2))
        for l in range(2):
            sel = comps == l
            draws[sel] = rng.multivariate_normal(model.means[l], model.covariances[l],
                                                 size=int(sel.sum()))
        mu = model.means[comps]
        sig = model.sigmas[comps]
        a = np.abs((x[0] - mu[:, 0]) / sig[:, 0])
        b = np.abs((x[1] - mu[:, 1]) / sig[:, 1])
        hits = (np.abs(draws[:, 0] - mu[:, 0]) / sig[:, 0] >= a) \
            & (np.abs(draws[:, 1] - mu[:, 1]) / sig[:, 1] >= b)
        est = hits.mean()
        se = np.sqrt(est * (1 - est) / M)
        assert abs(p - est) < 3 * se

    def test_bounded_by_shared_component_singletons(self):
        model = _pair(0.7, sig0=1.3, sig1=0.6, mean=(0.5, -0.5))
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 2)) * [1.3, 0.6] + [0.5, -0.5]
        p = pair_pvalue(model, X)
        s0 = singleton_pvalue(marginalize(model, 0), X[:, 0])
        s1 = singleton_pvalue(marginalize(model, 1), X[:, 1])
        assert np.all(p <= np.minimum(s0, s1) + 1e-9)

    def test_monotone_along_each_axis(self):
        model = _pair(0.5)
        xs = np.linspace(0.0, 7.0, 100)
        p = pair_pvalue(model, np.column_stack([xs, np.full_like(xs, 0.8)]))
        assert np.all(np.diff(p) <= 1e-15)
        p = pair_pvalue(model, np.column_stack([np.full_like(xs, 0.8), xs]))
        assert np.all(np.diff(p) <= 1e-15)

    def test_in_unit_interval_and_floored(self):
        model = _pair(0.9)
        X = np.array([[0.0, 0.0], [50.0, 50.0], [-45.0, 52.0]])
        p = pair_pvalue(model, X)
        assert p[0] == 1.0
        assert np.all(p >= P_MIN)
        assert np.all(p <= 1.0)


class TestConditional:
    def test_independence_reduces_to_other_singleton(self):
        model = _pair(0.0, sig0=1.5, sig1=0.7)
        rng = np.random.default_rng(6)
        for _ in range(50):
            x = rng.normal(size=2) * [1.5, 0.7]
            cond = conditional_pvalue(model, x, condition_slot=1)
            s0 = singleton_pvalue(marginalize(model, 0), x[0])
            assert abs(cond - s0) < 1e-8

    def test_component_mean_is_one(self):
        model = _pair(0.4, mean=(2.0, -1.0))
        assert conditional_pvalue(model, np.array([2.0, -1.0]), 0) == 1.0

    def test_correlated_conditioning_raises_pvalue(self):
        # both coordinates 2 sigma out along the correlation axis: knowing one
        # is out makes the other less surprising
        rho = 0.7
        model = _pair(rho)
        x = np.array([2.0, 2.0])
        cond = conditional_pvalue(model, x, condition_slot=1)
        uncond = singleton_pvalue(marginalize(model, 0), x[0])
        assert cond > uncond
        # value check against the sampling oracle (exact denominator)
        rng = np.random.default_rng(8)
        M = 10**6
        z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=M)
        est_corner = np.mean((np.abs(z[:, 0]) >= 2.0) & (np.abs(z[:, 1]) >= 2.0))
        denom = 2 * ndtr(-2.0)
        est = est_corner / denom
        se = np.sqrt(est_corner * (1 - est_corner) / M) / denom
        assert abs(cond - est) < 3 * se

    def test_clamped_to_unit_interval(self):
        # separately fitted marginals can push the raw ratio above 1; the
        # mixture here makes the pair mass exceed the marginal singleton
        model = BivariateGMM(
            weights=[0.5, 0.5],
            means=[[0.0, 0.0], [0.0, 8.0]],
            covariances=[np.eye(2).tolist(), [[4.0, 0.0], [0.0, 0.25]]],
        )
        rng = np.random.default_rng(9)
        X = rng.normal(size=(200, 2)) * 3.0
        cond = conditional_pvalue(model, X, 0)
        assert np.all(cond <= 1.0)
        assert np.all(cond >= P_MIN)

    def test_invalid_slot_rejected(self):
        with pytest.raises(ValueError):
            conditional_pvalue(_pair(0.1), np.array([0.0, 0.0]), 2)


class TestDirectionalSingleton:
    def test_single_component_is_exact_tail(self):
        from scipy.special import log_ndtr
        x = np.linspace(-6.0, 6.0, 41)
        up = log_singleton_tail(_std_normal(), x, side=1)
        dn = log_singleton_tail(_std_normal(), x, side=-1)
        assert_allclose(up, log_ndtr(-x), rtol=1e-12)
        assert_allclose(dn, log_ndtr(x), rtol=1e-12)

    def test_sides_sum_to_one_for_mixtures(self):
        model = UnivariateGMM(weights=[0.3, 0.7], means=[-2.0, 1.0],
                              variances=[1.0, 0.5])
        rng = np.random.default_rng(11)
        x = rng.normal(size=200) * 2.0
        total = np.exp(log_singleton_tail(model, x, 1)) \
            + np.exp(log_singleton_tail(model, x, -1))
        assert_allclose(total, 1.0, rtol=1e-10)

    def test_two_sided_is_twice_the_smaller_tail(self):
        x = np.linspace(-5.0, 5.0, 31)
        two = log_singleton_pvalue(_std_normal(), x)
        up = log_singleton_tail(_std_normal(), x, 1)
        dn = log_singleton_tail(_std_normal(), x, -1)
        assert_allclose(two, np.log(2.0) + np.minimum(up, dn), rtol=1e-12)

    def test_null_uniform_on_each_side(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=10000)
        for side in (1, -1):
            u = np.exp(log_singleton_tail(_std_normal(), x, side))
            assert kstest(u, "uniform").statistic < 0.02

    def test_fitted_mixture_held_out_tail_uniform(self):
        rng = np.random.default_rng(13)
        train = np.concatenate([rng.normal(-2, 1, 3000), rng.normal(2, 0.5, 2000)])
        model = fit_univariate(train, EMConfig(max_components=4))
        held_out = np.concatenate([rng.normal(-2, 1, 6000), rng.normal(2, 0.5, 4000)])
        u = np.exp(log_singleton_tail(model, held_out, 1))
        assert kstest(u, "uniform").statistic < 0.03

    def test_invalid_side_rejected(self):
        with pytest.raises(ValueError):
            log_singleton_tail(_std_normal(), np.array([0.0]), 0)


class TestDirectionalPair:
    def test_independence_factorizes_per_quadrant(self):
        model = _pair(0.0, sig0=2.0, sig1=0.5, mean=(1.0, 3.0))
        rng = np.random.default_rng(14)
        X = rng.normal(size=(50, 2)) * [2.0, 0.5] + [1.0, 3.0]
        for sides in [(1, 1), (1, -1), (-1, 1), (-1, -1)]:
            joint = log_pair_tail(model, X, sides)
            s0 = log_singleton_tail(marginalize(model, 0), X[:, 0], sides[0])
            s1 = log_singleton_tail(marginalize(model, 1), X[:, 1], sides[1])
            assert_allclose(np.exp(joint), np.exp(s0 + s1), atol=1e-8)

    def test_quadrants_partition_the_plane(self):
        model = BivariateGMM(
            weights=[0.4, 0.6],
            means=[[-1.0, 0.0], [2.0, 1.0]],
            covariances=[[[1.0, 0.5], [0.5, 2.0]], [[0.8, -0.3], [-0.3, 0.5]]],
        )
        rng = np.random.default_rng(15)
        X = rng.normal(size=(100, 2)) * 1.5
        total = sum(
            np.exp(log_pair_tail(model, X, sides))
            for sides in [(1, 1), (1, -1), (-1, 1), (-1, -1)]
        )
        assert_allclose(total, 1.0, rtol=1e-8)

    def test_sign_flip_symmetry(self):
        pos = _pair(0.6)
        neg = _pair(-0.6)
        rng = np.random.default_rng(16)
        X = rng.normal(size=(50, 2))
        assert_allclose(log_pair_tail(pos, X, (-1, -1)),
                        log_pair_tail(pos, -X, (1, 1)), rtol=1e-10)
        flipped = X * [1.0, -1.0]
        assert_allclose(log_pair_tail(pos, X, (1, -1)),
                        log_pair_tail(neg, flipped, (1, 1)), rtol=1e-10)

    def test_correlated_quadrant_monte_carlo_oracle(self):
        rho = 0.6
        model = _pair(rho)
        x = np.array([1.0, 0.5])
        p = np.exp(log_pair_tail(model, x, (1, 1)))[0]
        rng = np.random.default_rng(17)
        M = 10**6
        z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=M)
        est = np.mean((z[:, 0] >= 1.0) & (z[:, 1] >= 0.5))
        se = np.sqrt(est * (1 - est) / M)
        assert abs(p - est) < 3 * se

    def test_invalid_sides_rejected(self):
        with pytest.raises(ValueError):
            log_pair_tail(_pair(0.2), np.array([0.0, 0.0]), (0, 1))


class TestPitZ:
    def test_identity_for_standard_normal(self):
        x = np.linspace(-8.0, 8.0, 33)
        assert_allclose(pit_z(_std_normal(), x), x, rtol=1e-9, atol=1e-9)

    def test_affine_component(self):
        model = UnivariateGMM(weights=[1.0], means=[3.0], variances=[4.0])
        x = np.array([-1.0, 3.0, 7.0])
        assert_allclose(pit_z(model, x), [-2.0, 0.0, 2.0], atol=1e-12)

    def test_matching_sample_is_standard_normal(self):
        model = UnivariateGMM(weights=[0.5, 0.5], means=[-2.0, 2.0],
                              variances=[1.0, 0.25])
        rng = np.random.default_rng(18)
        x = model.sample(10000, rng)
        assert kstest(pit_z(model, x), "norm").statistic < 0.02

    def test_deep_tails_keep_precision(self):
        z = pit_z(_std_normal(), np.array([-40.0, 40.0]))
        assert_allclose(z, [-40.0, 40.0], rtol=1e-9)

    def test_symmetric_model_gives_odd_function(self):
        model = UnivariateGMM(weights=[0.5, 0.5], means=[-1.5, 1.5],
                              variances=[0.7, 0.7])
        x = np.linspace(0.1, 9.0, 25)
        assert_allclose(pit_z(model, x), -pit_z(model, -x), rtol=1e-9)


def test_vectorized_matches_scalar_calls():
    model = BivariateGMM(
        weights=[0.3, 0.7],
        means=[[0.0, 1.0], [-2.0, 0.5]],
        covariances=[[[1.0, 0.2], [0.2, 1.0]], [[2.0, -0.8], [-0.8, 1.5]]],
    )
    rng = np.random.default_rng(10)
    X = rng.normal(size=(25, 2))
    vec = np.exp(log_pair_pvalue(model, X))
    scal = np.array([pair_pvalue(model, row) for row in X])
    assert_allclose(vec, scal, rtol=1e-12)

    uni = marginalize(model, 0)
    vec = np.exp(log_singleton_pvalue(uni, X[:, 0]))
    scal = np.array([singleton_pvalue(uni, v) for v in X[:, 0]])
    assert_allclose(vec, scal, rtol=1e-12)
