import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dcache import numerics
from d2dcache.model import (
    CachingStrategy,
    GroupProfile,
    SystemParams,
    TrustCounts,
    active_ratio,
    active_ratio_from_load,
    assoc_prob,
    db_to_linear,
    f_kernel,
    f_kernel_prime,
    f_kernel_second,
    offload_gain,
    success_prob,
    trust_bias_from_counts,
)


def random_instance(rng, M=None):
    M = M or int(rng.integers(1, 5))
    lam = rng.uniform(0.005, 0.1, M)
    bias = rng.dirichlet(np.ones(M))
    c = lam * rng.uniform(0.01, 0.99, M)
    return GroupProfile(lam, bias), c


class TestTrustBias:
    @pytest.mark.parametrize(
        "counts,expected",
        [((1, 1), (0.5, 0.5)), ((3, 1), (0.75, 0.25)), ((0, 5, 5), (0.0, 0.5, 0.5))],
    )
    def test_normalization(self, counts, expected):
        assert trust_bias_from_counts(counts) == pytest.approx(expected)

    def test_all_zero(self):
        with pytest.raises(ValueError):
            trust_bias_from_counts(TrustCounts(np.zeros(3)))

    def test_profile_from_counts(self):
        g = GroupProfile.from_counts([0.1, 0.2], [3, 1])
        assert g.bias == pytest.approx([0.75, 0.25])


class TestTypes:
    def test_bias_sum(self):
        with pytest.raises(ValueError):
            GroupProfile([0.1, 0.1], [0.5, 0.6])

    def test_empty(self):
        with pytest.raises(ValueError):
            GroupProfile([], [])

    def test_caching_box(self):
        g = GroupProfile([0.1, 0.1], [0.5, 0.5])
        with pytest.raises(ValueError):
            CachingStrategy([0.2, 0.0]).check(g)
        with pytest.raises(ValueError):
            CachingStrategy([-0.01, 0.0])

    def test_system_params_invariants(self):
        with pytest.raises(ValueError):
            SystemParams.from_db(alpha=2.0)
        with pytest.raises(ValueError):
            SystemParams.from_db(R=0.0)

    def test_cached_thetas(self, params):
        assert params.theta_I == numerics.theta_interference(params.alpha, params.gamma_th)
        assert params.theta_B == numerics.theta_bs(params.alpha, params.gamma_th, params.p_B / params.p_t)
        assert params.p_B / params.p_t == pytest.approx(10**0.5)

    def test_weights(self):
        g = GroupProfile([0.1, 0.1], [0.2, 0.8])
        assert g.weights(4.0) == pytest.approx(np.sqrt([0.2, 0.8]))


class TestKernel:
    def test_values(self):
        assert f_kernel(0.0) == 1.0
        assert f_kernel(1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
        assert f_kernel(10.0) == pytest.approx((1 - math.exp(-10)) / 10, rel=1e-14)

    def test_negative(self):
        with pytest.raises(ValueError):
            f_kernel(-1.0)

    def test_decreasing(self):
        t = np.linspace(0, 40, 4001)
        assert np.all(np.diff(f_kernel(t)) < 0)

    def test_against_mpmath_across_branches(self):
        f = lambda s: (1 - mpmath.exp(-s)) / s
        for t in (1e-8, 9.99e-7, 1.001e-6, 5e-3, 0.00999, 0.01001, 0.05, 0.0999, 0.1001, 0.7, 3.0, 30.0):
            with mpmath.workdps(40):
                ref = [float(mpmath.diff(f, mpmath.mpf(t), k)) for k in range(3)]
            assert f_kernel(t) == pytest.approx(ref[0], rel=1e-14)
            assert f_kernel_prime(t) == pytest.approx(ref[1], rel=1e-10)
            assert f_kernel_second(t) == pytest.approx(ref[2], rel=1e-10)

    def test_derivative_finite_differences(self):
        for t in np.geomspace(1e-3, 50, 200):
            h = 1e-5 * t
            fd = (f_kernel(t + h) - f_kernel(t - h)) / (2 * h)
            assert f_kernel_prime(t) == pytest.approx(fd, rel=1e-7)

    def test_derivative_closed_form(self):
        t = 2.5
        assert f_kernel_prime(t) == pytest.approx(math.exp(-t) * (t - math.exp(t) + 1) / t**2, rel=1e-14)


class TestAssociation:
    def test_single_group(self, params):
        g = GroupProfile([0.05], [1.0])
        assert assoc_prob(params, g, [0.01])[0] == pytest.approx(1 - math.exp(-math.pi * 0.01 * 15**2), rel=1e-13)

    def test_no_cache(self, params, fig1_groups):
        assert np.all(assoc_prob(params, fig1_groups, np.zeros(3)) == 0)

    def test_fig1_values(self, params, fig1_groups, fig1_c):
        # frozen from the analytic formula; Monte-Carlo agreement is checked in test_sim
        assert assoc_prob(params, fig1_groups, fig1_c) == pytest.approx([0.09973, 0.37340, 0.52687], abs=1e-5)

    def test_total_increases_to_one_with_range(self, fig1_groups):
        c = np.array([0.002, 0.001, 0.003])
        totals = [assoc_prob(SystemParams.from_db(R=R), fig1_groups, c).sum() for R in (1, 2, 5, 10, 20, 50)]
        assert np.all(np.diff(totals) > 0)
        assert totals[-1] == pytest.approx(1.0, abs=1e-9)


class TestActiveRatio:
    def test_no_requesters(self, params, fig1_groups):
        assert np.all(active_ratio(params, fig1_groups, fig1_groups.lam) == 0)

    def test_large_range_limit(self, fig1_groups, fig1_c):
        p = SystemParams.from_db(R=1e4)
        P = assoc_prob(p, fig1_groups, fig1_c)
        load = fig1_groups.lambda_0 - fig1_c.sum()
        expected = 1 - (1 + P * load / (3.5 * fig1_c)) ** -3.5
        assert active_ratio(p, fig1_groups, fig1_c) == pytest.approx(expected, rel=1e-9)

    def test_zero_cache_group(self, params, fig1_groups):
        rho = active_ratio(params, fig1_groups, [0.0, 0.02, 0.02])
        assert rho[0] == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 50), st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(1, 40))
    def test_bounded_and_monotone(self, per_cache, l1, l2, R):
        lo, hi = sorted((l1, l2))
        r_lo = active_ratio_from_load(per_cache, lo, R)
        r_hi = active_ratio_from_load(per_cache, hi, R)
        assert 0.0 <= r_lo <= r_hi + 1e-15 <= 1.0 + 1e-15


class TestSuccess:
    def test_no_cache(self, params, fig1_groups):
        assert success_prob(params, fig1_groups, np.zeros(3)).success_prob == 0.0

    def test_zero_threshold_gives_association(self, fig1_groups, fig1_c):
        p = SystemParams(alpha=3.0, gamma_th=0.0, p_t=0.0316, p_B=0.1, lambda_B=1e-4, R=15.0)
        m = success_prob(p, fig1_groups, fig1_c)
        assert m.success_prob == pytest.approx(m.assoc_prob.sum(), rel=1e-12)

    def test_fig1_values(self, fig1_groups, fig1_c):
        got = [success_prob(SystemParams.from_db(gamma_th_db=g), fig1_groups, fig1_c).success_prob for g in range(0, 11, 2)]
        assert got == pytest.approx([0.8077, 0.7430, 0.6699, 0.5921, 0.5135, 0.4378], abs=1e-4)

    def test_trends_on_fig1_grid(self, fig1_groups, fig1_c):
        table = np.array(
            [[success_prob(SystemParams.from_db(alpha=a, gamma_th_db=g), fig1_groups, fig1_c).success_prob for g in range(0, 11, 2)] for a in (3, 4)]
        )
        assert np.all(np.diff(table, axis=1) <= 0)
        assert np.all(table[1] >= table[0])

    def test_decomposition_identity(self, params, rng):
        for _ in range(200):
            g, c = random_instance(rng)
            m = success_prob(params, g, c)
            lhs = params.disk * c * f_kernel(m.phi)
            assert lhs == pytest.approx(m.assoc_prob * m.success_prob_given_group, abs=1e-12)
            assert m.success_prob == pytest.approx(np.sum(m.assoc_prob * m.success_prob_given_group), abs=1e-9)
            assert 0 <= m.assoc_prob.sum() <= 1 + 1e-12
            assert np.all((m.active_ratio >= 0) & (m.active_ratio <= 1))

    def test_phi_definition(self, params, fig1_groups, fig1_c):
        m = success_prob(params, fig1_groups, fig1_c)
        v = fig1_groups.weights(params.alpha)
        expected = params.disk * (v @ fig1_c / v + params.lambda_B * params.theta_B + fig1_c * m.active_ratio * params.theta_I)
        assert m.phi == pytest.approx(expected, rel=1e-13)


class TestOffloadGain:
    def test_everyone_caches(self, params, fig1_groups):
        assert offload_gain(params, fig1_groups, fig1_groups.lam).offload_gain == 0.0

    def test_nobody_caches(self, params, fig1_groups):
        assert offload_gain(params, fig1_groups, np.zeros(3)).offload_gain == 0.0

    def test_definition_and_area(self, params, fig1_groups, fig1_c):
        m = offload_gain(params, fig1_groups, fig1_c, area=1e4)
        assert m.offload_gain == pytest.approx((0.3 - fig1_c.sum()) * m.success_prob, rel=1e-14)
        assert m.offload_gain_abs == pytest.approx(1e4 * m.offload_gain)

    def test_group_gain_uses_total_success(self, params, fig1_groups, fig1_c):
        m = offload_gain(params, fig1_groups, fig1_c)
        assert m.group_gain(fig1_groups, fig1_c).sum() == pytest.approx(m.offload_gain, rel=1e-13)

    def test_db_helpers(self):
        assert db_to_linear(3.0) == pytest.approx(1.9952623, rel=1e-7)
