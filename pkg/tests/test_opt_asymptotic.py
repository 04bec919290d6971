import math

import numpy as np
import pytest
from scipy import optimize

from d2dcache.model import GroupProfile, SystemParams, active_ratio, assoc_prob, success_prob
from d2dcache.opt_asymptotic import (
    SorNonConvergence,
    SorState,
    ps_infinity,
    ps_infinity_lower,
    rho_asymptotic,
    rho_upper,
    solve_asymptotic,
    solve_sor,
    sor_inner_lp,
    y_min,
)
from d2dcache.opt_exact import GridSpec, solve_exact
from d2dcache.opt_unbiased import solve_unbiased

FIG5_M2 = GroupProfile([0.02, 0.02], [0.1, 0.9])
FIG5_M3 = GroupProfile([0.02, 0.02, 0.02], [0.1, 0.4, 0.5])


def ratio_sum(params, groups, c, x):
    """Bounded ratio sum written out directly from the definitions."""
    v = groups.weights(params.alpha)
    order = np.lexsort((np.arange(v.size), v))
    rest, ymin = x, 0.0
    for k in order:
        take = min(rest, groups.lam[k])
        ymin += v[k] * take
        rest -= take
    rho = 1 - (1 + v * (groups.lambda_0 - x) / (3.5 * ymin)) ** -3.5
    return float(np.sum(c * v / (v @ c + params.lambda_B * params.theta_B * v + c * rho * params.theta_I * v)))


def brute_force(params, groups, x, step=2e-4):
    n = int(round(x / step))
    best = -1.0
    if groups.M == 2:
        for k in range(n + 1):
            c = np.array([k, n - k]) * step
            if np.all(c <= groups.lam + 1e-12):
                best = max(best, ratio_sum(params, groups, c, x))
        return best
    for a in range(n + 1):
        for b in range(n + 1 - a):
            c = np.array([a, b, n - a - b]) * step
            if np.all(c <= groups.lam + 1e-12):
                best = max(best, ratio_sum(params, groups, c, x))
    return best


class TestRho:
    def test_no_requesters(self, params):
        v = FIG5_M2.weights(3.0)
        assert np.all(rho_asymptotic(v, 0.04, [0.02, 0.02]) == 0)

    def test_saturates(self):
        assert rho_asymptotic([1.0, 1.0], 1e6, [1e-6, 1e-6])[0] == pytest.approx(1.0, abs=1e-9)

    def test_zero_density(self):
        assert np.all(rho_asymptotic([0.5, 0.5], 0.1, [0.0, 0.0]) == 0)

    def test_large_range_limit(self, rng):
        p = SystemParams.from_db(R=1e4)
        for _ in range(10):
            lam = rng.uniform(0.01, 0.1, 3)
            g = GroupProfile(lam, rng.dirichlet(np.ones(3)))
            c = lam * rng.uniform(0.1, 0.9, 3)
            assert rho_asymptotic(g.weights(3.0), g.lambda_0, c) == pytest.approx(active_ratio(p, g, c), abs=1e-3)

    def test_upper_bound_direction(self, params, rng):
        for _ in range(50):
            g = GroupProfile(rng.uniform(0.005, 0.05, 3), rng.dirichlet(np.ones(3)))
            v = g.weights(params.alpha)
            x = rng.uniform(0.001, g.lambda_0 * 0.9)
            bound = rho_upper(v, g.lam, x)
            for _ in range(20):
                share = rng.dirichlet(np.ones(3))
                c = np.minimum(share * x, g.lam)
                c = c * x / c.sum() if np.all(c * x / c.sum() <= g.lam) else None
                if c is None:
                    continue
                assert np.all(rho_asymptotic(v, g.lambda_0, c, x) <= bound + 1e-12)


class TestYMin:
    def test_example(self):
        y, c = y_min([0.2, 0.8], [0.03, 0.03], 0.04)
        assert y == pytest.approx(0.014)
        assert c == pytest.approx([0.03, 0.01])

    def test_grid_oracle(self):
        c1 = np.arange(0.01, 0.03 + 1e-12, 1e-4)
        assert y_min([0.2, 0.8], [0.03, 0.03], 0.04)[0] == pytest.approx(np.min(0.2 * c1 + 0.8 * (0.04 - c1)))

    def test_equal_weights(self):
        y, c = y_min([0.5, 0.5, 0.5], [0.01, 0.02, 0.03], 0.025)
        assert y == pytest.approx(0.0125)
        assert c == pytest.approx([0.01, 0.015, 0.0])

    def test_zero(self):
        assert y_min([0.2, 0.8], [0.03, 0.03], 0.0)[0] == 0.0

    def test_domain(self):
        with pytest.raises(ValueError):
            y_min([0.2, 0.8], [0.03, 0.03], 0.07)


class TestSuccessInfinity:
    def test_zero_cache(self, params):
        assert ps_infinity_lower(params, FIG5_M2, [0.0, 0.0], 0.0) == 0.0

    def test_self_ratio_limit(self):
        p = SystemParams.from_db(lambda_B=0.0, gamma_th_db=-60)
        assert ps_infinity_lower(p, GroupProfile([0.05], [1.0]), [0.01]) == pytest.approx(1.0, abs=1e-3)

    def test_lower_bound_direction(self, params, rng):
        for _ in range(200):
            g = GroupProfile(rng.uniform(0.005, 0.05, 3), rng.dirichlet(np.ones(3)))
            c = g.lam * rng.uniform(0.01, 0.99, 3)
            assert ps_infinity_lower(params, g, c) <= ps_infinity(params, g, c) + 1e-15

    def test_matches_direct_formula(self, params):
        c = np.array([0.013, 0.007])
        assert ps_infinity_lower(params, FIG5_M2, c) == pytest.approx(ratio_sum(params, FIG5_M2, c, 0.02), rel=1e-13)

    def test_gap_shrinks_with_range(self, fig1_groups, fig1_c):
        gaps = []
        for R in (5, 10, 15, 20, 30):
            p = SystemParams.from_db(R=R)
            gaps.append(abs(success_prob(p, fig1_groups, fig1_c).success_prob - ps_infinity(p, fig1_groups, fig1_c)))
        assert np.all(np.diff(gaps) <= 1e-12)

    def test_gap_shrinks_with_range_sparse(self):
        g = GroupProfile([0.02, 0.02, 0.02], [0.1, 0.3, 0.6])
        c = np.full(3, 0.01)
        gaps = [abs(success_prob(SystemParams.from_db(R=R), g, c).success_prob - ps_infinity(SystemParams.from_db(R=R), g, c)) for R in (5, 10, 15, 20, 30)]
        assert np.all(np.diff(gaps) < 0)


def _state(M, u, beta):
    return SorState(np.zeros(M), np.asarray(u, float), np.asarray(beta, float), np.ones(M))


class TestInnerLP:
    def test_ties_fill_low_index_first(self):
        p = SystemParams.from_db(lambda_B=0.0)
        g = GroupProfile([0.01, 0.01, 0.01], [1 / 3] * 3)
        c = sor_inner_lp(_state(3, [1, 1, 1], [0, 0, 0]), p, g, 0.015)
        assert c.c == pytest.approx([0.01, 0.005, 0.0])

    def test_full_density(self, params):
        c = sor_inner_lp(_state(2, [3.0, 0.1], [0.2, 0.4]), params, FIG5_M2, 0.04)
        assert c.c == pytest.approx([0.02, 0.02])

    def test_enumeration(self, params, rng):
        v = FIG5_M2.weights(params.alpha)
        rb = rho_upper(v, FIG5_M2.lam, 0.025)
        for _ in range(20):
            u = rng.uniform(0.1, 50, 2)
            beta = rng.uniform(0, 0.5, 2)
            c = sor_inner_lp(_state(2, u, beta), params, FIG5_M2, 0.025).c

            def G(cc):
                phi = v @ cc + v * (params.lambda_B * params.theta_B + rb * cc * params.theta_I)
                return float(np.sum(u * (cc * v - beta * phi)))

            grid = [np.array([a, 0.025 - a]) for a in np.arange(0.005, 0.02 + 1e-12, 1e-4)]
            assert G(c) >= max(G(cc) for cc in grid) - 1e-12


class TestSolveSor:
    def test_no_requesters(self, params):
        st = solve_sor(params, FIG5_M2, 0.04)
        assert st.iteration <= 2
        assert st.c == pytest.approx([0.02, 0.02])

    @pytest.mark.parametrize("groups", [FIG5_M2, FIG5_M3], ids=["M2", "M3"])
    def test_fig5_convergence(self, params, groups):
        st = solve_sor(params, groups, 0.02)
        trace = np.array(st.beta_trace)
        assert np.all(np.diff(trace) >= -1e-12)
        assert trace[-1] == pytest.approx(brute_force(params, groups, 0.02), rel=1e-2)
        assert max(st.damping_exponents) <= 60

    @pytest.mark.parametrize("groups", [FIG5_M2, FIG5_M3], ids=["M2", "M3"])
    def test_kkt_residuals(self, params, groups):
        tol = 1e-8
        st = solve_sor(params, groups, 0.02, tol=tol)
        v = groups.weights(params.alpha)
        rb = rho_upper(v, groups.lam, 0.02)
        phi = v @ st.c + v * (params.lambda_B * params.theta_B + rb * st.c * params.theta_I)
        assert np.all(np.abs(st.u * phi - 1) <= tol)
        assert np.all(np.abs(st.beta * phi - st.c * v) <= tol)
        assert st.beta.sum() == pytest.approx(ps_infinity_lower(params, groups, st.c, 0.02), abs=tol * groups.M)
        assert st.c.sum() == pytest.approx(0.02, abs=1e-15)

    def test_random_starts(self, params, rng):
        best = brute_force(params, FIG5_M3, 0.02)
        for _ in range(3):
            c0 = rng.dirichlet(np.ones(3)) * 0.02
            st = solve_sor(params, FIG5_M3, 0.02, c0=c0)
            assert np.all(np.diff(st.beta_trace) >= -1e-12)
            assert st.beta.sum() <= best * (1 + 1e-2)

    def test_non_convergence(self, params):
        with pytest.raises(SorNonConvergence) as err:
            solve_sor(params, FIG5_M3, 0.02, max_iterations=1)
        assert err.value.residual > 0

    def test_parameter_domain(self, params):
        with pytest.raises(ValueError):
            solve_sor(params, FIG5_M2, 0.02, zeta=1.0)
        with pytest.raises(ValueError):
            solve_sor(params, FIG5_M2, 0.05)


class TestSolveAsymptotic:
    def test_single_group_golden_section(self, params):
        g = GroupProfile([0.05], [1.0])
        sol = solve_asymptotic(params, g, step_x=1e-5)

        def neg(x):
            return -(0.05 - x) * ratio_sum(params, g, np.array([x]), x)

        res = optimize.minimize_scalar(neg, bounds=(1e-9, 0.05), method="bounded", options={"xatol": 1e-12})
        assert sol.gain_lower == pytest.approx(-res.fun, rel=1e-6)
        assert sol.x_star == pytest.approx(res.x, abs=1e-5)

    def test_reports_and_trace(self, params):
        sol = solve_asymptotic(params, FIG5_M2)
        assert np.all(np.diff(sol.trace) >= -1e-12)
        assert sol.gain_lower <= sol.gain_unbounded + 1e-15
        assert sol.c_star.c.sum() == pytest.approx(sol.x_star)
        assert max(g for _, g in sol.sweep) == sol.gain_lower

    def test_equal_biases_match_unbiased_at_long_range(self):
        g = GroupProfile([0.03, 0.01], [0.5, 0.5])
        step = g.lambda_0 / 200
        asym = solve_asymptotic(SystemParams.from_db(), g, step)
        unb = solve_unbiased(SystemParams.from_db(R=1e4), g, step)
        assert abs(asym.x_star - unb.x_star) <= step + 1e-12
        assert asym.gain_lower == pytest.approx(unb.gain, rel=1e-6)

    @pytest.mark.parametrize("lam", [0.02, 0.06, 0.1])
    def test_close_to_exact(self, params, lam):
        g = GroupProfile([lam, lam], [0.1, 0.9])
        ex = solve_exact(params, g, GridSpec(x_divisions=100, y_divisions=100))
        asym = solve_asymptotic(params, g, g.lambda_0 / 100)
        assert asym.gain_lower == pytest.approx(ex.gain, rel=0.05)

    def test_empty(self, params):
        assert solve_asymptotic(params, GroupProfile([0.0], [1.0])).gain_lower == 0.0
