"""
Tests for the approximate policy functions and their certificates
"""
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from scipy.optimize import brentq

from core.exceptions import (
    ConditionError,
    ContractError,
    DivergenceError,
    NonContractionError,
)
from core.growth import closed_form_manifold
from core.manifold import (
    DomainSpec,
    FirstIterate,
    PolicyApprox,
    PolicyCache,
    chain_residual,
    check_conditions,
    error_bound,
    eval_lyapunov_perron,
    eval_policy,
    eval_policy_hadamard,
    invariance_residual,
    lemma_fixed_points,
    lemma_recursion,
    manifold_tail,
    norm_bound,
    picard_trace,
    sample_ball,
    sample_domain,
    search_verified_domain,
)
from core.numerics import central_jacobian
from core.tests.fixtures import (
    exo_pipeline,
    growth_G,
    growth_pipeline,
    linear_pipeline,
)

RADII = (0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1)


class GrowthCase(SimpleTestCase):
    """Growth pipeline with its largest verified ball"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.params, cls.pipe = growth_pipeline()
        cls.system = cls.pipe.system
        cls.split = cls.pipe.split
        cls.dom, cls.report = search_verified_domain(cls.system, RADII)
        cls.r = cls.dom.r_u
        cls.u_grid = np.linspace(-cls.r, cls.r, 41)[:, None]

    def oracle(self, u):
        return closed_form_manifold(self.params, self.split, u)


class SamplingTests(SimpleTestCase):
    """Test the deterministic samples of balls"""

    def test_domain_samples_are_reproducible(self):
        """Test two calls give identical points inside the radii"""
        dom = DomainSpec(0.3, 0.7, sample_count=256)
        first = sample_domain(1, 2, dom)
        np.testing.assert_array_equal(first, sample_domain(1, 2, dom))
        self.assertLessEqual(np.abs(first[:, 0]).max(), 0.3 * (1 + 1e-12))
        self.assertLessEqual(np.linalg.norm(first[:, 1:], axis=1).max(),
                             0.7 * (1 + 1e-12))

    def test_domain_samples_reach_boundary(self):
        """Test the samples include points on both sphere boundaries"""
        dom = DomainSpec(0.3, 0.7, sample_count=256)
        pts = sample_domain(1, 2, dom)
        self.assertAlmostEqual(np.abs(pts[:, 0]).max(), 0.3, delta=1e-12)
        self.assertAlmostEqual(np.linalg.norm(pts[:, 1:], axis=1).max(),
                               0.7, delta=1e-12)

    def test_ball_samples(self):
        """Test ball samples include the center and stay inside"""
        pts = sample_ball(2, 0.5, 128)
        np.testing.assert_array_equal(pts[0], [0.0, 0.0])
        self.assertLessEqual(np.linalg.norm(pts, axis=1).max(),
                             0.5 * (1 + 1e-12))

    def test_invalid_radii(self):
        """Test nonpositive radii are rejected"""
        with self.assertRaises(ContractError):
            DomainSpec(0.0, 1.0)


class ConditionTests(GrowthCase):
    """Test check_conditions and the domain search"""

    def test_linear_system_passes_everywhere(self):
        """Test F = G = 0 gives sup_G = 0, L = 0 and all conditions"""
        system = linear_pipeline().system
        report = check_conditions(system, DomainSpec(5.0, 5.0, 512))
        self.assertLess(report.sup_G, 1e-9)
        self.assertLess(report.L, 1e-6)
        self.assertTrue(report.all_ok)

    def test_growth_condition2_rhs(self):
        """Test (1/||B^-1|| - ||A||)/4 = (1/(ab) - a)/4"""
        report = check_conditions(self.system, DomainSpec(0.02, 0.02))
        self.assertAlmostEqual(report.cond2_rhs,
                               (1 / (0.36 * 0.99) - 0.36) / 4, delta=1e-10)
        self.assertAlmostEqual(report.cond2_rhs, 0.6114, delta=1e-4)

    def test_growth_small_ball_passes(self):
        """Test all three conditions hold on r_u = r_v = 0.02"""
        report = check_conditions(self.system,
                                  DomainSpec(0.02, 0.02, 10000))
        self.assertTrue(report.cond1_ok)
        self.assertTrue(report.cond2_ok)
        self.assertTrue(report.cond3_ok)
        self.assertGreater(report.samples_used, 10000)

    def test_rho_relation(self):
        """Test Condition 2 implies rho < (1 - ||B^-1|| ||A||)/4"""
        rho_limit = (1 - self.split.normBinv * self.split.normA) / 4
        self.assertTrue(self.report.cond2_ok)
        self.assertLess(self.report.rho, rho_limit)
        self.assertAlmostEqual(self.report.rho,
                               self.split.normBinv * self.report.L,
                               delta=1e-15)

    def test_search_finds_verified_ball(self):
        """Test the search returns a passing radius of at least 0.02"""
        self.assertGreaterEqual(self.r, 0.02)
        self.assertTrue(self.report.all_ok)
        self.assertEqual(self.dom.r_u, self.dom.r_v)

    def test_search_without_candidates(self):
        """Test a grid where nothing passes raises ConditionError"""
        with self.assertRaises(ConditionError):
            search_verified_domain(self.system, (5.0,), sample_count=256)

    def test_exo_unit_ball(self):
        """Test the exogenous-state model passes on r_u = r_v = 1"""
        report = check_conditions(exo_pipeline().system,
                                  DomainSpec(1.0, 1.0, 1024))
        self.assertTrue(report.all_ok)


class PolicyTests(GrowthCase):
    """Test the h_i of the recursive scheme"""

    def test_origin_is_fixed(self):
        """Test every order maps 0 to 0"""
        for order in range(4):
            v = PolicyApprox(order, self.system).evaluate(np.zeros(1))
            self.assertLessEqual(abs(v[0]), 1e-12)

    def test_order_zero_is_zero_map(self):
        """Test h_0 is identically zero"""
        p = PolicyApprox(0, self.system)
        np.testing.assert_array_equal(p.evaluate(self.u_grid), 0.0)

    def test_h1_matches_scalar_root(self):
        """Test h_1 solves v = -B^{-1} G(u, v) at 100 points"""
        s = self.split.B[0, 0]
        u = np.linspace(-self.r, self.r, 100)
        h1 = PolicyApprox(1, self.system).evaluate(u[:, None])[:, 0]
        for ui, hi in zip(u, h1):
            root = brentq(lambda v: v + growth_G(self.params, ui, v) / s,
                          -self.r, self.r, xtol=1e-15)
            self.assertAlmostEqual(hi, root, delta=1e-10)

    def test_h1_at_five_hundredths(self):
        """Test h_1(0.05) against the scalar root"""
        s = self.split.B[0, 0]
        root = brentq(lambda v: v + growth_G(self.params, 0.05, v) / s,
                      -0.05, 0.05, xtol=1e-15)
        h1 = eval_policy(PolicyApprox(1, self.system), np.array([0.05]))
        self.assertAlmostEqual(h1[0], root, delta=1e-10)

    def test_first_picard_iterate(self):
        """Test h_{1,1}(u) = -G(u, 0)/B"""
        u = self.u_grid
        expected = -growth_G(self.params, u, 0.0) / self.split.B[0, 0]
        np.testing.assert_allclose(FirstIterate(self.system).evaluate(u),
                                   expected, atol=1e-12)
        trace = picard_trace(PolicyApprox(1, self.system), np.array([0.02]))
        self.assertAlmostEqual(
            trace[0],
            abs(growth_G(self.params, 0.02, 0.0)) / self.split.B[0, 0],
            delta=1e-14)

    def test_fixed_point_residual(self):
        """Test |h_i(u) - T_{i,u}(h_i(u))| <= inner_tol"""
        for order in (1, 2, 3):
            p = PolicyApprox(order, self.system)
            h = p.evaluate(self.u_grid)
            Th, ok = p.T(order, self.u_grid, h)
            self.assertTrue(ok.all())
            self.assertLessEqual(np.abs(h - Th).max(), 1e-12)

    def test_accuracy_improves_geometrically(self):
        """Test sup errors of h_1, h_2, h_3 decrease at the expected rate"""
        exact = self.oracle(self.u_grid)
        errors = [
            np.abs(PolicyApprox(n, self.system).evaluate(self.u_grid)
                   - exact).max()
            for n in (1, 2, 3)
        ]
        bound = error_bound(self.split, self.report, 1)
        rate = bound.corollary_rate(0.01) + 0.1
        self.assertAlmostEqual(bound.a, 0.6318, delta=1e-4)
        self.assertGreater(errors[0], errors[1])
        self.assertGreater(errors[1], errors[2])
        self.assertLessEqual(errors[1] / errors[0], rate)
        self.assertLessEqual(errors[2] / errors[1], rate)

    def test_norm_bound(self):
        """Test sup |h_i| stays below the a priori norm bound"""
        for order in (1, 2, 3):
            h = PolicyApprox(order, self.system).evaluate(self.u_grid)
            limit = norm_bound(self.split, self.report, order) + 1e-12
            self.assertLessEqual(np.abs(h).max(), limit)

    def test_derivative_bound(self):
        """Test finite-difference slopes of h_i stay below (1 - rho)/rho"""
        bound = error_bound(self.split, self.report, 2)
        u = np.linspace(-0.9 * self.r, 0.9 * self.r, 9)[:, None]
        for order in (1, 2):
            p = PolicyApprox(order, self.system)
            jac = central_jacobian(p.evaluate, u, step=1e-4)
            self.assertLessEqual(np.abs(jac).max(), bound.deriv_bound)

    def test_picard_contraction_factor(self):
        """Test Picard increments shrink by at most ||B^-1|| L + 0.05"""
        p = PolicyApprox(2, self.system)
        for u in (self.r, -self.r, 0.5 * self.r):
            trace = picard_trace(p, np.array([u]))
            trace = trace[trace > 1e-10]
            ratios = trace[1:] / trace[:-1]
            self.assertLessEqual(ratios.max(), self.report.rho + 0.05)

    def test_a_priori_bound_holds(self):
        """Test |h_n - h| <= a^(n-1) ||B^-1|| |h(u_{t+n})| / (1 - rho)"""
        u = self.u_grid
        exact = self.oracle(u)
        for n in (1, 2, 3):
            tail = manifold_tail(self.system, self.oracle, u, n)
            h_tail = float(np.abs(self.oracle(tail)).max())
            bound = error_bound(self.split, self.report, n, h_tail)
            err = np.abs(PolicyApprox(n, self.system).evaluate(u) - exact)
            self.assertLessEqual(err.max(), bound.apriori)

    def test_invariance_residual_decreases(self):
        """Test the invariance residual shrinks with the order"""
        u = np.array([[self.r], [-self.r]])
        residuals = [invariance_residual(PolicyApprox(n, self.system),
                                         u).max() for n in (1, 2, 3)]
        self.assertGreater(residuals[0], residuals[1])
        self.assertGreater(residuals[1], residuals[2])

    def test_manifold_tail_decays(self):
        """Test on-manifold iterates shrink at rate ||A|| + theta"""
        h2 = PolicyApprox(2, self.system).evaluate
        u0 = np.array([self.r])
        for n in (1, 2, 3, 4):
            tail = manifold_tail(self.system, h2, u0, n)
            self.assertLessEqual(abs(tail[0]),
                                 (self.split.normA + 0.1) ** n * self.r)

    def test_cache_matches_uncached(self):
        """Test cached evaluation equals uncached evaluation"""
        plain = PolicyApprox(3, self.system, domain=self.dom)
        cached = PolicyApprox(3, self.system, domain=self.dom).enable_cache()
        first = cached.evaluate(self.u_grid)
        again = cached.evaluate(self.u_grid)
        np.testing.assert_array_equal(first, again)
        np.testing.assert_allclose(first, plain.evaluate(self.u_grid),
                                   atol=1e-9)
        self.assertGreater(len(cached.cache), 0)

    def test_bounded_cache_matches_uncached(self):
        """Test a five-entry cache stays bounded and changes no value"""
        plain = PolicyApprox(3, self.system, domain=self.dom)
        cached = PolicyApprox(3, self.system, domain=self.dom).enable_cache(
            max_entries=5)
        np.testing.assert_allclose(cached.evaluate(self.u_grid),
                                   plain.evaluate(self.u_grid), atol=1e-9)
        self.assertLessEqual(len(cached.cache), 5)
        cached.cache.clear()
        self.assertEqual(len(cached.cache), 0)

    def test_chain_residual_vanishes_on_nested_fixed_points(self):
        """Test (h_2(u), h_1(u_1)) zeroes the stacked residual"""
        u = self.u_grid[::8]
        v0 = PolicyApprox(2, self.system).evaluate(u)
        F, _ = self.system.fg(u, v0)
        u1 = u @ self.split.A.T + F
        v1 = PolicyApprox(1, self.system).evaluate(u1)
        residual = chain_residual(self.system, 2, u, np.hstack([v0, v1]))
        np.testing.assert_allclose(residual, 0.0, atol=1e-10)
        self.assertEqual(PolicyApprox(2, self.system).chain_size, 2)

    def test_newton_inner_solver_agrees(self):
        """Test the Newton inner solver finds the same fixed points"""
        picard = PolicyApprox(2, self.system).evaluate(self.u_grid)
        newton = PolicyApprox(2, self.system,
                              inner_solver='newton').evaluate(self.u_grid)
        np.testing.assert_allclose(newton, picard, atol=1e-10)

    def test_iteration_cap(self):
        """Test a tiny iteration cap raises or yields NaN"""
        p = PolicyApprox(2, self.system, inner_max_iter=2)
        with self.assertRaises(NonContractionError) as ctx:
            p.evaluate(np.array([self.r]))
        self.assertEqual(ctx.exception.order, 2)
        self.assertTrue(np.isnan(p.evaluate(np.array([self.r]),
                                            strict=False)[0]))

    def test_negative_order(self):
        """Test a negative order is rejected"""
        with self.assertRaises(ContractError):
            PolicyApprox(-1, self.system)


class AlternativeSchemeTests(GrowthCase):
    """Test the Hadamard and Lyapunov-Perron comparators"""

    def test_hadamard_order_one(self):
        """Test explicit order 1 equals -B^{-1} G(u, 0)"""
        u = self.u_grid
        np.testing.assert_allclose(
            eval_policy_hadamard(self.system, 1, u),
            FirstIterate(self.system).evaluate(u), atol=1e-15)

    def test_hadamard_matches_implicit(self):
        """Test Hadamard order 8 and implicit order 2 agree to 1e-6"""
        u = self.u_grid
        np.testing.assert_allclose(
            eval_policy_hadamard(self.system, 8, u),
            PolicyApprox(2, self.system).evaluate(u), atol=1e-6)

    def test_hadamard_linear(self):
        """Test every Hadamard order vanishes for a linear model"""
        system = linear_pipeline().system
        u = np.random.default_rng(1).uniform(-1, 1, size=(5, 2))
        for order in (0, 1, 3):
            np.testing.assert_allclose(
                eval_policy_hadamard(system, order, u), 0.0, atol=1e-9)

    def test_lyapunov_perron_single_term(self):
        """Test horizon 0 gives -B^{-1} G(u0, v0)"""
        u0, v0 = np.array([0.01]), np.array([0.002])
        result = eval_lyapunov_perron(self.system, 0, u0, v0)
        expected = -growth_G(self.params, 0.01, 0.002) / self.split.B[0, 0]
        self.assertAlmostEqual(result.value[0], expected, delta=1e-14)

    def test_lyapunov_perron_on_manifold(self):
        """Test a start on h_2 gives a value near the exact policy"""
        u0 = np.array([self.r])
        v0 = PolicyApprox(2, self.system).evaluate(u0)
        result = eval_lyapunov_perron(self.system, 30, u0, v0)
        self.assertTrue(np.all(np.isfinite(result.value)))
        self.assertAlmostEqual(result.value[0], self.oracle(u0)[0],
                               delta=1e-5)

    def test_lyapunov_perron_long_horizon(self):
        """Test horizon 30 from the exact manifold returns the start value"""
        u0 = np.array([self.r])
        v0 = self.oracle(u0)
        result = eval_lyapunov_perron(self.system, 30, u0, v0)
        self.assertEqual(len(result.u_path), 32)
        self.assertAlmostEqual(result.value[0], v0[0], delta=1e-9)

    def test_lyapunov_perron_off_manifold_leaves_ball(self):
        """Test an off-manifold start exits U_r within 60 steps"""
        u0 = np.array([self.r])
        v0 = PolicyApprox(2, self.system).evaluate(u0) + 0.01
        try:
            result = eval_lyapunov_perron(self.system, 60, u0, v0,
                                          r_u=self.r)
            exit_step = result.exit_step
        except DivergenceError as exc:
            exit_step = exc.exit_step or exc.step
        self.assertIsNotNone(exit_step)
        self.assertLessEqual(exit_step, 60)


class PolicyCacheTests(SimpleTestCase):
    """Test the bounded memo of policy values"""

    def setUp(self):
        self.cache = PolicyCache(1e-3, max_entries=2)
        self.points = [np.array([0.01 * i]) for i in range(3)]

    def fill(self):
        for i, u in enumerate(self.points):
            self.cache.put(1, u, np.array([float(i)]))

    def test_oldest_entry_is_evicted(self):
        self.fill()
        self.assertEqual(len(self.cache), 2)
        self.assertIsNone(self.cache.get(1, self.points[0]))
        self.assertEqual(self.cache.get(1, self.points[2])[0], 2.0)

    def test_hit_refreshes_entry(self):
        """Test a read keeps an entry ahead of newer unread ones"""
        self.cache.put(1, self.points[0], np.array([0.0]))
        self.cache.put(1, self.points[1], np.array([1.0]))
        self.cache.get(1, self.points[0])
        self.cache.put(1, self.points[2], np.array([2.0]))
        self.assertIsNone(self.cache.get(1, self.points[1]))
        self.assertEqual(self.cache.get(1, self.points[0])[0], 0.0)

    def test_orders_are_separate(self):
        self.cache.put(1, self.points[0], np.array([1.0]))
        self.assertIsNone(self.cache.get(2, self.points[0]))

    def test_clear(self):
        self.fill()
        self.cache.clear()
        self.assertEqual(len(self.cache), 0)
        self.assertIsNone(self.cache.get(1, self.points[2]))

    def test_needs_room(self):
        with self.assertRaises(ContractError):
            PolicyCache(1e-3, max_entries=0)


class LemmaTests(SimpleTestCase):
    """Test the auxiliary recursion and its fixed points"""

    def test_zero_rho(self):
        """Test rho = 0 keeps every s_i at zero"""
        seq = lemma_recursion(0.0, 0.36, 0.3564, 10)
        np.testing.assert_array_equal(seq.values, 0.0)
        self.assertEqual(seq.s1_star, 0.0)

    def test_random_pairs_converge_to_s1(self):
        """Test monotone convergence to s*_1 for 20 admissible pairs"""
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = rng.uniform(0.0, 0.5)
            rho = rng.uniform(0.0, 0.8) * (1 - c) / 4
            seq = lemma_recursion(rho, c, 1.0, 1000)
            self.assertTrue(np.all(np.diff(seq.values) >= -1e-15))
            self.assertAlmostEqual(seq.values[-1], seq.s1_star, delta=1e-12)
            self.assertLessEqual(seq.s1_star, seq.s2_star)

    def test_s2_below_limit(self):
        """Test s*_2 < (1 - rho)/rho for rho = 0.1, ||B^-1|| ||A|| = 0.2"""
        s1, s2 = lemma_fixed_points(0.1, 0.2)
        self.assertLessEqual(s1, s2)
        self.assertLess(s2, 0.9 / 0.1)

    def test_precondition(self):
        """Test rho outside the admissible range is a contract error"""
        with self.assertRaises(ContractError):
            lemma_recursion(0.3, 0.5, 0.5, 5)


class ErrorBoundTests(GrowthCase):
    """Test the a priori error bound"""

    def test_rate_constant(self):
        """Test a = 2||B^-1||/(1 + ||B^-1|| ||A||)"""
        bound = error_bound(self.split, self.report, 1)
        b = 0.36 * 0.99
        self.assertAlmostEqual(bound.a, 2 * b / (1 + b * 0.36), delta=1e-10)

    def test_zero_tail(self):
        """Test n = 1 with a zero tail gives a zero bound"""
        self.assertEqual(
            error_bound(self.split, self.report, 1, h_tail=0.0).apriori, 0.0)

    def test_default_tail_is_r_v(self):
        """Test the tail defaults to r_v"""
        bound = error_bound(self.split, self.report, 2)
        self.assertEqual(bound.h_tail, self.report.r_v)

    def test_convergence_rate(self):
        """Test a (||A|| + theta)^2 with theta = 0.01"""
        bound = error_bound(self.split, self.report, 1)
        self.assertAlmostEqual(bound.corollary_rate(0.01), 0.0865,
                               delta=1e-3)
        self.assertTrue(bound.converges(0.01))

    def test_fixed_points_ordered(self):
        """Test s*_1 <= s*_2 < (1 - rho)/rho"""
        bound = error_bound(self.split, self.report, 1)
        self.assertLessEqual(bound.s1_star, bound.s2_star)
        self.assertLess(bound.s2_star, bound.deriv_bound)

    def test_requires_condition2(self):
        """Test the bound refuses a report failing Condition 2"""
        with self.assertRaises(ContractError):
            error_bound(self.split, replace(self.report, cond2_ok=False), 1)
