import math

import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from quickdetect.changepoint import exactsolve
from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.models import make_rng, model_from_name
from quickdetect.changepoint.ocsolve import OCSolver, Start
from quickdetect.changepoint.procedures import ShiryaevRobertsR


GAMMAS = (1.2, 1.5, 1.8, 2.1)


def relative(a, b):
    return abs(a - b) / abs(b)


class SeparableKernelTests(SimpleTestCase):
    def setUp(self):
        self.model = model_from_name("u2b")

    def test_factorization_holds(self):
        pre = exactsolve.U2B_PRE_KERNEL.factorization_residual(self.model.lr_cdf_pre, 2.0)
        post = exactsolve.U2B_POST_KERNEL.factorization_residual(self.model.lr_cdf_post, 2.0)
        self.assertLessEqual(pre, 1e-12)
        self.assertLessEqual(post, 1e-12)

    def test_homogeneous_equation(self):
        solution = exactsolve.separable_solve(exactsolve.U2B_PRE_KERNEL, 0.0, 1.5)
        self.assertEqual(solution.coefficient, 0.0)
        self.assertEqual(float(solution(0.7)), 0.0)

    def test_arl_coefficient_matches_closed_form(self):
        A = 1.3
        solution = exactsolve.separable_solve(exactsolve.U2B_PRE_KERNEL, 1.0, A)
        expected = 0.5 * A / (1.0 - 0.5 * math.log1p(A))
        self.assertAlmostEqual(solution.coefficient, expected, places=12)
        for x in (0.0, 0.4, 1.3):
            self.assertAlmostEqual(float(solution(x)), exactsolve.u2b_arl(A, x), places=12)

    def test_delay_coefficient_matches_closed_form(self):
        A = 1.7
        expected = 0.25 * A * A / (1.0 - 0.5 * (math.log1p(A) + 1.0 / (1.0 + A) - 1.0))
        self.assertAlmostEqual(exactsolve.delay_coefficient(A), expected, places=12)
        for x in (0.0, 0.5, 1.7):
            self.assertAlmostEqual(exactsolve.u2b_delay0(A, x), 1.0 + expected / (1.0 + x) ** 2,
                                   places=12)
        self.assertAlmostEqual(exactsolve.u2b_add_inf(A), 1.0 + expected / (1.0 + A), places=12)

    def test_iadd_matches_closed_form(self):
        A = 1.4
        M0 = exactsolve.delay_coefficient(A)
        ratio = 0.5 * math.log1p(A)
        integral = 0.5 * A + 0.5 * M0 * A / (1.0 + A)
        for x in (0.0, 0.6, 1.4):
            expected = 1.0 + M0 / (1.0 + x) ** 2 + integral / ((1.0 - ratio) * (1.0 + x))
            self.assertAlmostEqual(exactsolve.u2b_iadd(A, x), expected, places=11)

    def test_closed_forms_are_separable_solutions(self):
        A = 0.9
        self.assertIs(exactsolve.iadd_solution(A).kernel, exactsolve.U2B_PRE_KERNEL)
        self.assertIs(exactsolve.delay0_solution(A).kernel, exactsolve.U2B_POST_KERNEL)
        self.assertIs(exactsolve.iadd_solution(A).v, exactsolve.delay0_solution(A))
        self.assertEqual(exactsolve.u2b_arl(A, 0.2), float(exactsolve.arl_solution(A)(0.2)))

    def test_matches_numerical_solver(self):
        solver = OCSolver.create(self.model, ShiryaevRobertsR(0.0), 1.0, 4000)
        solution = exactsolve.separable_solve(exactsolve.U2B_PRE_KERNEL, 1.0, 1.0)
        self.assertLess(relative(solver.arl().at(0.0), float(solution(0.0))), 1e-5)

    def test_threshold_domain(self):
        with self.assertRaises(DomainError):
            exactsolve.separable_solve(exactsolve.U2B_PRE_KERNEL, 1.0, 2.5)
        with self.assertRaises(DomainError):
            exactsolve.u2b_arl(3.0)


class MinimaxTests(SimpleTestCase):
    def test_calibration_hits_gamma(self):
        for gamma in GAMMAS + (2.0,):
            A, r = exactsolve.u2b_calibrate(gamma)
            self.assertTrue(0.0 < A <= 2.0)
            self.assertAlmostEqual(r, math.sqrt(1 + A) - 1, places=14)
            self.assertLess(abs(exactsolve.u2b_arl(A, r) - gamma), 1e-9)
            ratio = 0.5 * math.log1p(A)
            self.assertAlmostEqual(1.0 + A / (2.0 * (1.0 + r) * (1.0 - ratio)), gamma, places=9)
        self.assertLess(exactsolve.u2b_calibrate(1.0001)[0], 1e-3)
        with self.assertRaises(DomainError):
            exactsolve.u2b_calibrate(2.5)
        with self.assertRaises(DomainError):
            exactsolve.u2b_calibrate(1.0)

    def test_srp_threshold(self):
        self.assertAlmostEqual(exactsolve.u2b_srp_threshold(2.0), math.e - 1, places=12)
        self.assertLess(exactsolve.u2b_srp_threshold(1.0001), 1e-3)
        for gamma in GAMMAS:
            B = exactsolve.u2b_srp_threshold(gamma)
            self.assertLess(abs(exactsolve.u2b_srp_oc(B)[0] - gamma), 1e-6)

    def test_sr_r_at_minimax_head_start_is_an_equalizer(self):
        A, r = exactsolve.u2b_calibrate(1.8)
        self.assertAlmostEqual(exactsolve.u2b_delay0(A, r), exactsolve.u2b_add_inf(A), places=12)

    def test_srp_is_not_minimax(self):
        for gamma in GAMMAS:
            A, r = exactsolve.u2b_calibrate(gamma)
            B = exactsolve.u2b_srp_threshold(gamma)
            self.assertGreater(exactsolve.u2b_srp_oc(B)[1], exactsolve.u2b_sup_add(A, r))
            self.assertAlmostEqual(exactsolve.u2b_lower_bound(A, r), exactsolve.u2b_sup_add(A, r),
                                   places=10)

    def test_agrees_with_numerical_solver(self):
        for gamma in GAMMAS:
            A, r = exactsolve.u2b_calibrate(gamma)
            solver = OCSolver.create(model_from_name("u2b"), ShiryaevRobertsR(r), A, 2000)
            start = Start.point(r)
            self.assertLess(relative(solver.arl().at(r), gamma), 1e-4)
            self.assertLess(relative(solver.add_curve(start).supremum()[0],
                                     exactsolve.u2b_sup_add(A, r)), 1e-4)
            _, profile = solver.local_pfa(start, 1, 3)
            self.assertLess(abs(profile[2] - exactsolve.u2b_local_pfa(A, r, 2, 1)), 1e-4)


class LocalPfaTests(SimpleTestCase):
    def test_independent_of_k(self):
        values = {exactsolve.u2b_local_pfa(1.5, 0.3, k, 3) for k in range(1, 8)}
        self.assertEqual(len(values), 1)
        self.assertAlmostEqual(exactsolve.u2b_local_pfa(1.5, 0.3, 4, 1), 1 - 0.5 * math.log(2.5))

    def test_first_window(self):
        A, r = 1.5, 0.3
        self.assertAlmostEqual(exactsolve.u2b_local_pfa(A, r, 0, 1), 1 - A / (2 * (1 + r)))
        ratio = 0.5 * math.log1p(A)
        self.assertAlmostEqual(exactsolve.u2b_local_pfa(A, r, 0, 3),
                               1 - A / (2 * (1 + r)) * ratio ** 2)

    def test_domain(self):
        with self.assertRaises(DomainError):
            exactsolve.u2b_local_pfa(1.0, 0.0, 1, 0)
        with self.assertRaises(DomainError):
            exactsolve.u2b_local_pfa(1.0, -1.0, 1, 1)

    def test_first_step_reaches_the_quasi_stationary_law(self):
        A, r_minimax = exactsolve.u2b_calibrate(2.0)
        model = model_from_name("u2b")
        samples = []
        for r, seed in ((0.0, 1), (1.0, 2), (r_minimax, 3)):
            values = (1 + r) * model.lr_sample("pre", 100000, make_rng(seed))
            samples.append(values[values < A])
        for other in samples[1:]:
            self.assertGreater(stats.ks_2samp(samples[0], other).pvalue, 0.001)


class CurveTests(SimpleTestCase):
    def test_curves(self):
        rows = exactsolve.u2b_performance_curves()
        self.assertEqual(len(rows), 50)
        gammas = [row["gamma"] for row in rows]
        self.assertTrue(1.0 < gammas[0] and gammas[-1] < exactsolve.GAMMA_BAR)
        for row in rows:
            self.assertLess(row["jp_srr"], row["jp_srp"])
            self.assertAlmostEqual(row["jp_srr"], row["jb"], places=10)
        srr = [row["jp_srr"] for row in rows]
        srp = [row["jp_srp"] for row in rows]
        self.assertTrue(all(np.diff(srr) > 0))
        self.assertTrue(all(np.diff(srp) > 0))
