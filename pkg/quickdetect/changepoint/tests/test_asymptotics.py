import dataclasses
import math

from django.test import SimpleTestCase, tag
from scipy import integrate

from quickdetect.changepoint.asymptotics import (
    AsymptoticConstants,
    approx_oc,
    beta_constants,
    c_of_r_beta,
    estimate_constants,
    head_start,
    lerch,
    overshoot_constants,
    special_function,
    stationary_density_beta,
)
from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.models import model_from_name


def reference_constants(delta, zeta, varkappa):
    information, c_inf, second_moment = beta_constants(delta)
    return AsymptoticConstants(
        I=information, zeta=zeta, varkappa=varkappa, C_inf=c_inf,
        C_of_r=lambda r: c_of_r_beta(delta, r), r_star=head_start(delta),
        E0_Z1_sq=second_moment,
    )


class SpecialFunctionTests(SimpleTestCase):
    def test_polygamma_values(self):
        self.assertAlmostEqual(special_function("digamma", 1.0), -0.5772156649015329, places=10)
        self.assertAlmostEqual(special_function("trigamma", 1.0), math.pi ** 2 / 6, places=10)

    def test_lerch_series(self):
        self.assertAlmostEqual(lerch(0.5, 1.0), 2 * math.log(2), places=10)
        self.assertAlmostEqual(special_function("lerch", 0.0, 4.0), 0.25, places=12)
        series = sum(0.3 ** n / (n + 2.5) for n in range(200))
        self.assertAlmostEqual(lerch(0.3, 2.5), series, places=12)

    def test_domains(self):
        with self.assertRaises(DomainError):
            lerch(1.0, 1.0)
        with self.assertRaises(DomainError):
            special_function("digamma", 0.0)
        with self.assertRaises(DomainError):
            special_function("zeta", 2.0)


class BetaConstantTests(SimpleTestCase):
    def test_closed_forms(self):
        information, c_inf, second_moment = beta_constants(1.0)
        self.assertEqual(information, 1.0)
        self.assertAlmostEqual(c_inf, math.pi ** 2 / 6, places=10)
        self.assertAlmostEqual(second_moment, math.pi ** 2 / 3, places=10)
        information, c_inf, _ = beta_constants(5.0)
        self.assertAlmostEqual(information, 0.2)
        self.assertAlmostEqual(c_inf, 3.19, delta=0.005)

    def test_head_start(self):
        self.assertLess(abs(head_start(1.0) - 2.0) / 2.0, 0.02)
        self.assertLess(abs(head_start(5.0) - 11.0) / 11.0, 0.02)
        r_star = head_start(1.0)
        z = r_star / (1 + r_star)
        self.assertAlmostEqual(-math.log(1 - z) / z, math.pi ** 2 / 6, places=8)

    def test_c_of_r(self):
        self.assertAlmostEqual(c_of_r_beta(1.0, 0.0), 1.0, places=12)
        for delta in (0.5, 1.0, 5.0):
            r_star = head_start(delta)
            self.assertAlmostEqual(c_of_r_beta(delta, r_star), beta_constants(delta)[1], places=8)
            self.assertLess(c_of_r_beta(delta, 0.0), beta_constants(delta)[1])
            values = [c_of_r_beta(delta, r) for r in (0.0, 0.5, 2.0, 10.0, 100.0)]
            self.assertEqual(values, sorted(values))
        with self.assertRaises(DomainError):
            c_of_r_beta(1.0, -1.0)

    def test_stationary_density(self):
        for delta in (1.0, 5.0):
            total, _ = integrate.quad(lambda x: stationary_density_beta(delta, x), 0, math.inf,
                                      epsabs=1e-11)
            self.assertAlmostEqual(total, 1.0, places=8)
        self.assertAlmostEqual(stationary_density_beta(1.0, 1.0), 0.25)
        slope = math.log(stationary_density_beta(1.0, 1e4) / stationary_density_beta(1.0, 1e2)) \
            / math.log(1e2)
        self.assertAlmostEqual(slope, -2.0, delta=0.01)
        with self.assertRaises(DomainError):
            stationary_density_beta(1.0, 0.0)


class ApproximationTests(SimpleTestCase):
    def test_threshold_from_gamma(self):
        approximation = approx_oc(reference_constants(1.0, 0.425, 1.25), gamma=100.0, r=2.0)
        self.assertAlmostEqual(approximation.A, 0.425 * 102, places=10)
        self.assertAlmostEqual(approximation.arl, 100.0)

    def test_delays_become_accurate_at_large_thresholds(self):
        approximation = approx_oc(reference_constants(5.0, 0.685, 0.435), A=3452.0, r=11.0)
        self.assertLess(abs(approximation.add_inf - 27.05) / 27.05, 0.01)
        self.assertLess(abs(approximation.add_0 - 27.0) / 27.0, 0.01)
        self.assertAlmostEqual(approximation.arl, 3452.0 / 0.685 - 11.0)

    def test_srp_uses_mean_of_quasi_stationary_law(self):
        approximation = approx_oc(reference_constants(1.0, 0.425, 1.25), A=43.0, mu_q=2.6)
        self.assertAlmostEqual(approximation.arl, 43.0 / 0.425 - 2.6)
        self.assertEqual(approximation.add_0, approximation.add_inf)

    def test_exactly_one_target(self):
        with self.assertRaises(DomainError):
            approx_oc(reference_constants(1.0, 0.425, 1.25), A=43.0, gamma=100.0)


class OvershootTests(SimpleTestCase):
    def test_beta_delta_one(self):
        estimate = overshoot_constants(model_from_name("beta", delta=1.0), k_max=60,
                                       n_paths=20000, seed=1)
        self.assertTrue(0.0 < estimate.zeta < 1.0)
        self.assertLess(abs(estimate.zeta - 0.425), 0.03)
        self.assertLess(abs(estimate.varkappa - 1.25), 0.1)
        self.assertGreater(estimate.zeta_se, 0.0)

    def test_reproducible(self):
        model = model_from_name("u2b")
        first = overshoot_constants(model, k_max=30, n_paths=4000, seed=3)
        second = overshoot_constants(model, k_max=30, n_paths=4000, seed=3)
        self.assertEqual(first.zeta, second.zeta)
        self.assertGreater(first.zeta, 0.0)

    def test_rejects_nonpositive_information(self):
        model = dataclasses.replace(model_from_name("beta", delta=1.0), kl=-1.0)
        with self.assertRaises(DomainError):
            overshoot_constants(model, k_max=30, n_paths=2000)
        with self.assertRaises(DomainError):
            overshoot_constants(model_from_name("u2b"), k_max=5, n_paths=2000)

    def test_estimate_constants_provenance(self):
        constants = estimate_constants(model_from_name("exp-shift", theta=0.5), k_max=30,
                                       n_paths=4000, seed=2)
        self.assertEqual(constants.sources["C_inf"], "unavailable")
        self.assertEqual(constants.sources["zeta"], "monte-carlo")
        self.assertIsNone(constants.r_star)
        self.assertNotIn("C_of_r", constants.as_dict())


@tag("slow")
class OvershootAcceptanceTests(SimpleTestCase):
    def test_beta_constants_at_one_million_paths(self):
        for delta, zeta, varkappa in ((1.0, 0.425, 1.25), (5.0, 0.685, 0.435)):
            constants = estimate_constants(model_from_name("beta", delta=delta), seed=7)
            self.assertLess(abs(constants.zeta - zeta) / zeta, 0.02)
            self.assertLess(abs(constants.varkappa - varkappa) / varkappa, 0.05)
            self.assertEqual(constants.sources["C_inf"], "closed-form")
