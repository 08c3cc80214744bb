import io
import json
import os
import tempfile
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from quickdetect.changepoint import exactsolve
from quickdetect.changepoint.montecarlo import Check, SuiteResult

from .test_procedures import CountingStream


def run(*args, **options):
    out = io.StringIO()
    call_command(*args, stdout=out, **options)
    return out.getvalue()


def run_json(*args, **options):
    return json.loads(run(*args, **options))


class CalibrateCommandTests(SimpleTestCase):
    def test_exact_minimax(self):
        document = run_json('calibrate', model='u2b', proc='sr-r', gamma=2.0, exact=True)
        A, r = exactsolve.u2b_calibrate(2.0)
        self.assertEqual(document['header']['command'], 'calibrate')
        self.assertAlmostEqual(document['report']['A'], A, places=10)
        self.assertAlmostEqual(document['report']['r'], r, places=10)
        self.assertAlmostEqual(document['report']['arl'], 2.0, places=9)

    def test_exact_srp(self):
        document = run_json('calibrate', model='u2b', proc='srp', gamma=2.0, exact=True)
        self.assertAlmostEqual(document['report']['A'], 1.71828182846, places=10)

    def test_numeric(self):
        document = run_json('calibrate', model='u2b', proc='sr', gamma=1.5, N=500)
        self.assertLess(abs(document['report']['arl'] - 1.5), 0.0025 * 1.5)

    def test_reruns_are_byte_identical(self):
        first = run('calibrate', model='u2b', proc='sr-r', gamma=1.8, exact=True, seed=4)
        second = run('calibrate', model='u2b', proc='sr-r', gamma=1.8, exact=True, seed=4)
        self.assertEqual(first, second)

    def test_exact_needs_separable_model(self):
        with self.assertRaises(CommandError) as raised:
            run('calibrate', model='beta', delta=1.0, gamma=100.0, exact=True)
        self.assertEqual(raised.exception.returncode, 2)

    def test_grid_flag_and_its_alias(self):
        for flag in ('--grid', '--N'):
            document = run_json('calibrate', '--model', 'u2b', '--proc', 'sr', '--gamma', '1.5',
                                flag, '400')
            self.assertEqual(document['header']['grid_size'], 400, flag)
            self.assertEqual(document['report']['rule'], 'midpoint')

    def test_trapezoid_rule(self):
        document = run_json('calibrate', '--model', 'u2b', '--proc', 'sr', '--gamma', '1.5',
                            '--grid', '500', '--rule', 'trapezoid')
        self.assertEqual(document['report']['rule'], 'trapezoid')
        self.assertLess(abs(document['report']['arl'] - 1.5), 0.0025 * 1.5)
        with self.assertRaises(CommandError):
            run('calibrate', '--model', 'u2b', '--gamma', '1.5', '--rule', 'simpson')


class OCCommandTests(SimpleTestCase):
    def test_exact_agrees_with_engine(self):
        exact = run_json('oc', model='u2b', proc='sr-r', gamma=1.8, exact=True)['report']
        numeric = run_json('oc', model='u2b', proc='sr-r', A=exact['A'], r=exact['r'], N=2000,
                           richardson=False)['report']
        for key in ('arl', 'j_p', 'add_inf'):
            self.assertLess(abs(numeric[key] - exact[key]) / exact[key], 1e-4, key)
        self.assertEqual(numeric['add_curve'][0]['nu'], 0)

    def test_curve_csv(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'curve.csv')
            output = os.path.join(directory, 'report.json')
            run('oc', model='u2b', proc='sr', A=1.5, N=500, csv=path, output=output,
                richardson=False)
            with open(path) as handle:
                lines = [line for line in handle.read().splitlines() if not line.startswith('#')]
            with open(output) as handle:
                report = json.load(handle)['report']
        self.assertEqual(lines[0], 'nu,add')
        self.assertEqual(len(lines) - 1, len(report['add_curve']))

    def test_domain_error_exit_code(self):
        with self.assertRaises(CommandError) as raised:
            run('oc', model='beta', gamma=100.0)
        self.assertEqual(raised.exception.returncode, 2)

    def test_trapezoid_rule_agrees_with_midpoint_on_beta(self):
        args = ('--model', 'beta', '--delta', '1.0', '--proc', 'sr-r', '--r', '2.0',
                '--A', '43.0', '--grid', '1000', '--no-richardson')
        midpoint = run_json('oc', *args)['report']
        trapezoid = run_json('oc', *args, '--rule', 'trapezoid')['report']
        self.assertEqual(trapezoid['diagnostics']['rule'], 'trapezoid')
        for key in ('arl', 'j_p', 'j_st'):
            self.assertLess(abs(trapezoid[key] - midpoint[key]) / midpoint[key], 0.002, key)
        with self.assertRaises(CommandError) as raised:
            run('oc', model='u2b', A=3.0, exact=True)
        self.assertEqual(raised.exception.returncode, 2)

    def test_invalid_choice(self):
        with self.assertRaises(CommandError):
            run('oc', '--model', 'gaussian', '--gamma', '10')


class DetectCommandTests(SimpleTestCase):
    def test_stops_reading_at_the_alarm(self):
        stream = CountingStream([0.9] * 10)
        document = run_json('detect', model='u2b', proc='sr', A=5.0, stream=stream,
                            emit_trajectory=True)
        report = document['report']
        self.assertEqual(report['stopping_time'], 2)
        self.assertEqual(stream.consumed, 2)
        self.assertTrue(report['alarm_raised'])
        self.assertEqual(len(report['trajectory']), 2)

    def test_reads_observation_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'obs.txt')
            with open(path, 'w') as handle:
                handle.write('0.1\n\n0.2\n0.3\n')
            report = run_json('detect', model='u2b', proc='sr', A=100.0, input=path)['report']
        self.assertTrue(report['censored'])
        self.assertEqual(report['n_observed'], 3)

    def test_bad_observation(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'obs.txt')
            with open(path, 'w') as handle:
                handle.write('0.1\nabc\n')
            with self.assertRaises(CommandError) as raised:
                run('detect', model='u2b', proc='sr', A=100.0, input=path)
        self.assertEqual(raised.exception.returncode, 2)


class CaseStudyCommandTests(SimpleTestCase):
    def test_u2b_curves(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'u2b.csv')
            output = os.path.join(directory, 'summary.json')
            run('case_study', 'u2b', csv=path, output=output)
            with open(path) as handle:
                lines = handle.read().splitlines()
            with open(output) as handle:
                summary = json.load(handle)['report']
        data = [line for line in lines if not line.startswith('#')]
        self.assertEqual(data[0], 'gamma,jp_srr,jp_srp,jb')
        self.assertEqual(len(data), 51)
        self.assertTrue(summary['srp_worse_everywhere'])
        self.assertLess(summary['max_minimax_gap'], 1e-10)

    def test_hyphenated_name(self):
        document = run_json('case-study', 'u2b', gamma=[1.5, 2.0])
        self.assertEqual(document['header']['command'], 'case-study')
        self.assertEqual(document['report']['points'], 2)


class ValidateCommandTests(SimpleTestCase):
    def test_failed_suite_exit_code(self):
        failing = SuiteResult('u2b', 0, [Check('arl', 2.0, 2.5, 0.01, False)], passed=False)
        target = 'quickdetect.changepoint.management.commands.validate.run_validation'
        with mock.patch(target, return_value=failing):
            with self.assertRaises(CommandError) as raised:
                run('validate', 'u2b', n_reps=1000)
        self.assertEqual(raised.exception.returncode, 3)
        self.assertIn('arl', str(raised.exception))

    def test_engine_checks(self):
        with tempfile.TemporaryDirectory() as directory:
            output = os.path.join(directory, 'suite.json')
            try:
                run('validate', 'u2b', n_reps=1000, seed=1, N=2000, output=output)
            except CommandError as exc:
                self.assertEqual(exc.returncode, 3)
            with open(output) as handle:
                report = json.load(handle)['report']
        checks = {check['name']: check for check in report['checks']}
        for name in ('arl_engine', 'j_p_engine', 'local_pfa_engine'):
            self.assertTrue(checks[name]['passed'], name)


@tag("slow")
class CaseStudyAcceptanceTests(SimpleTestCase):
    def test_beta(self):
        report = run_json('case_study', 'beta', r=2.0, A=43.0, A_srp=43.0, N=2000)['report']
        self.assertLess(abs(report['sr_r']['arl'] - 100.1) / 100.1, 0.005)
        self.assertLess(abs(report['srp']['arl'] - 99.6) / 99.6, 0.005)
        self.assertEqual(len(report['sr_r']['add_curve']), 51)

    def test_exponential(self):
        report = run_json('case-study', 'exp', theta=0.1)['report']
        self.assertEqual(report['rows'][0]['gamma'], 5000.0)
        self.assertEqual(len(report['rows']), 3)
        self.assertTrue(report['ordering_holds'])
        self.assertTrue(report['stadd_ordering_holds'])
        self.assertLess(report['srp_equalizer_gap'], 0.005)
