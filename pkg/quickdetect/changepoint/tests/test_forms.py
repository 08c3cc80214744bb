import os
import tempfile

from django.test import SimpleTestCase, override_settings

from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.forms import RunConfigForm, build_run_config, load_config_file
from quickdetect.changepoint.procedures import Shiryaev, ShiryaevRobertsR


class RunConfigFormTests(SimpleTestCase):
    def test_valid_form(self):
        form = RunConfigForm({'model': 'beta', 'delta': 1.0, 'proc': 'sr-r', 'r': 2.0, 'gamma': 100})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.cleaned_data['gamma'], 100.0)

    def test_gamma_and_threshold_are_exclusive(self):
        form = RunConfigForm({'model': 'u2b', 'gamma': 2.0, 'A': 1.0})
        self.assertFalse(form.is_valid())
        self.assertIn('gamma', form.errors)
        form = RunConfigForm({'model': 'u2b'})
        self.assertFalse(form.is_valid())
        self.assertTrue(RunConfigForm({'model': 'u2b'}, require_target=False).is_valid())

    def test_model_parameters_required(self):
        form = RunConfigForm({'model': 'beta', 'gamma': 100})
        self.assertFalse(form.is_valid())
        self.assertIn('delta', form.errors)
        form = RunConfigForm({'model': 'exp-shift', 'gamma': 100})
        self.assertIn('theta', form.errors)
        form = RunConfigForm({'model': 'u2b', 'proc': 'shiryaev', 'A': 1.0})
        self.assertIn('p', form.errors)

    def test_ranges(self):
        for field, value in (('delta', -1.0), ('r', -0.5), ('p', 1.0), ('pi', 1.0),
                             ('gamma', 0.5), ('A', 0.0), ('N', 5)):
            data = {'model': 'u2b', 'A': 1.0, field: value}
            if field == 'A':
                data = {'model': 'u2b', 'A': value}
            form = RunConfigForm(data)
            self.assertFalse(form.is_valid(), field)
            self.assertIn(field, form.errors)

    def test_unknown_model(self):
        form = RunConfigForm({'model': 'gaussian', 'gamma': 10})
        self.assertIn('model', form.errors)

    def test_unwritable_output(self):
        form = RunConfigForm({'model': 'u2b', 'A': 1.0, 'output': '/nonexistent/dir/out.json'})
        self.assertIn('output', form.errors)


class BuildRunConfigTests(SimpleTestCase):
    def test_flags(self):
        config = build_run_config({'model': 'beta', 'delta': 2.0, 'proc': 'sr-r', 'r': 1.5,
                                   'A': 40.0, 'seed': 3})
        self.assertEqual(config.model().name, 'beta')
        self.assertEqual(config.kind(), ShiryaevRobertsR(1.5))
        self.assertEqual(config.seed, 3)
        self.assertIsNone(config.prior)
        self.assertNotIn('output', config.as_header())

    def test_shiryaev_prior(self):
        config = build_run_config({'model': 'u2b', 'proc': 'shiryaev', 'p': 0.1, 'A': 1.0})
        self.assertEqual(config.kind(), Shiryaev(0.1, 0.0))
        self.assertEqual(config.prior, {'p': 0.1, 'pi': 0.0})

    def test_missing_head_start(self):
        config = build_run_config({'model': 'u2b', 'proc': 'sr-r', 'A': 1.0})
        with self.assertRaises(DomainError):
            config.kind()

    def test_first_error_is_raised(self):
        with self.assertRaises(DomainError) as raised:
            build_run_config({'model': 'beta', 'gamma': 100})
        self.assertEqual(raised.exception.field, 'delta')

    def test_config_file_overlaid_by_flags(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'run.toml')
            with open(path, 'w') as handle:
                handle.write('gamma = 100.0\nN = 500\n\n[model]\nname = "beta"\ndelta = 1.0\n\n'
                             '[procedure]\nproc = "sr-r"\nr = 2.0\n')
            self.assertEqual(load_config_file(path)['model'], 'beta')
            config = build_run_config({'config': path, 'r': 1.0, 'delta': None})
        self.assertEqual(config.model_name, 'beta')
        self.assertEqual(config.delta, 1.0)
        self.assertEqual(config.r, 1.0)
        self.assertEqual(config.N, 500)
        self.assertEqual(config.gamma, 100.0)

    def test_bad_config_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'bad.toml')
            with open(path, 'w') as handle:
                handle.write('gamma = = 1\n')
            with self.assertRaises(DomainError):
                load_config_file(path)
            with self.assertRaises(DomainError):
                load_config_file(os.path.join(directory, 'missing.toml'))

    @override_settings(QD_SEED_FROM_ENV=True, QD_SEED=7)
    def test_environment_seed_wins(self):
        config = build_run_config({'model': 'u2b', 'A': 1.0, 'seed': 3})
        self.assertEqual(config.seed, 7)

    @override_settings(QD_SEED_FROM_ENV=False, QD_SEED=7, QD_GRID_SIZE=321)
    def test_defaults_from_settings(self):
        config = build_run_config({'model': 'u2b', 'A': 1.0})
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.N, 321)
