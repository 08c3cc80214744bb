from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from quickdetect.changepoint.montecarlo import VALIDATION_SUITES, run_validation
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import NUMERICAL_EXIT, add_grid_arguments, translate_errors


class Command(BaseCommand):
    help = 'Run a validation suite: engine values against simulation and closed forms.'

    def add_arguments(self, parser):
        parser.add_argument('suite', choices=sorted(VALIDATION_SUITES))
        parser.add_argument('--n-reps', dest='n_reps', type=int, default=10**5)
        parser.add_argument('--seed', type=int)
        add_grid_arguments(parser, rule=False)
        parser.add_argument('--output', help='report path (default: stdout)')

    @translate_errors
    def handle(self, *args, **options):
        seed = options.get('seed')
        if settings.QD_SEED_FROM_ENV or seed is None:
            seed = settings.QD_SEED
        N = options.get('N') or settings.QD_GRID_SIZE
        result = run_validation(options['suite'], n_reps=options['n_reps'], seed=seed, N=N)
        header = make_header({"suite": options['suite'], "n_reps": options['n_reps']}, seed, N,
                             command='validate')
        emit_report(result, 'json', path=options.get('output'), header=header, stream=self.stdout)
        if not result.passed:
            failed = ", ".join(check.name for check in result.checks if not check.passed)
            raise CommandError(f"suite {options['suite']} failed: {failed}", returncode=NUMERICAL_EXIT)
        if options.get('output'):
            self.stdout.write(self.style.SUCCESS(f"Suite {options['suite']} passed"))
