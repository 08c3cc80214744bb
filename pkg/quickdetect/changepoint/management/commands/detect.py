import sys

from django.core.management.base import BaseCommand

from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.forms import build_run_config
from quickdetect.changepoint.models import make_rng
from quickdetect.changepoint.ocsolve import OCSolver
from quickdetect.changepoint.procedures import (
    ProcedureSpec,
    ShiryaevRobertsPollak,
    run_detection,
)
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import add_run_arguments, resolve_head_start, resolve_threshold, translate_errors


def read_observations(handle):
    """Newline-delimited decimals, parsed lazily; blank lines are skipped."""
    for number, line in enumerate(handle, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            yield float(text)
        except ValueError:
            raise DomainError('input', f"line {number} is not a decimal: {text!r}") from None


class Command(BaseCommand):
    help = 'Run a stopping rule online over an observation stream (file or stdin).'
    stealth_options = ('stream',)

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--input', default='-', help="observation file, '-' for stdin")
        parser.add_argument('--horizon', type=int, default=10**7)
        parser.add_argument('--true-change', dest='true_change', type=int,
                            help='known change point, to label the alarm')
        parser.add_argument('--emit-trajectory', dest='emit_trajectory', action='store_true')

    @translate_errors
    def handle(self, *args, **options):
        config = build_run_config(options)
        model = config.model()
        r = resolve_head_start(config, model)
        kind = config.kind(r)
        A = resolve_threshold(config, model, kind)
        rng = make_rng(config.seed)
        if isinstance(kind, ShiryaevRobertsPollak):
            q, _ = OCSolver.create(model, kind, A, config.N).quasi_stationary()
            kind = ShiryaevRobertsPollak(q)
        spec = ProcedureSpec(kind, A)
        stream = options.get('stream')
        if stream is not None:
            result = self._detect(spec, stream, model, rng, options)
        elif options['input'] == '-':
            result = self._detect(spec, read_observations(sys.stdin), model, rng, options)
        else:
            try:
                with open(options['input'], encoding='utf-8') as handle:
                    result = self._detect(spec, read_observations(handle), model, rng, options)
            except FileNotFoundError as exc:
                raise DomainError('input', f"cannot open {options['input']}") from exc
        report = result.as_dict()
        report.update({"procedure": kind.label, "A": A})
        if options['emit_trajectory']:
            report["trajectory"] = result.trajectory
            if result.posterior is not None:
                report["posterior"] = result.posterior
        config.extra['A_used'] = A
        header = make_header(config.as_header(), config.seed, None, command='detect')
        emit_report(report, 'json', path=config.output, header=header, stream=self.stdout)

    def _detect(self, spec, stream, model, rng, options):
        return run_detection(spec, stream, model, options['horizon'], rng=rng,
                             true_change=options.get('true_change'))
