from django.core.management.base import BaseCommand

from quickdetect.changepoint import exactsolve
from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.forms import build_run_config
from quickdetect.changepoint.ocsolve import OCSolver, calibrate
from quickdetect.changepoint.procedures import ShiryaevRobertsPollak
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import add_run_arguments, resolve_head_start, translate_errors


class Command(BaseCommand):
    help = 'Find the threshold A whose ARL to false alarm equals --gamma.'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--zeta', type=float, help='bracket hint: A is near zeta * gamma')
        parser.add_argument('--exact', action='store_true',
                            help='closed-form thresholds of the u2b model')

    @translate_errors
    def handle(self, *args, **options):
        config = build_run_config(options)
        if config.gamma is None:
            raise DomainError('gamma', "calibrate needs a target ARL")
        model = config.model()
        r = resolve_head_start(config, model)
        kind = config.kind(r)
        if options['exact']:
            result = self._exact(config, model, r)
        else:
            A = calibrate(model, kind, config.gamma, x=r, N=config.N, zeta=options.get('zeta'),
                          rule=config.rule)
            solver = OCSolver.create(model, kind, A, config.N, config.rule)
            if isinstance(kind, ShiryaevRobertsPollak):
                arl = solver.srp()[0]
            else:
                arl = solver.arl().at(kind.initial())
            result = {"A": A, "gamma": config.gamma, "proc": config.proc, "r": r, "arl": arl,
                      "rule": config.rule}
        header = make_header(config.as_header(), config.seed, config.N, command='calibrate')
        emit_report(result, 'json', path=config.output, header=header, stream=self.stdout)
        if config.output:
            self.stdout.write(self.style.SUCCESS(f'Calibrated A={result["A"]:.10g}'))

    def _exact(self, config, model, r):
        if model.name not in ('u2b', 'exp-double'):
            raise DomainError('exact', f"closed forms exist only for u2b, not {model.name}")
        if config.proc == 'srp':
            B = exactsolve.u2b_srp_threshold(config.gamma)
            return {"A": B, "gamma": config.gamma, "proc": "srp", "arl": exactsolve.u2b_srp_oc(B)[0]}
        A, r_minimax = exactsolve.u2b_calibrate(config.gamma)
        if config.proc != 'sr-r' or r != r_minimax:
            raise DomainError('exact', "closed-form calibration covers SRP and SR-r at r_A only")
        return {"A": A, "gamma": config.gamma, "proc": "sr-r", "r": r_minimax,
                "arl": exactsolve.u2b_arl(A, r_minimax)}
