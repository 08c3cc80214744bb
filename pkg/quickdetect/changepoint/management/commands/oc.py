from django.core.management.base import BaseCommand

from quickdetect.changepoint import exactsolve
from quickdetect.changepoint.exceptions import DomainError
from quickdetect.changepoint.forms import build_run_config
from quickdetect.changepoint.ocsolve import oc_report
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import add_run_arguments, resolve_head_start, resolve_threshold, translate_errors


class Command(BaseCommand):
    help = 'Operating characteristics of one procedure: ARL, ADD curve, J_P, J_ST, J_B, Bayes risks.'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--csv', help='write the ADD-vs-nu curve (columns nu,add) here')
        parser.add_argument('--nu-max', dest='nu_max', type=int,
                            help='fixed curve length instead of stopping at the plateau')
        parser.add_argument('--m', type=int, help='local PFA window')
        parser.add_argument('--k-max', dest='k_max', type=int, default=50,
                            help='last k of the local PFA profile')
        parser.add_argument('--exact', action='store_true',
                            help='closed-form characteristics of the u2b model')
        parser.add_argument('--no-richardson', dest='richardson', action='store_false',
                            help='skip the N/2 drift estimate')

    @translate_errors
    def handle(self, *args, **options):
        config = build_run_config(options)
        model = config.model()
        r = resolve_head_start(config, model)
        kind = config.kind(r)
        header = make_header(config.as_header(), config.seed, config.N, command='oc')
        if options['exact']:
            report = self._exact(config, model, r)
            emit_report(report, 'json', path=config.output, header=header, stream=self.stdout)
            return
        A = resolve_threshold(config, model, kind)
        config.extra['A_used'] = A
        header = make_header(config.as_header(), config.seed, config.N, command='oc')
        report = oc_report(model, kind, A, N=config.N, start=r, prior=config.prior,
                           m=options.get('m'), k_max=options.get('k_max'),
                           nu_max=options.get('nu_max'), richardson=options['richardson'],
                           rule=config.rule)
        emit_report(report, 'json', path=config.output, header=header, stream=self.stdout)
        if config.csv:
            rows = [{"nu": nu, "add": add} for nu, add in report.add_curve]
            emit_report(rows, 'csv', path=config.csv, header=header, columns=("nu", "add"))
            if config.output:
                self.stdout.write(self.style.SUCCESS(f'ADD curve written to {config.csv}'))

    def _exact(self, config, model, r):
        if model.name not in ('u2b', 'exp-double'):
            raise DomainError('exact', f"closed forms exist only for u2b, not {model.name}")
        if config.proc == 'srp':
            B = config.A if config.A is not None else exactsolve.u2b_srp_threshold(config.gamma)
            arl, add, mu_q = exactsolve.u2b_srp_oc(B)
            return {"procedure": "srp", "A": B, "arl": arl, "j_p": add, "add_inf": add,
                    "j_st": add, "mu_q": mu_q, "lambda_a": exactsolve.survival_ratio(B)}
        if config.proc not in ('sr', 'sr-r'):
            raise DomainError('exact', f"no closed form for the {config.proc} procedure")
        r = r or 0.0
        A = config.A if config.A is not None else self._threshold(config, r)
        report = exactsolve.u2b_oc(A, r).as_dict()
        report["procedure"] = config.proc
        return report

    def _threshold(self, config, r):
        A, r_minimax = exactsolve.u2b_calibrate(config.gamma)
        if abs(r - r_minimax) > 1e-12:
            raise DomainError('exact', "closed-form calibration needs r = r_A; pass --A instead")
        return A
