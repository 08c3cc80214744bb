from django.core.management.base import BaseCommand

from quickdetect.changepoint.asymptotics import approx_oc, estimate_constants
from quickdetect.changepoint.forms import build_run_config
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import add_model_arguments, translate_errors


class Command(BaseCommand):
    help = 'Asymptotic constants (I, zeta, varkappa, C_inf, C(r), r*) with provenance.'

    def add_arguments(self, parser):
        add_model_arguments(parser)
        parser.add_argument('--k-max', dest='k_max', type=int, default=200)
        parser.add_argument('--n-paths', dest='n_paths', type=int, default=10**6)
        parser.add_argument('--gamma', type=float, help='also report first-order OC at this ARL')
        parser.add_argument('--r', type=float, default=None, help='head start for the approximations')

    @translate_errors
    def handle(self, *args, **options):
        config = build_run_config(options, require_target=False)
        model = config.model()
        constants = estimate_constants(model, k_max=options['k_max'], n_paths=options['n_paths'],
                                       seed=config.seed)
        report = constants.as_dict()
        if config.gamma is not None:
            r = config.r if config.r is not None else (constants.r_star or 0.0)
            report["approximation"] = approx_oc(constants, gamma=config.gamma, r=r).__dict__
        config.extra.update({"k_max": options['k_max'], "n_paths": options['n_paths']})
        header = make_header(config.as_header(), config.seed, None, command='constants')
        emit_report(report, 'json', path=config.output, header=header, stream=self.stdout)
