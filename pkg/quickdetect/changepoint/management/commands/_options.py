"""
Flags and error translation shared by the quickdetect commands
"""
import functools
import logging

from django.core.management.base import CommandError

from quickdetect.changepoint import asymptotics, exactsolve
from quickdetect.changepoint.exceptions import DomainError, NumericalError
from quickdetect.changepoint.forms import PROCEDURES
from quickdetect.changepoint.models import MODEL_NAMES
from quickdetect.changepoint.ocsolve import RULES, calibrate


logger = logging.getLogger("quickdetect.commands")

DOMAIN_EXIT = 2
NUMERICAL_EXIT = 3


def add_model_arguments(parser, model_required=False):
    parser.add_argument('--config', help='TOML run file; explicit flags override it')
    parser.add_argument('--model', choices=MODEL_NAMES, required=model_required)
    parser.add_argument('--delta', type=float, help='beta model parameter')
    parser.add_argument('--theta', type=float, help='exp-shift model parameter')
    parser.add_argument('--seed', type=int, help='RNG seed (QD_SEED overrides)')
    parser.add_argument('--output', help='report path (default: stdout)')


def add_run_arguments(parser):
    add_model_arguments(parser)
    parser.add_argument('--proc', choices=PROCEDURES)
    parser.add_argument('--r', type=float, help='head start of SR-r')
    parser.add_argument('--p', type=float, help='geometric prior parameter')
    parser.add_argument('--pi', type=float, help='prior mass of a change before the start')
    parser.add_argument('--gamma', type=float, help='target ARL to false alarm')
    parser.add_argument('--A', dest='A', type=float, help='threshold')
    add_grid_arguments(parser)


def add_grid_arguments(parser, rule=True):
    parser.add_argument('--grid', '--N', dest='N', type=int, metavar='N',
                        help='grid size in cells (default: QD_GRID_SIZE)')
    if rule:
        parser.add_argument('--rule', choices=RULES,
                            help='quadrature: midpoint cells (default) or trapezoid hats')


def translate_errors(handle):
    """Map domain errors to exit code 2 and numerical failures to exit code 3."""
    @functools.wraps(handle)
    def wrapper(self, *args, **options):
        try:
            return handle(self, *args, **options)
        except DomainError as exc:
            raise CommandError(str(exc), returncode=DOMAIN_EXIT) from exc
        except (NumericalError, OverflowError) as exc:
            raise CommandError(f"numerical failure: {exc}", returncode=NUMERICAL_EXIT) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=DOMAIN_EXIT) from exc
    return wrapper


def resolve_head_start(config, model):
    """Head start of SR-r: the flag, else the minimax r_A (u2b) or r* (beta)."""
    if config.proc != 'sr-r':
        return None
    if config.r is not None:
        return config.r
    if model.name in ('u2b', 'exp-double') and config.gamma is not None:
        return exactsolve.u2b_calibrate(config.gamma)[1]
    if model.name in ('beta', 'beta-swapped'):
        return asymptotics.head_start(config.delta)
    raise DomainError('r', f"required for sr-r on the {model.name} model")


def resolve_threshold(config, model, kind):
    """The --A flag, else the threshold calibrated to --gamma."""
    if config.A is not None:
        return config.A
    return calibrate(model, kind, config.gamma, N=config.N, rule=config.rule)
