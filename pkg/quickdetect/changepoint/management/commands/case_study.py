import logging

from django.conf import settings
from django.core.management.base import BaseCommand

from quickdetect.changepoint import exactsolve
from quickdetect.changepoint.asymptotics import head_start
from quickdetect.changepoint.forms import build_run_config
from quickdetect.changepoint.ocsolve import (
    OCSolver,
    Start,
    calibrate,
    oc_report,
    optimize_head_start,
)
from quickdetect.changepoint.procedures import (
    ShiryaevRoberts,
    ShiryaevRobertsPollak,
    ShiryaevRobertsR,
)
from quickdetect.changepoint.reports import emit_report, make_header

from ._options import add_grid_arguments, add_model_arguments, translate_errors


logger = logging.getLogger("quickdetect.commands.case_study")

EXP_GAMMAS = (5000.0, 7500.0, 10000.0)


def beta_study(model, gamma, N, r=None, A=None, A_srp=None, nu_max=50):
    """SR-r with the asymptotically optimal head start against SRP at the same ARL."""
    r = head_start(model.params["delta"]) if r is None else r
    srr_kind = ShiryaevRobertsR(r)
    A = A if A is not None else calibrate(model, srr_kind, gamma, N=N)
    srp_kind = ShiryaevRobertsPollak(None)
    A_srp = A_srp if A_srp is not None else calibrate(model, srp_kind, gamma, N=N)
    srr = oc_report(model, srr_kind, A, N=N, start=r, nu_max=nu_max, richardson=False)
    srp = oc_report(model, srp_kind, A_srp, N=N, nu_max=nu_max, richardson=False)
    curve = [{"nu": nu, "add_srr": add, "add_srp": add_srp}
             for (nu, add), (_, add_srp) in zip(srr.add_curve, srp.add_curve)]
    summary = {
        "gamma": gamma,
        "r": r,
        "sr_r": srr.as_dict(),
        "srp": srp.as_dict(),
        "srr_below_srp": all(row["add_srr"] <= row["add_srp"] * (1 + 1e-9) for row in curve[:21]),
    }
    return summary, curve


def u2b_study(gammas=None):
    rows = exactsolve.u2b_performance_curves(gammas)
    summary = {
        "points": len(rows),
        "gamma_bar": exactsolve.GAMMA_BAR,
        "srp_worse_everywhere": all(row["jp_srp"] > row["jp_srr"] for row in rows),
        "min_gap": min(row["jp_srp"] - row["jp_srr"] for row in rows),
        "max_minimax_gap": max(abs(row["jp_srr"] - row["jb"]) for row in rows),
    }
    return summary, rows


def exp_row(model, gamma, N):
    """J_B, J_P and J_ST of SR, optimized SR-r and SRP at one ARL level."""
    sr_kind = ShiryaevRoberts()
    A_sr = calibrate(model, sr_kind, gamma, N=N)
    sr = OCSolver.create(model, sr_kind, A_sr, N)

    r, A_srr, jp_srr = optimize_head_start(model, gamma, N=N)
    srr_kind = ShiryaevRobertsR(r)
    srr = OCSolver.create(model, srr_kind, A_srr, N)

    srp_kind = ShiryaevRobertsPollak(None)
    A_srp = calibrate(model, srp_kind, gamma, N=N)
    srp = OCSolver.create(model, srp_kind, A_srp, N)
    q, _ = srp.quasi_stationary()
    srp_start = Start.randomized(q)

    row = {
        "gamma": gamma,
        "r": r,
        "A_sr": A_sr,
        "A_srr": A_srr,
        "A_srp": A_srp,
        "jb": srr.lower_bound(r),
        "jp_srr": jp_srr,
        "jp_srp": srp.add_curve(srp_start).supremum()[0],
        "jst_sr": sr.stadd(Start.point(0.0)),
        "jst_srr": srr.stadd(Start.point(r)),
        "jst_srp": srp.stadd(srp_start),
    }
    logger.info("Exponential case study at gamma=%g: %s", gamma, row)
    return row


def exp_study(model, gammas, N):
    rows = [exp_row(model, float(gamma), N) for gamma in gammas]
    summary = {
        "theta": model.params["theta"],
        "rows": rows,
        "ordering_holds": all(row["jb"] < row["jp_srr"] < row["jp_srp"] for row in rows),
        "stadd_ordering_holds": all(row["jst_sr"] < row["jst_srr"] <= row["jst_srp"] * (1 + 1e-9)
                                    for row in rows),
        "srp_equalizer_gap": max(abs(row["jp_srp"] - row["jst_srp"]) / row["jst_srp"]
                                 for row in rows),
    }
    return summary, rows


class Command(BaseCommand):
    help = ('Reproduce a case study: beta (ADD curves), u2b (exact curves) or exp (risk table). '
            'Also available as "case-study".')

    def add_arguments(self, parser):
        parser.add_argument('study', choices=('beta', 'u2b', 'exp'))
        add_model_arguments(parser)
        parser.add_argument('--gamma', type=float, action='append',
                            help='ARL level; repeat for several (exp, u2b)')
        parser.add_argument('--r', type=float, help='SR-r head start (beta)')
        parser.add_argument('--A', dest='A', type=float, help='SR-r threshold (beta)')
        parser.add_argument('--A-srp', dest='A_srp', type=float, help='SRP threshold (beta)')
        add_grid_arguments(parser, rule=False)
        parser.add_argument('--nu-max', dest='nu_max', type=int, default=50)
        parser.add_argument('--csv', help='curve or table CSV')

    @translate_errors
    def handle(self, *args, **options):
        study = options['study']
        gammas = options.get('gamma') or []
        values = dict(options)
        values['gamma'] = None
        values['A'] = None
        if study == 'beta':
            values['model'], values['delta'] = 'beta', options.get('delta') or 1.0
        elif study == 'u2b':
            values['model'] = 'u2b'
        else:
            values['model'], values['theta'] = 'exp-shift', options.get('theta') or 0.1
        config = build_run_config(values, require_target=False)
        model = config.model()
        N = config.N or settings.QD_GRID_SIZE

        if study == 'beta':
            gamma = gammas[0] if gammas else 100.0
            summary, rows = beta_study(model, gamma, N, r=options.get('r'), A=options.get('A'),
                                       A_srp=options.get('A_srp'), nu_max=options['nu_max'])
            columns = ("nu", "add_srr", "add_srp")
        elif study == 'u2b':
            summary, rows = u2b_study(gammas or None)
            columns = ("gamma", "jp_srr", "jp_srp", "jb")
        else:
            summary, rows = exp_study(model, gammas or EXP_GAMMAS, N)
            columns = ("gamma", "jb", "jp_srr", "jp_srp", "jst_sr", "jst_srr", "jst_srp",
                       "r", "A_sr", "A_srr", "A_srp")

        config.extra.update({"study": study, "gammas": gammas or None})
        header = make_header(config.as_header(), config.seed, N, command='case-study')
        emit_report(summary, 'json', path=config.output, header=header, stream=self.stdout)
        if config.csv:
            emit_report(rows, 'csv', path=config.csv, header=header, columns=columns)
            if config.output:
                self.stdout.write(self.style.SUCCESS(f'{study} curves written to {config.csv}'))
