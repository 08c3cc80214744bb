"""Simulation estimates of operating characteristics.

Every metric the integral-equation engine produces has a direct Monte
Carlo counterpart here, used to validate the engine and the closed forms.
Replications are split into batches with their own Philox substreams
(see ``procedures.run_replications``) so estimates are reproducible from
the seed alone.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import exactsolve
from .exceptions import DomainError
from .models import ChangePointModel, model_from_name
from .ocsolve import OCSolver, Start
from .procedures import (
    ProcedureSpec,
    Shiryaev,
    ShiryaevRobertsR,
    run_multicyclic,
    run_replications,
    simulate_stopping_times,
)


logger = logging.getLogger("quickdetect.montecarlo")

METRICS = ("arl", "add", "pfa_bayes", "stadd", "local_pfa")
MIN_REPS = 1000


@dataclass
class MCEstimate:
    value: float
    std_error: float
    n_reps: int
    seed: int
    metric: str
    effective_n: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)

    def brackets(self, value, sigmas=3.0, slack=0.0):
        return abs(self.value - value) <= sigmas * self.std_error + slack * abs(value)


def _mean_estimate(samples, n_reps, seed, metric, **extra):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise DomainError("n_reps", f"only {samples.size} usable replications for {metric}")
    return MCEstimate(
        value=float(samples.mean()),
        std_error=float(samples.std(ddof=1) / math.sqrt(samples.size)),
        n_reps=int(n_reps),
        seed=int(seed),
        metric=metric,
        effective_n=int(samples.size),
        extra=extra,
    )


def _stopping_times(spec, model, n_reps, seed, change_points=None, horizon=10**7):
    times, censored = run_replications(
        lambda size, rng: simulate_stopping_times(spec, model, size, rng,
                                                  change_points=change_points, horizon=horizon),
        n_reps, seed)
    if censored.any():
        logger.warning("%d of %d replications censored at horizon %d",
                       int(censored.sum()), n_reps, horizon)
    return times


def _bayes_batch(spec, model, p, pi, size, rng, horizon):
    before = rng.random(size) < pi
    nu = np.where(before, 0, rng.geometric(p, size) - 1)
    times, censored = simulate_stopping_times(spec, model, size, rng, change_points=nu,
                                              horizon=horizon)
    return times, nu, censored


def mc_estimate(metric, spec: ProcedureSpec, model: ChangePointModel, params=None,
                n_reps=10**5, seed=0) -> MCEstimate:
    """Estimate ``metric`` by simulation.

    ``params`` carries ``nu`` (add, stadd), ``gamma`` (stadd default
    nu = 20 gamma), ``p`` and ``pi`` (pfa_bayes) and ``k``, ``m``
    (local_pfa).
    """
    params = dict(params or {})
    if metric not in METRICS:
        raise DomainError("metric", f"expected one of {METRICS}, got {metric!r}")
    if n_reps is None or int(n_reps) < MIN_REPS:
        raise DomainError("n_reps", f"must be at least {MIN_REPS}, got {n_reps!r}")
    n_reps = int(n_reps)
    horizon = int(params.get("horizon", 10**7))

    if metric == "arl":
        times = _stopping_times(spec, model, n_reps, seed, horizon=horizon)
        return _mean_estimate(times, n_reps, seed, metric)

    if metric == "add":
        nu = int(params.get("nu", 0))
        if nu < 0:
            raise DomainError("nu", f"must be nonnegative, got {nu!r}")
        times = _stopping_times(spec, model, n_reps, seed, change_points=nu, horizon=horizon)
        kept = times[times > nu] - nu
        if kept.size < times.size:
            logger.info("ADD(%d): %d of %d runs stopped before the change and were discarded",
                        nu, times.size - kept.size, times.size)
        return _mean_estimate(kept, n_reps, seed, metric, nu=nu)

    if metric == "pfa_bayes":
        if "p" not in params:
            raise DomainError("p", "pfa_bayes needs the geometric prior parameter p")
        p, pi = float(params["p"]), float(params.get("pi", 0.0))
        if not 0.0 < p < 1.0:
            raise DomainError("p", f"must lie in (0, 1), got {p!r}")
        if not 0.0 <= pi < 1.0:
            raise DomainError("pi", f"must lie in [0, 1), got {pi!r}")
        times, nu, censored = run_replications(
            lambda size, rng: _bayes_batch(spec, model, p, pi, size, rng, horizon), n_reps, seed)
        if censored.any():
            logger.warning("%d Bayesian replications censored", int(censored.sum()))
        false_alarms = (times <= nu).astype(float)
        delays = (times - nu)[times > nu]
        add = _mean_estimate(delays, n_reps, seed, "add_bayes")
        return _mean_estimate(false_alarms, n_reps, seed, metric, p=p, pi=pi,
                              add_bayes=add.value, add_bayes_se=add.std_error)

    if metric == "stadd":
        if "nu" in params:
            nu = int(params["nu"])
        elif "gamma" in params:
            nu = int(round(20 * float(params["gamma"])))
        else:
            raise DomainError("nu", "stadd needs nu or gamma (nu defaults to 20 gamma)")
        estimate = run_multicyclic(spec, model, nu, n_reps, seed)
        return MCEstimate(
            value=estimate.value,
            std_error=estimate.std_error,
            n_reps=estimate.n_reps,
            seed=int(seed),
            metric=metric,
            effective_n=estimate.n_reps,
            extra={"nu": nu, "mean_false_alarms": estimate.mean_false_alarms},
        )

    k, m = int(params.get("k", 0)), int(params.get("m", 1))
    if k < 0 or m < 1:
        raise DomainError("m", f"need k >= 0 and m >= 1, got k={k}, m={m}")
    times = _stopping_times(spec, model, n_reps, seed, horizon=horizon)
    survivors = times[times > k]
    if survivors.size < times.size:
        logger.info("local PFA(k=%d): %d of %d runs already stopped", k,
                    times.size - survivors.size, times.size)
    return _mean_estimate((survivors <= k + m).astype(float), n_reps, seed, metric, k=k, m=m)


@dataclass
class Check:
    name: str
    reference: float
    estimate: float
    std_error: float | None
    passed: bool


@dataclass
class SuiteResult:
    suite: str
    seed: int
    checks: list
    passed: bool = False

    def as_dict(self):
        return {
            "suite": self.suite,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [check.__dict__ for check in self.checks],
        }


def _against_simulation(name, reference, estimate: MCEstimate, slack=1e-3):
    return Check(name, float(reference), estimate.value, estimate.std_error,
                 bool(estimate.brackets(reference, slack=slack)))


def _against_exact(name, reference, value, rtol=1e-4):
    return Check(name, float(reference), float(value), None,
                 bool(abs(value - reference) <= rtol * abs(reference)))


def _suite_beta1(n_reps, seed, N):
    model = model_from_name("beta", delta=1.0)
    kind = ShiryaevRobertsR(2.0)
    spec = ProcedureSpec(kind, 43.0)
    solver = OCSolver.create(model, kind, 43.0, N)
    start = Start.point(2.0)
    return [
        _against_simulation("arl", start.value(solver.arl()),
                            mc_estimate("arl", spec, model, n_reps=n_reps, seed=seed)),
        _against_simulation("add_0", start.value(solver.delay0()),
                            mc_estimate("add", spec, model, {"nu": 0}, n_reps=n_reps, seed=seed + 1)),
        _against_simulation("add_5", solver.add_curve(start, nu_max=5, stop_at_plateau=False).add[5],
                            mc_estimate("add", spec, model, {"nu": 5}, n_reps=n_reps, seed=seed + 2)),
        _against_simulation("stadd", solver.stadd(start),
                            mc_estimate("stadd", spec, model, {"gamma": 100.0},
                                        n_reps=max(MIN_REPS, n_reps // 10), seed=seed + 3)),
    ]


def _suite_u2b(n_reps, seed, N):
    model = model_from_name("u2b")
    gamma = 2.0
    A, r = exactsolve.u2b_calibrate(gamma)
    kind = ShiryaevRobertsR(r)
    spec = ProcedureSpec(kind, A)
    solver = OCSolver.create(model, kind, A, N)
    start = Start.point(r)
    curve = solver.add_curve(start)
    engine_pfa = solver.local_pfa(start, 1, 3)[1]
    return [
        _against_exact("arl_engine", exactsolve.u2b_arl(A, r), start.value(solver.arl())),
        _against_exact("j_p_engine", exactsolve.u2b_sup_add(A, r), curve.supremum()[0]),
        _against_exact("local_pfa_engine", exactsolve.u2b_local_pfa(A, r, 1, 1), engine_pfa[1]),
        _against_simulation("arl", exactsolve.u2b_arl(A, r),
                            mc_estimate("arl", spec, model, n_reps=n_reps, seed=seed), slack=0.0),
        _against_simulation("add_0", exactsolve.u2b_delay0(A, r),
                            mc_estimate("add", spec, model, {"nu": 0}, n_reps=n_reps, seed=seed + 1),
                            slack=0.0),
        _against_simulation("local_pfa", exactsolve.u2b_local_pfa(A, r, 2, 1),
                            mc_estimate("local_pfa", spec, model, {"k": 2, "m": 1},
                                        n_reps=n_reps, seed=seed + 2), slack=0.0),
    ]


def _suite_bayes(n_reps, seed, N):
    model = model_from_name("beta", delta=1.0)
    p, A = 0.01, 50.0
    kind = Shiryaev(p)
    spec = ProcedureSpec(kind, A)
    solver = OCSolver.create(model, kind, A, N)
    pfa, add, _, _ = solver.bayes(p, 0.0, Start.point(kind.initial()))
    estimate = mc_estimate("pfa_bayes", spec, model, {"p": p}, n_reps=n_reps, seed=seed)
    add_estimate = MCEstimate(estimate.extra["add_bayes"], estimate.extra["add_bayes_se"],
                              n_reps, seed, "add_bayes")
    return [
        _against_simulation("pfa_bayes", pfa, estimate),
        _against_simulation("add_bayes", add, add_estimate),
    ]


VALIDATION_SUITES = {
    "beta1": _suite_beta1,
    "u2b": _suite_u2b,
    "bayes": _suite_bayes,
}


def run_validation(suite, n_reps=10**5, seed=0, N=None) -> SuiteResult:
    """Run a named suite: engine values against simulation and closed forms."""
    try:
        build = VALIDATION_SUITES[suite]
    except KeyError:
        raise DomainError("suite", f"expected one of {tuple(VALIDATION_SUITES)}, got {suite!r}") from None
    checks = build(int(n_reps), int(seed), N)
    result = SuiteResult(suite=suite, seed=int(seed), checks=checks,
                         passed=all(check.passed for check in checks))
    for check in checks:
        log = logger.info if check.passed else logger.warning
        log("[%s] %s: reference %.8g, estimate %.8g (se %s) %s", suite, check.name,
            check.reference, check.estimate, check.std_error, "ok" if check.passed else "FAILED")
    return result
