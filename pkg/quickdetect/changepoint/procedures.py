"""Detection statistics and stopping rules.

Every procedure here is an instance of the Markov recursion
V_n = xi(V_{n-1}) * Lambda_n with a procedure-specific start V_0, stopped
at the first n with V_n >= A:

    Shiryaev   xi(v) = (1+v)/(1-p),  V_0 = pi/((1-pi)p)
    SR         xi(v) = 1+v,          V_0 = 0
    SR-r       xi(v) = 1+v,          V_0 = r
    SRP        xi(v) = 1+v,          V_0 drawn from the quasi-stationary law

The change point nu is the index of the last pre-change observation:
observations 1..nu follow f, observations nu+1, nu+2, ... follow g.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from django.conf import settings

from .exceptions import DomainError
from .models import ChangePointModel, make_rng


logger = logging.getLogger("quickdetect.procedures")

# Above this the statistic is carried as a logarithm.
LOG_SPACE_SWITCH = 1e280


@dataclass(frozen=True)
class Shiryaev:
    p: float
    pi: float = 0.0
    label = "shiryaev"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError("p", f"must lie in (0, 1), got {self.p!r}")
        if not 0.0 <= self.pi < 1.0:
            raise DomainError("pi", f"must lie in [0, 1), got {self.pi!r}")

    def xi(self, v):
        return (1.0 + v) / (1.0 - self.p)

    def log_xi_increment(self):
        return -math.log1p(-self.p)

    def initial(self, rng=None):
        return self.pi / ((1.0 - self.pi) * self.p)

    def initial_many(self, size, rng=None):
        return np.full(size, self.initial())


@dataclass(frozen=True)
class ShiryaevRoberts:
    label = "sr"

    def xi(self, v):
        return 1.0 + v

    def log_xi_increment(self):
        return 0.0

    def initial(self, rng=None):
        return 0.0

    def initial_many(self, size, rng=None):
        return np.zeros(size)


@dataclass(frozen=True)
class ShiryaevRobertsR:
    r: float
    label = "sr-r"

    def __post_init__(self):
        if self.r is None or not math.isfinite(self.r) or self.r < 0:
            raise DomainError("r", f"must be a nonnegative real, got {self.r!r}")

    def xi(self, v):
        return 1.0 + v

    def log_xi_increment(self):
        return 0.0

    def initial(self, rng=None):
        return float(self.r)

    def initial_many(self, size, rng=None):
        return np.full(size, float(self.r))


@dataclass(frozen=True)
class ShiryaevRobertsPollak:
    """SR statistic started from the quasi-stationary law ``quasi_stationary``.

    The start is drawn by inverting the piecewise-constant cdf of the
    supplied grid density: pick a cell by its mass, then a uniform point
    inside the cell.
    """
    quasi_stationary: object = field(compare=False)
    label = "srp"

    def xi(self, v):
        return 1.0 + v

    def log_xi_increment(self):
        return 0.0

    def initial(self, rng=None):
        return float(self.initial_many(1, rng)[0])

    def initial_many(self, size, rng=None):
        if rng is None:
            raise DomainError("rng", "SRP needs a random generator to draw its start")
        q = self.quasi_stationary
        low, high = q.grid.cell_bounds()
        masses = np.clip(q.values, 0.0, None) * q.grid.weights
        cdf = np.cumsum(masses)
        cells = np.searchsorted(cdf / cdf[-1], rng.random(size), side="right")
        cells = np.minimum(cells, len(masses) - 1)
        return low[cells] + rng.random(size) * (high[cells] - low[cells])


KINDS = (Shiryaev, ShiryaevRoberts, ShiryaevRobertsR, ShiryaevRobertsPollak)


@dataclass(frozen=True)
class ProcedureSpec:
    kind: object
    threshold: float

    def __post_init__(self):
        if not isinstance(self.kind, KINDS):
            raise DomainError("proc", f"unknown procedure kind {self.kind!r}")
        if self.threshold is None or not self.threshold > 0:
            raise DomainError("A", f"threshold must be positive, got {self.threshold!r}")


@dataclass
class DetectionResult:
    stopping_time: int | None
    censored: bool
    trajectory: list
    alarm_raised: bool
    false_alarm: bool | None = None
    posterior: list | None = None

    def as_dict(self):
        return {
            "stopping_time": self.stopping_time if not self.censored else "censored at horizon",
            "censored": self.censored,
            "alarm_raised": self.alarm_raised,
            "false_alarm": self.false_alarm,
            "n_observed": len(self.trajectory),
            "final_value": self.trajectory[-1] if self.trajectory else None,
        }


def xi(kind, v):
    """Apply the procedure's xi to a statistic value."""
    if np.any(np.asarray(v) < 0):
        raise DomainError("v", f"statistic must be nonnegative, got {v!r}")
    return kind.xi(v)


def step(spec: ProcedureSpec, v_prev, lr_value):
    """One update V_n = xi(V_{n-1}) * Lambda_n."""
    if v_prev < 0:
        raise DomainError("v_prev", f"must be nonnegative, got {v_prev!r}")
    if not lr_value > 0:
        raise DomainError("lr_value", f"must be positive, got {lr_value!r}")
    v_next = spec.kind.xi(v_prev) * lr_value
    if not math.isfinite(v_next):
        raise OverflowError(f"statistic overflowed after xi({v_prev!r}) * {lr_value!r}")
    return v_next


def _log_step(kind, log_v, lr_value):
    # log xi(v) for v = exp(log_v) large; exp(-log_v) underflows harmlessly.
    return log_v + math.log1p(math.exp(-log_v)) + kind.log_xi_increment() + math.log(lr_value)


def posterior_probability(R_np, p):
    """P(nu < n | F_n) = R / (R + 1/p) for the Shiryaev statistic R = R_{n,p}."""
    if R_np < 0:
        raise DomainError("R_np", f"must be nonnegative, got {R_np!r}")
    if not 0.0 < p < 1.0:
        raise DomainError("p", f"must lie in (0, 1), got {p!r}")
    return R_np / (R_np + 1.0 / p)


def run_detection(spec: ProcedureSpec, stream: Iterable, model: ChangePointModel,
                  horizon, start=None, rng=None, true_change=None) -> DetectionResult:
    """Run the stopping rule online over ``stream``.

    Observations are pulled one at a time and nothing is read after the
    stopping index. A stream that ends before the horizon counts as censored.
    """
    if horizon is None or int(horizon) < 1:
        raise DomainError("horizon", f"must be at least 1, got {horizon!r}")
    kind = spec.kind
    v = float(start) if start is not None else kind.initial(rng)
    log_threshold = math.log(spec.threshold)
    log_v = None
    trajectory = []
    posterior = [] if isinstance(kind, Shiryaev) else None
    iterator = iter(stream)
    stopping_time = None
    for n in range(1, int(horizon) + 1):
        try:
            x = next(iterator)
        except StopIteration:
            break
        lr_value = float(model.lr(model.clamp(float(x))))
        if log_v is None and kind.xi(v) * lr_value > LOG_SPACE_SWITCH:
            log_v = math.log(kind.xi(v)) + math.log(lr_value)
            v = math.exp(log_v) if log_v < 709.0 else math.inf
            crossed = log_v >= log_threshold
        elif log_v is None:
            v = step(spec, v, lr_value)
            crossed = v >= spec.threshold
        else:
            log_v = _log_step(kind, log_v, lr_value)
            v = math.exp(log_v) if log_v < 709.0 else math.inf
            crossed = log_v >= log_threshold
        trajectory.append(v)
        if posterior is not None:
            posterior.append(posterior_probability(v, kind.p) if math.isfinite(v) else 1.0)
        if crossed:
            stopping_time = n
            break
    alarm = stopping_time is not None
    false_alarm = None
    if true_change is not None and alarm:
        false_alarm = stopping_time <= true_change
    elif true_change is not None:
        false_alarm = False
    logger.debug("Detection with %s stopped at %s after %d observations",
                 kind.label, stopping_time, len(trajectory))
    return DetectionResult(
        stopping_time=stopping_time,
        censored=not alarm,
        trajectory=trajectory,
        alarm_raised=alarm,
        false_alarm=false_alarm,
        posterior=posterior,
    )


def simulate_stopping_times(spec: ProcedureSpec, model: ChangePointModel, size, rng,
                            change_points=None, horizon=10**7, start=None):
    """Run ``size`` independent replications in lock-step.

    ``change_points`` gives nu per replication (``None`` means no change);
    Lambda is drawn from its pre-change law for n <= nu and from the
    post-change law afterwards. Returns the stopping times and a mask of
    replications censored at ``horizon``.
    """
    kind = spec.kind
    if start is None:
        v = kind.initial_many(size, rng)
    else:
        v = np.full(size, float(start))
    if change_points is None:
        nu = np.full(size, np.iinfo(np.int64).max)
    else:
        nu = np.broadcast_to(np.asarray(change_points, dtype=np.int64), (size,))
    times = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    n = 0
    while active.size and n < horizon:
        n += 1
        lam = np.empty(active.size)
        pre = nu[active] >= n
        if pre.any():
            lam[pre] = model.lr_sample("pre", int(pre.sum()), rng)
        if not pre.all():
            lam[~pre] = model.lr_sample("post", int((~pre).sum()), rng)
        v[active] = kind.xi(v[active]) * lam
        hit = v[active] >= spec.threshold
        times[active[hit]] = n
        active = active[~hit]
    censored = np.zeros(size, dtype=bool)
    censored[active] = True
    times[active] = n
    return times, censored


def run_replications(function, n_reps, seed, batch=None, workers=None):
    """Split ``n_reps`` into batches with their own RNG substreams.

    ``function(size, rng)`` returns a tuple of arrays; the batches run on a
    thread pool and are concatenated in batch order.
    """
    batch = batch or settings.QD_MC_BATCH
    workers = workers or settings.QD_WORKERS
    sizes = [batch] * (n_reps // batch)
    if n_reps % batch:
        sizes.append(n_reps % batch)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda args: function(args[0], make_rng(args[1])),
                              zip(sizes, seeds)))
    return tuple(np.concatenate(column) for column in zip(*parts))


@dataclass
class MulticyclicEstimate:
    value: float
    std_error: float
    n_reps: int
    true_change: int
    mean_false_alarms: float


def _multicyclic_batch(spec, model, true_change, size, rng, horizon):
    kind = spec.kind
    v = kind.initial_many(size, rng)
    alarms = np.zeros(size, dtype=np.int64)
    for _ in range(true_change):
        v = kind.xi(v) * model.lr_sample("pre", size, rng)
        hit = v >= spec.threshold
        if hit.any():
            alarms[hit] += 1
            v[hit] = kind.initial_many(int(hit.sum()), rng)
    delays = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    n = 0
    while active.size and n < horizon:
        n += 1
        v[active] = kind.xi(v[active]) * model.lr_sample("post", active.size, rng)
        hit = v[active] >= spec.threshold
        delays[active[hit]] = n
        active = active[~hit]
    censored = np.zeros(size, dtype=bool)
    censored[active] = True
    delays[active] = n
    return delays, alarms, censored


def run_multicyclic(spec: ProcedureSpec, model: ChangePointModel, true_change, n_reps, seed,
                    horizon=10**6) -> MulticyclicEstimate:
    """Stationary delay of the repeated procedure.

    The rule is restarted from its initial state after every false alarm
    during the first ``true_change`` observations; the delay of the first
    alarm after the change is averaged over ``n_reps`` replications.
    """
    if true_change is None or int(true_change) < 0:
        raise DomainError("nu", f"must be a nonnegative integer, got {true_change!r}")
    if n_reps is None or int(n_reps) < 2:
        raise DomainError("n_reps", f"must be at least 2, got {n_reps!r}")
    true_change = int(true_change)
    delays, alarms, censored = run_replications(
        lambda size, rng: _multicyclic_batch(spec, model, true_change, size, rng, horizon),
        int(n_reps), seed)
    if censored.any():
        logger.warning("%d multi-cyclic replications censored at horizon %d",
                       int(censored.sum()), horizon)
    mean_alarms = float(alarms.mean())
    if true_change > 0 and mean_alarms < 5:
        logger.warning("Only %.2f false-alarm cycles on average before nu=%d; "
                       "the stationary regime may not be reached", mean_alarms, true_change)
    values = delays.astype(float)
    return MulticyclicEstimate(
        value=float(values.mean()),
        std_error=float(values.std(ddof=1) / math.sqrt(values.size)),
        n_reps=int(values.size),
        true_change=true_change,
        mean_false_alarms=mean_alarms,
    )
