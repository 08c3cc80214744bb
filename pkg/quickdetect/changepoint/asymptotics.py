"""Renewal-theoretic constants and first-order approximations.

With Z_k = log Lambda_k and S_k = Z_1 + ... + Z_k, the asymptotics of the
SR family at threshold A are

    E_inf[T]  ~ A/zeta - r                 (SR-r)
    E_inf[T]  ~ A/zeta - mu_Q              (SRP)
    ADD_inf   ~ (log A + varkappa - C_inf) / I
    ADD_0     ~ (log A + varkappa - C(r)) / I

where I = E_0[Z_1], zeta and varkappa are overshoot constants of the
one-sided random walk S_k, and C_inf, C(r) are delay offsets. For the
beta model most of these are available in closed form through polygamma
functions and the Lerch transcendent; zeta and varkappa always come from
Monte Carlo estimates of their series representations.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np
from scipy import optimize, special, stats

from .exceptions import BracketError, DomainError
from .models import ChangePointModel, kl_number
from .procedures import run_replications


logger = logging.getLogger("quickdetect.asymptotics")

SYMMETRIC_MODELS = ("beta", "beta-swapped")
TAIL_TERMS = 20


def digamma(x):
    if not x > 0:
        raise DomainError("x", f"digamma needs x > 0, got {x!r}")
    return float(special.digamma(x))


def trigamma(x):
    if not x > 0:
        raise DomainError("x", f"trigamma needs x > 0, got {x!r}")
    return float(special.polygamma(1, x))


def lerch(z, delta):
    """Phi(z, 1, delta) = sum_{n >= 0} z^n / (n + delta) for |z| < 1."""
    if not abs(z) < 1:
        raise DomainError("z", f"Lerch series needs |z| < 1, got {z!r}")
    if not delta > 0:
        raise DomainError("delta", f"must be positive, got {delta!r}")
    return float(mpmath.lerchphi(z, 1, delta))


_SPECIAL_FUNCTIONS = {"digamma": digamma, "trigamma": trigamma, "lerch": lerch}


def special_function(kind, *args):
    try:
        function = _SPECIAL_FUNCTIONS[kind]
    except KeyError:
        raise DomainError("kind", f"expected one of {tuple(_SPECIAL_FUNCTIONS)}, got {kind!r}") from None
    return function(*args)


def _check_delta(delta):
    if delta is None or not math.isfinite(delta) or delta <= 0:
        raise DomainError("delta", f"must be a positive real, got {delta!r}")


def beta_constants(delta):
    """(I, C_inf, E_0[Z_1^2]) for the beta model."""
    _check_delta(delta)
    psi1 = trigamma(delta)
    c_inf = delta * psi1 + digamma(delta) - digamma(1.0)
    return 1.0 / delta, c_inf, 2.0 * psi1


def c_of_r_beta(delta, r):
    """C(r) = Phi(r/(1+r), 1, delta) + Psi_0(delta) - Psi_0(1)."""
    _check_delta(delta)
    if r is None or not r >= 0:
        raise DomainError("r", f"must be nonnegative, got {r!r}")
    return lerch(r / (1.0 + r), delta) + digamma(delta) - digamma(1.0)


def head_start(delta):
    """r* solving Phi(r/(1+r), 1, delta) = delta * Psi_1(delta), i.e. C(r*) = C_inf."""
    _check_delta(delta)
    target = delta * trigamma(delta)

    def gap(r):
        return lerch(r / (1.0 + r), delta) - target

    bracket = (0.0, 1e3 * delta)
    if gap(bracket[0]) > 0 or gap(bracket[1]) < 0:
        raise BracketError(f"head start equation has no root for delta={delta}", bracket)
    r_star = optimize.brentq(gap, *bracket, xtol=1e-13, rtol=1e-13)
    if abs(gap(r_star)) > 1e-9:
        raise BracketError(f"head start residual {gap(r_star):.3e} too large", bracket)
    logger.debug("Head start for delta=%g: r*=%.10g", delta, r_star)
    return r_star


def stationary_density_beta(delta, x):
    """Density delta x^(delta-1) (1+x)^(-1-delta), the Beta prime(delta, 1) law."""
    _check_delta(delta)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("x", "stationary density is defined for x > 0")
    value = stats.betaprime(delta, 1.0).pdf(x)
    return float(value) if value.ndim == 0 else value


@dataclass
class OvershootEstimate:
    zeta: float
    zeta_se: float
    varkappa: float
    varkappa_se: float
    zeta_tail: float
    varkappa_tail: float
    k_max: int
    n_paths: int
    seed: int


def _walk_terms(model, k_max, size, rng, symmetric):
    """Per-batch means of 1{S_k > 0} under P_inf, 1{S_k <= 0} and S_k^- under P_0."""
    s_post = np.zeros(size)
    s_pre = np.zeros(size)
    positive_pre = np.empty(k_max)
    nonpositive_post = np.empty(k_max)
    negative_part = np.empty(k_max)
    for k in range(k_max):
        s_post += np.log(model.lr_sample("post", size, rng))
        nonpositive_post[k] = np.mean(s_post <= 0)
        negative_part[k] = np.mean(np.maximum(-s_post, 0.0))
        if not symmetric:
            s_pre += np.log(model.lr_sample("pre", size, rng))
            positive_pre[k] = np.mean(s_pre > 0)
    if symmetric:
        # log Lambda under P_inf is distributed as -log Lambda under P_0.
        positive_pre = nonpositive_post.copy()
    return (positive_pre[None, :], nonpositive_post[None, :], negative_part[None, :],
            np.array([size]))


def _geometric_tail(terms):
    last = terms[-TAIL_TERMS:]
    if last[0] <= 0 or last[-1] <= 0:
        return 0.0
    ratio = (last[-1] / last[0]) ** (1.0 / (TAIL_TERMS - 1))
    if ratio >= 1.0:
        logger.warning("Series terms are not decaying (ratio %.4f); no tail added", ratio)
        return 0.0
    return float(last[-1] * ratio / (1.0 - ratio))


def _series(batch_terms, weights, k):
    """Weighted mean over batches of sum_k terms/k plus a geometric tail, and its se."""
    per_batch = (batch_terms / k).sum(axis=1)
    mean_terms = np.average(batch_terms, axis=0, weights=weights) / k
    tail = _geometric_tail(mean_terms)
    total = float(mean_terms.sum()) + tail
    if per_batch.size > 1:
        se = float(np.sqrt(np.cov(per_batch, aweights=weights)) / math.sqrt(per_batch.size))
    else:
        se = math.nan
    return total, tail, se


def overshoot_constants(model: ChangePointModel, k_max=200, n_paths=10**6, seed=0) -> OvershootEstimate:
    """Monte Carlo zeta and varkappa from their random-walk series.

        zeta     = (1/I) exp{ -sum_k (1/k) [P_inf(S_k > 0) + P_0(S_k <= 0)] }
        varkappa = E_0[Z_1^2] / (2I) - sum_k (1/k) E_0[S_k^-]

    Terms are estimated per batch of paths; the batch spread gives the
    standard errors. The series are cut at ``k_max`` and completed by a
    geometric tail fitted to the last terms.
    """
    if k_max is None or int(k_max) < TAIL_TERMS + 1:
        raise DomainError("k_max", f"must be at least {TAIL_TERMS + 1}, got {k_max!r}")
    if n_paths is None or int(n_paths) < 1000:
        raise DomainError("n_paths", f"must be at least 1000, got {n_paths!r}")
    information = kl_number(model, seed=seed)
    if not information > 0:
        raise DomainError("model", f"KL number must be positive, got {information!r}")
    k_max, n_paths = int(k_max), int(n_paths)
    symmetric = model.name in SYMMETRIC_MODELS
    positive_pre, nonpositive_post, negative_part, sizes = run_replications(
        lambda size, rng: _walk_terms(model, k_max, size, rng, symmetric), n_paths, seed)
    k = np.arange(1, k_max + 1, dtype=float)
    weights = sizes.astype(float)

    zeta_sum, zeta_tail, zeta_sum_se = _series(positive_pre + nonpositive_post, weights, k)
    kappa_sum, kappa_tail, kappa_se = _series(negative_part, weights, k)
    for name, tail, total in (("zeta", zeta_tail, zeta_sum), ("varkappa", kappa_tail, kappa_sum)):
        if abs(tail) > 0.01 * abs(total):
            logger.warning("Tail estimate of the %s series is %.3g, more than 1%% of its sum %.6g",
                           name, tail, total)
    zeta = math.exp(-zeta_sum) / information
    varkappa = model.second_moment(seed=seed) / (2.0 * information) - kappa_sum
    logger.info("Overshoot constants for %s: zeta=%.6g, varkappa=%.6g (%d paths, k_max=%d)",
                model.name, zeta, varkappa, n_paths, k_max)
    return OvershootEstimate(
        zeta=zeta,
        zeta_se=zeta * zeta_sum_se,
        varkappa=varkappa,
        varkappa_se=kappa_se,
        zeta_tail=zeta_tail,
        varkappa_tail=kappa_tail,
        k_max=k_max,
        n_paths=n_paths,
        seed=int(seed),
    )


@dataclass
class AsymptoticConstants:
    """Constants with their provenance (``closed-form``, ``monte-carlo`` or ``unavailable``)."""
    I: float
    zeta: float
    varkappa: float
    C_inf: float | None
    C_of_r: Callable | None = field(repr=False)
    r_star: float | None
    E0_Z1_sq: float
    sources: dict = field(default_factory=dict)
    std_errors: dict = field(default_factory=dict)
    model: str = ""

    def as_dict(self):
        data = {key: value for key, value in self.__dict__.items() if key != "C_of_r"}
        if self.C_of_r is not None and self.r_star is not None:
            data["C_of_r_star"] = self.C_of_r(self.r_star)
            data["C_of_0"] = self.C_of_r(0.0)
        return data


def estimate_constants(model: ChangePointModel, k_max=200, n_paths=10**6, seed=0) -> AsymptoticConstants:
    """Closed forms where the model has them, Monte Carlo for the overshoot constants."""
    overshoot = overshoot_constants(model, k_max=k_max, n_paths=n_paths, seed=seed)
    std_errors = {"zeta": overshoot.zeta_se, "varkappa": overshoot.varkappa_se}
    if model.name in SYMMETRIC_MODELS:
        delta = model.params["delta"]
        information, c_inf, second_moment = beta_constants(delta)
        return AsymptoticConstants(
            I=information,
            zeta=overshoot.zeta,
            varkappa=overshoot.varkappa,
            C_inf=c_inf,
            C_of_r=lambda r: c_of_r_beta(delta, r),
            r_star=head_start(delta),
            E0_Z1_sq=second_moment,
            sources={"I": "closed-form", "zeta": "monte-carlo", "varkappa": "monte-carlo",
                     "C_inf": "closed-form", "C_of_r": "closed-form", "r_star": "closed-form",
                     "E0_Z1_sq": "closed-form"},
            std_errors=std_errors,
            model=model.name,
        )
    # C_inf and C(r) need the stationary law of the SR statistic, known here
    # only for the beta model.
    return AsymptoticConstants(
        I=kl_number(model, seed=seed),
        zeta=overshoot.zeta,
        varkappa=overshoot.varkappa,
        C_inf=None,
        C_of_r=None,
        r_star=None,
        E0_Z1_sq=model.second_moment(seed=seed),
        sources={"I": "closed-form" if model.kl is not None else "monte-carlo",
                 "zeta": "monte-carlo", "varkappa": "monte-carlo",
                 "C_inf": "unavailable", "C_of_r": "unavailable", "r_star": "unavailable",
                 "E0_Z1_sq": "closed-form" if model.kl_second_moment is not None else "monte-carlo"},
        std_errors=std_errors,
        model=model.name,
    )


@dataclass
class ApproximateOC:
    A: float
    arl: float
    add_inf: float | None
    add_0: float | None
    j_p: float | None


def approx_oc(constants: AsymptoticConstants, A=None, gamma=None, r=0.0, mu_q=None) -> ApproximateOC:
    """First-order ARL and delays; pass ``mu_q`` for the SRP procedure.

    Exactly one of ``A`` and ``gamma`` is given; with ``gamma`` the
    threshold is A = zeta (gamma + r), or zeta (gamma + mu_Q) for SRP.
    """
    if (A is None) == (gamma is None):
        raise DomainError("gamma", "give exactly one of gamma and A")
    offset = float(mu_q) if mu_q is not None else float(r)
    if A is None:
        A = constants.zeta * (float(gamma) + offset)
    if not A > 0:
        raise DomainError("A", f"threshold must be positive, got {A!r}")
    arl = A / constants.zeta - offset
    log_part = math.log(A) + constants.varkappa
    add_inf = (log_part - constants.C_inf) / constants.I if constants.C_inf is not None else None
    add_0 = None
    if constants.C_of_r is not None and mu_q is None:
        add_0 = (log_part - constants.C_of_r(float(r))) / constants.I
    if mu_q is not None:
        add_0 = add_inf
    delays = [value for value in (add_0, add_inf) if value is not None]
    return ApproximateOC(A=A, arl=arl, add_inf=add_inf, add_0=add_0,
                         j_p=max(delays) if delays else None)
