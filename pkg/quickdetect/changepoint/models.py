"""Change-point models for iid observations.

A model pairs the pre-change density f with the post-change density g and
carries the law of the likelihood ratio Lambda = g(X)/f(X) under both
measures. The integral-equation engine only ever sees the LR law; the
observation-level densities and samplers are used by stream detection and
by simulation.

Random numbers come from numpy's counter-based Philox generator seeded
through a SeedSequence. Parallel work spawns one child sequence per batch,
so a result depends on the seed and the batch layout, never on the number
of worker threads.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import special, stats

from .exceptions import DomainError, NumericalError


logger = logging.getLogger("quickdetect.models")

Regime = Literal["pre", "post"]
REGIMES = ("pre", "post")


def make_rng(seed):
    """Return a Philox-backed generator for ``seed`` (int or SeedSequence)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, count):
    """Independent generators, one per batch, derived from a single seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_rng(child) for child in children]


@dataclass(frozen=True)
class ChangePointModel:
    """Pre/post-change observation laws and the matching LR laws.

    ``lr_law_pre`` and ``lr_law_post`` are frozen scipy distributions of
    Lambda_1 under P_inf and P_0. ``kl`` and ``kl_second_moment`` hold
    E_0[log Lambda] and E_0[(log Lambda)^2] when a closed form is known.
    """
    name: str
    pre: object
    post: object
    lr_function: Callable
    lr_law_pre: object
    lr_law_post: object
    support: tuple
    params: dict = field(default_factory=dict, compare=False)
    kl: float | None = None
    kl_second_moment: float | None = None

    def pre_density(self, x):
        return self.pre.pdf(x)

    def post_density(self, x):
        return self.post.pdf(x)

    def lr(self, x):
        """Likelihood ratio g(x)/f(x), defined by its limit at the support ends."""
        return self.lr_function(np.asarray(x, dtype=float))

    def lr_law(self, regime: Regime):
        if regime == "pre":
            return self.lr_law_pre
        if regime == "post":
            return self.lr_law_post
        raise DomainError("regime", f"expected 'pre' or 'post', got {regime!r}")

    def lr_cdf(self, regime: Regime, t):
        return self.lr_law(regime).cdf(t)

    def lr_pdf(self, regime: Regime, t):
        return self.lr_law(regime).pdf(t)

    def lr_cdf_pre(self, t):
        return self.lr_law_pre.cdf(t)

    def lr_cdf_post(self, t):
        return self.lr_law_post.cdf(t)

    def lr_pdf_pre(self, t):
        return self.lr_law_pre.pdf(t)

    def lr_pdf_post(self, t):
        return self.lr_law_post.pdf(t)

    def clamp(self, x):
        """Move observations sitting exactly on a finite support end inward."""
        low, high = self.support
        x = np.asarray(x, dtype=float)
        if math.isfinite(low):
            x = np.maximum(x, np.nextafter(low, math.inf))
        if math.isfinite(high):
            x = np.minimum(x, np.nextafter(high, -math.inf))
        return x

    def draw(self, regime: Regime, size, rng):
        """Observations from f (pre) or g (post) using ``rng``."""
        law = self.pre if regime == "pre" else self.post
        return self.clamp(law.rvs(size=size, random_state=rng))

    def lr_sample(self, regime: Regime, size, rng):
        """Draw Lambda directly from its law under P_inf (pre) or P_0 (post)."""
        return self.lr_law(regime).rvs(size=size, random_state=rng)

    def second_moment(self, n_paths=10**6, seed=0):
        """E_0[(log Lambda_1)^2]."""
        if self.kl_second_moment is not None:
            return self.kl_second_moment
        z = np.log(self.lr_sample("post", n_paths, make_rng(seed)))
        return float(np.mean(z ** 2))


@dataclass(frozen=True)
class Beta2Beta:
    """beta(delta, delta+1) to beta(delta+1, delta)."""
    delta: float


@dataclass(frozen=True)
class Beta2BetaSwapped:
    """beta(delta+1, delta) to beta(delta, delta+1); same LR laws as Beta2Beta."""
    delta: float


@dataclass(frozen=True)
class ExpShift:
    """Exponential with mean 1 to exponential with mean 1+theta."""
    theta: float


@dataclass(frozen=True)
class UniformToBeta:
    """uniform(0,1) to beta(2,1)."""


@dataclass(frozen=True)
class ExpDouble:
    """Exponential with rate 1 to exponential with rate 2."""


def _check_positive(name, value):
    if value is None or not math.isfinite(value) or value <= 0:
        raise DomainError(name, f"must be a positive real, got {value!r}")


def _beta_lr_laws(delta):
    # Lambda ~ Beta prime; its cdf is betainc(a, b, t/(1+t)).
    return (stats.betaprime(delta, delta + 1.0),
            stats.betaprime(delta + 1.0, delta))


def _beta_model(params):
    delta = float(params.delta)
    _check_positive("delta", delta)
    lr_pre, lr_post = _beta_lr_laws(delta)
    swapped = isinstance(params, Beta2BetaSwapped)
    if swapped:
        pre, post = stats.beta(delta + 1.0, delta), stats.beta(delta, delta + 1.0)
        name = "beta-swapped"

        def lr_function(x):
            return (1.0 - x) / x
    else:
        pre, post = stats.beta(delta, delta + 1.0), stats.beta(delta + 1.0, delta)
        name = "beta"

        def lr_function(x):
            return x / (1.0 - x)
    return ChangePointModel(
        name=name,
        pre=pre,
        post=post,
        lr_function=lr_function,
        lr_law_pre=lr_pre,
        lr_law_post=lr_post,
        support=(0.0, 1.0),
        params={"delta": delta},
        kl=1.0 / delta,
        kl_second_moment=2.0 * float(special.polygamma(1, delta)),
    )


def _exp_shift_model(params):
    theta = float(params.theta)
    _check_positive("theta", theta)
    scale = 1.0 / (1.0 + theta)
    rate = theta / (1.0 + theta)

    def lr_function(x):
        return np.exp(rate * x) * scale

    # Lambda is Pareto with scale 1/(1+theta) under both measures.
    return ChangePointModel(
        name="exp-shift",
        pre=stats.expon(),
        post=stats.expon(scale=1.0 + theta),
        lr_function=lr_function,
        lr_law_pre=stats.pareto((1.0 + theta) / theta, scale=scale),
        lr_law_post=stats.pareto(1.0 / theta, scale=scale),
        support=(0.0, math.inf),
        params={"theta": theta},
        kl=theta - math.log1p(theta),
        kl_second_moment=theta ** 2 + (theta - math.log1p(theta)) ** 2,
    )


# Shared by uniform-to-beta and the exp(1)-to-exp(2) model:
# P_inf(t) = t/2 and P_0(t) = (t/2)^2 on [0, 2].
_U2B_KL = math.log(2.0) - 0.5
_U2B_SECOND_MOMENT = 0.25 + _U2B_KL ** 2


def _u2b_model(params):
    return ChangePointModel(
        name="u2b",
        pre=stats.uniform(),
        post=stats.beta(2.0, 1.0),
        lr_function=lambda x: 2.0 * x,
        lr_law_pre=stats.uniform(scale=2.0),
        lr_law_post=stats.beta(2.0, 1.0, scale=2.0),
        support=(0.0, 1.0),
        kl=_U2B_KL,
        kl_second_moment=_U2B_SECOND_MOMENT,
    )


def _exp_double_model(params):
    return ChangePointModel(
        name="exp-double",
        pre=stats.expon(),
        post=stats.expon(scale=0.5),
        lr_function=lambda x: 2.0 * np.exp(-x),
        lr_law_pre=stats.uniform(scale=2.0),
        lr_law_post=stats.beta(2.0, 1.0, scale=2.0),
        support=(0.0, math.inf),
        kl=_U2B_KL,
        kl_second_moment=_U2B_SECOND_MOMENT,
    )


_BUILDERS = {
    Beta2Beta: _beta_model,
    Beta2BetaSwapped: _beta_model,
    ExpShift: _exp_shift_model,
    UniformToBeta: _u2b_model,
    ExpDouble: _exp_double_model,
}

MODEL_NAMES = ("beta", "beta-swapped", "exp-shift", "u2b", "exp-double")


def make_model(params) -> ChangePointModel:
    """Build one of the built-in models from its parameter record."""
    try:
        builder = _BUILDERS[type(params)]
    except KeyError:
        raise DomainError("model", f"unknown model parameters {params!r}") from None
    model = builder(params)
    logger.debug("Built model %s %s", model.name, model.params)
    return model


def model_from_name(name, delta=None, theta=None) -> ChangePointModel:
    """Resolve a CLI/config model name plus its parameter."""
    if name == "beta":
        return make_model(Beta2Beta(delta))
    if name == "beta-swapped":
        return make_model(Beta2BetaSwapped(delta))
    if name == "exp-shift":
        return make_model(ExpShift(theta))
    if name == "u2b":
        return make_model(UniformToBeta())
    if name == "exp-double":
        return make_model(ExpDouble())
    raise DomainError("model", f"expected one of {', '.join(MODEL_NAMES)}, got {name!r}")


def sample(model: ChangePointModel, regime: Regime, n, seed):
    """``n`` iid observations from f or g, deterministic given ``seed``."""
    if regime not in REGIMES:
        raise DomainError("regime", f"expected 'pre' or 'post', got {regime!r}")
    if n is None or int(n) < 1:
        raise DomainError("n", f"must be at least 1, got {n!r}")
    return model.draw(regime, int(n), make_rng(seed))


def kl_number(model: ChangePointModel, n_paths=10**6, seed=0):
    """Kullback-Leibler number I = E_0[log Lambda_1]."""
    if model.kl is not None:
        value = model.kl
    else:
        z = np.log(model.lr_sample("post", n_paths, make_rng(seed)))
        value = float(np.mean(z))
        logger.info("Monte Carlo KL number for %s: %.6g (%d paths)", model.name, value, n_paths)
    if not math.isfinite(value):
        raise NumericalError(f"KL number of model {model.name} is not finite")
    return value
