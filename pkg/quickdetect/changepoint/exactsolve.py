"""Closed-form operating characteristics for separable kernels.

When the LR cdf factorizes as P(y / (1+x)) = X(x) Y(y) on the relevant
range, the kernel is K(x, y) = X(x) Y'(y) and

    u(x) = v(x) + c X(x),   c = int_0^A v Y' / (1 - int_0^A X Y').

The uniform-to-beta model (and exp(1) to exp(2), which has the same LR
laws) is separable for A <= 2 with

    pre-change:   X(x) = 1/(1+x),     Y(y) = y/2
    post-change:  X(x) = 1/(1+x)^2,   Y(y) = y^2/4

Under P_inf the statistic started anywhere is uniform on [0, A] after
its first step if it has not stopped, so the run length is
zero-modified geometric with ratio log(1+A)/2. The quasi-stationary law
is that uniform law and SR-r with r_A = sqrt(1+A) - 1 is an equalizer.
"""
import functools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .exceptions import DomainError, ResonanceError


logger = logging.getLogger("quickdetect.exactsolve")

U2B_MAX_THRESHOLD = 2.0
GAMMA_BAR = 1.0 / (1.0 - 0.5 * math.log(3.0))


@dataclass(frozen=True)
class SeparableKernel:
    X: Callable
    Y: Callable
    Y_prime: Callable
    max_threshold: float = math.inf

    def __call__(self, x, y):
        return self.X(x) * self.Y_prime(y)

    def factorization_residual(self, lr_cdf, A, points=100):
        """max |P(y/(1+x)) - X(x) Y(y)| over a points x points lattice of [0, A]^2."""
        x = np.linspace(0.0, A, points)[:, None]
        y = np.linspace(0.0, A, points)[None, :]
        return float(np.max(np.abs(lr_cdf(y / (1.0 + x)) - self.X(x) * self.Y(y))))


U2B_PRE_KERNEL = SeparableKernel(
    X=lambda x: 1.0 / (1.0 + x),
    Y=lambda y: 0.5 * y,
    Y_prime=lambda y: 0.5 + 0.0 * y,
    max_threshold=U2B_MAX_THRESHOLD,
)
U2B_POST_KERNEL = SeparableKernel(
    X=lambda x: 1.0 / (1.0 + x) ** 2,
    Y=lambda y: 0.25 * y ** 2,
    Y_prime=lambda y: 0.5 * y,
    max_threshold=U2B_MAX_THRESHOLD,
)


@dataclass(frozen=True)
class SeparableSolution:
    """u(x) = v(x) + coefficient * X(x)."""
    kernel: SeparableKernel
    v: Callable
    coefficient: float
    A: float

    def __call__(self, x):
        return self.v(x) + self.coefficient * self.kernel.X(x)


def _quad(function, A):
    value, _ = integrate.quad(function, 0.0, A, epsabs=1e-14, epsrel=1e-12, limit=200)
    return value


def separable_solve(kernel: SeparableKernel, v, A) -> SeparableSolution:
    """Solve u = v + K u on [0, A] in closed form."""
    if not A > 0:
        raise DomainError("A", f"threshold must be positive, got {A!r}")
    if A > kernel.max_threshold:
        raise DomainError("A", f"kernel factorizes only up to A={kernel.max_threshold}, got {A}")
    if not callable(v):
        constant = float(v)
        v = lambda x: constant + 0.0 * np.asarray(x, dtype=float)  # noqa: E731
    denominator = 1.0 - _quad(lambda t: kernel.X(t) * kernel.Y_prime(t), A)
    if abs(denominator) < 1e-12:
        raise ResonanceError(f"separable denominator vanishes at A={A}")
    coefficient = _quad(lambda t: v(t) * kernel.Y_prime(t), A) / denominator
    return SeparableSolution(kernel, v, coefficient, float(A))


def _check_threshold(A):
    if A is None or not 0 < A <= U2B_MAX_THRESHOLD:
        raise DomainError("A", f"u2b closed forms need 0 < A <= 2, got {A!r}")


def _check_gamma(gamma):
    if gamma is None or not 1.0 < gamma < GAMMA_BAR:
        raise DomainError("gamma", f"must lie in (1, {GAMMA_BAR:.6f}), got {gamma!r}")


@functools.lru_cache(maxsize=256)
def arl_solution(A) -> SeparableSolution:
    """l = 1 + K_inf l on [0, A]."""
    _check_threshold(A)
    return separable_solve(U2B_PRE_KERNEL, 1.0, A)


@functools.lru_cache(maxsize=256)
def delay0_solution(A) -> SeparableSolution:
    """delta0 = 1 + K_0 delta0 on [0, A]."""
    _check_threshold(A)
    return separable_solve(U2B_POST_KERNEL, 1.0, A)


@functools.lru_cache(maxsize=256)
def iadd_solution(A) -> SeparableSolution:
    """psi = delta0 + K_inf psi on [0, A]."""
    return separable_solve(U2B_PRE_KERNEL, delay0_solution(A), A)


def survival_ratio(A):
    """lambda_A = P_inf(T > n+1 | T > n) for n >= 1, equal to log(1+A)/2."""
    _check_threshold(A)
    return 0.5 * math.log1p(A)


def delay_coefficient(A):
    """M0 in delta0(x) = 1 + M0/(1+x)^2."""
    return delay0_solution(A).coefficient


def u2b_arl(A, x=0.0):
    """E_inf[T] for the SR statistic started at x: 1 + A / (2 (1+x) (1 - lambda_A))."""
    return float(arl_solution(A)(x))


def u2b_delay0(A, x=0.0):
    """ADD_0 = E_0[T] started at x."""
    return float(delay0_solution(A)(x))


def u2b_add_inf(A):
    """ADD_nu for every nu >= 1, whatever the start."""
    return 1.0 + delay_coefficient(A) / (1.0 + A)


def u2b_iadd(A, x=0.0):
    """psi(x) = delta0(x) + sum_{nu >= 1} delta_nu(x)."""
    return float(iadd_solution(A)(x))


def u2b_lower_bound(A, r):
    return (r * u2b_delay0(A, r) + u2b_iadd(A, r)) / (r + u2b_arl(A, r))


def u2b_sup_add(A, r):
    """J_P of SR-r: the larger of ADD_0 and the constant ADD_nu, nu >= 1."""
    return max(u2b_delay0(A, r), u2b_add_inf(A))


def u2b_srp_oc(B):
    """(ARL, ADD, mu_Q) of SRP at threshold B; q_B is uniform on [0, B]."""
    arl = 1.0 / (1.0 - survival_ratio(B))
    return arl, u2b_add_inf(B), 0.5 * B


@dataclass
class ExactOC:
    A: float
    r: float
    arl: float
    add_0: float
    add_inf: float
    j_p: float
    j_st: float
    j_b: float

    def as_dict(self):
        return dict(self.__dict__)


def u2b_oc(A, r):
    _check_threshold(A)
    if r is None or not r >= 0:
        raise DomainError("r", f"must be nonnegative, got {r!r}")
    return ExactOC(
        A=A,
        r=r,
        arl=u2b_arl(A, r),
        add_0=u2b_delay0(A, r),
        add_inf=u2b_add_inf(A),
        j_p=u2b_sup_add(A, r),
        j_st=u2b_iadd(A, r) / u2b_arl(A, r),
        j_b=u2b_lower_bound(A, r),
    )


def u2b_calibrate(gamma):
    """Minimax pair (A, r_A) with E_inf[SR-r_A stopped at A] = gamma.

    r_A = sqrt(1+A) - 1 and A is the root of the ARL equation, which in
    closed form reads A + (gamma-1) sqrt(1+A) log(1+A) - 2 (gamma-1) sqrt(1+A) = 0.
    """
    _check_gamma(gamma)
    g = gamma - 1.0

    def excess(A):
        return u2b_arl(A, math.sqrt(1.0 + A) - 1.0) - gamma

    A = optimize.brentq(excess, 1e-300, U2B_MAX_THRESHOLD, xtol=1e-15, rtol=1e-15)
    r = math.sqrt(1.0 + A) - 1.0
    root = math.sqrt(1.0 + A)
    residual = abs(A + g * root * math.log1p(A) - 2.0 * g * root)
    if residual > 1e-9:
        raise DomainError("gamma", f"calibrated threshold misses the ARL equation by {residual:.3e}")
    logger.debug("u2b calibration for gamma=%g: A=%.12g, r_A=%.12g", gamma, A, r)
    return A, r


def u2b_srp_threshold(gamma):
    """B with E_inf[SRP stopped at B] = 1/(1 - log(1+B)/2) = gamma."""
    _check_gamma(gamma)
    return math.expm1(2.0 * (1.0 - 1.0 / gamma))


def u2b_local_pfa(A, r, k, m):
    """P_inf(k < T <= k+m | T > k).

    1 - lambda^m for k >= 1 and 1 - A/(2(1+r)) lambda^(m-1) for k = 0,
    with lambda = log(1+A)/2.
    """
    _check_threshold(A)
    if r is None or not r >= 0:
        raise DomainError("r", f"must be nonnegative, got {r!r}")
    if k is None or int(k) < 0:
        raise DomainError("k", f"must be nonnegative, got {k!r}")
    if m is None or int(m) < 1:
        raise DomainError("m", f"must be at least 1, got {m!r}")
    ratio = survival_ratio(A)
    if int(k) >= 1:
        return 1.0 - ratio ** int(m)
    return 1.0 - A / (2.0 * (1.0 + r)) * ratio ** (int(m) - 1)


def default_gamma_grid(points=50):
    return np.geomspace(1.01, GAMMA_BAR - 1e-3, points)


def u2b_performance_curves(gammas=None):
    """Exact J_P of minimax SR-r and of SRP, plus J_B, over a gamma grid."""
    gammas = default_gamma_grid() if gammas is None else np.asarray(gammas, dtype=float)
    rows = []
    for gamma in gammas:
        A, r = u2b_calibrate(float(gamma))
        B = u2b_srp_threshold(float(gamma))
        rows.append({
            "gamma": float(gamma),
            "jp_srr": u2b_sup_add(A, r),
            "jp_srp": u2b_srp_oc(B)[1],
            "jb": u2b_lower_bound(A, r),
        })
    logger.info("Computed exact u2b curves on %d gamma values", len(rows))
    return rows
