"""Operating characteristics by integral equations.

All characteristics of a procedure V_n = xi(V_{n-1}) Lambda_n stopped at A
are governed by Fredholm equations of the second kind on [0, A]

    u(x) = v(x) + c * int_0^A K_d(x, y) u(y) dy,
    K_d(x, y) = d/dy P_d(Lambda <= y / xi(x)),

with d the pre-change (P_inf) or post-change (P_0) measure. The interval
is cut into N cells, by default equally spaced in log(1+x); unknowns are
constant on each cell and the equations are collocated at the cell
midpoints. By default the kernel is integrated exactly across each cell
through the LR cdf, which keeps rows sub-stochastic and handles kernels
with jumps. The trapezoid rule instead takes piecewise-linear unknowns
at the cell edges. A start point x that is not a node gets its own
collocation row (Nystrom extension) instead of being interpolated.

    ARL           l(x)      = 1 + K_inf l
    ADD at 0      delta0(x) = 1 + K_0 delta0
    delays        delta_{nu+1} = K_inf delta_nu, rho_{nu+1} = K_inf rho_nu, rho_0 = 1
    integral ADD  psi(x)    = delta0 + K_inf psi
    Bayes         psi_p = delta0 + (1-p) K_inf psi_p,  chi_p = 1 + (1-p) K_inf chi_p
    quasi-stationary law: left dominant eigenvector of K_inf
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from scipy import linalg, optimize
from scipy.sparse.linalg import eigs, gmres

from .exceptions import BracketError, ConvergenceError, DomainError
from .models import ChangePointModel
from .procedures import (
    Shiryaev,
    ShiryaevRoberts,
    ShiryaevRobertsPollak,
    ShiryaevRobertsR,
)


logger = logging.getLogger("quickdetect.ocsolve")

RULES = ("midpoint", "trapezoid")
SPACINGS = ("log", "uniform")
ASSEMBLIES = {"midpoint": ("cell", "midpoint"), "trapezoid": ("hat",)}
GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(3)
CONTRACTION_MARGIN = 1e-6


@dataclass(frozen=True)
class Grid:
    """Discretization of [0, A].

    ``spacing`` places the N+1 cell edges: ``log`` spaces log(1+x) equally,
    so every cell is small against the kernel scale xi(x) ~ 1+x; ``uniform``
    gives N equal cells.

    ``midpoint``: nodes at the cell midpoints, weights the cell widths.
    ``trapezoid``: nodes at the N+1 edges with trapezoid weights.
    """
    A: float
    N: int
    rule: str = "midpoint"
    spacing: str = "log"
    edges: np.ndarray = field(init=False, repr=False, compare=False)
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.A > 0:
            raise DomainError("A", f"threshold must be positive, got {self.A!r}")
        if self.N is None or int(self.N) < 2:
            raise DomainError("grid", f"need at least 2 cells, got {self.N!r}")
        if self.rule not in RULES:
            raise DomainError("rule", f"expected one of {RULES}, got {self.rule!r}")
        if self.spacing not in SPACINGS:
            raise DomainError("spacing", f"expected one of {SPACINGS}, got {self.spacing!r}")
        n = int(self.N)
        if self.spacing == "log":
            edges = np.expm1(np.linspace(0.0, math.log1p(self.A), n + 1))
            edges[0], edges[-1] = 0.0, self.A
        else:
            edges = np.linspace(0.0, self.A, n + 1)
        widths = np.diff(edges)
        if self.rule == "midpoint":
            nodes = 0.5 * (edges[:-1] + edges[1:])
            weights = widths
        else:
            nodes = edges.copy()
            weights = np.zeros(n + 1)
            weights[:-1] += 0.5 * widths
            weights[1:] += 0.5 * widths
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self):
        return self.nodes.size

    def cell_bounds(self):
        """Interval of [0, A] represented by each node."""
        if self.rule == "midpoint":
            return self.edges[:-1], self.edges[1:]
        half = 0.5 * np.diff(self.edges)
        low, high = self.nodes.copy(), self.nodes.copy()
        low[1:] -= half
        high[:-1] += half
        return low, high

    def locate(self, x):
        """Index of the cell containing x."""
        index = int(np.searchsorted(self.edges, x, side="right")) - 1
        return min(max(index, 0), int(self.N) - 1)


def make_grid(A, N=None, rule="midpoint", spacing=None):
    return Grid(float(A), int(N or settings.QD_GRID_SIZE), rule,
                spacing or settings.QD_GRID_SPACING)


@dataclass(frozen=True)
class KernelMatrix:
    """Discretized K_d: ``matrix[i, j]`` ~ int over node j's cell of K_d(x_i, y) dy."""
    model: ChangePointModel
    grid: Grid
    measure: str
    kind: object
    assembly: str
    matrix: np.ndarray = field(repr=False, compare=False)
    _rows: dict = field(default_factory=dict, repr=False, compare=False)

    def row(self, x):
        """Kernel row for an arbitrary start point x (a dedicated collocation row)."""
        key = float(x)
        if key not in self._rows:
            self._rows[key] = _kernel_rows(self.model, self.grid, self.measure, self.kind,
                                           self.assembly, np.array([key]))[0]
        return self._rows[key]

    def row_sums(self):
        return self.matrix.sum(axis=1)


def _hat_rows(law, edges, scale):
    """int K(x, y) phi_j(y) dy for the piecewise-linear hats phi_j on the edges.

    On a cell [a, b] the rising and falling halves of the hats integrate to
    F(b) - <F> and <F> - F(a), with <F> the cell average of the cdf, so
    only the cdf is needed and each row sums to F(A/xi) - F(0).
    """
    low, high = edges[None, :-1], edges[None, 1:]
    cdf_low, cdf_high = law.cdf(low / scale), law.cdf(high / scale)
    average = np.zeros_like(cdf_low)
    for node, weight in zip(GAUSS_NODES, GAUSS_WEIGHTS):
        y = low + 0.5 * (node + 1.0) * (high - low)
        average += 0.5 * weight * law.cdf(y / scale)
    average = np.clip(average, cdf_low, cdf_high)
    rows = np.zeros((scale.shape[0], edges.size))
    rows[:, :-1] += average - cdf_low
    rows[:, 1:] += cdf_high - average
    return rows


def _kernel_rows(model, grid, measure, kind, assembly, points):
    scale = np.asarray(kind.xi(points), dtype=float)[:, None]
    law = model.lr_law(measure)
    if assembly == "cell":
        cdf = law.cdf(grid.edges[None, :] / scale)
        return np.clip(np.diff(cdf, axis=1), 0.0, None)
    if assembly == "hat":
        return _hat_rows(law, grid.edges, scale)
    density = law.pdf(grid.nodes[None, :] / scale) / scale
    return density * grid.weights[None, :]


def build_kernel(model: ChangePointModel, grid: Grid, measure, kind, assembly=None) -> KernelMatrix:
    """Assemble K_d on the grid for the procedure kind's xi.

    The midpoint rule integrates the kernel over each cell (``cell``) or
    samples the LR density at the node (``midpoint``); the trapezoid rule
    integrates it against the hat functions (``hat``).
    """
    allowed = ASSEMBLIES[grid.rule]
    if assembly is None:
        assembly = allowed[0]
    if assembly not in allowed:
        raise DomainError("assembly", f"the {grid.rule} rule takes one of {allowed}, "
                                      f"got {assembly!r}")
    law = model.lr_law(measure)
    needed = "pdf" if assembly == "midpoint" else "cdf"
    if not callable(getattr(law, needed, None)):
        raise DomainError("model", f"{model.name} has no LR {needed} under the {measure} measure")
    matrix = _kernel_rows(model, grid, measure, kind, assembly, grid.nodes)
    logger.debug("Assembled %s kernel for %s: N=%d, A=%.6g, max row sum %.12g",
                 measure, model.name, grid.size, grid.A, matrix.sum(axis=1).max())
    return KernelMatrix(model, grid, measure, kind, assembly, matrix)


@dataclass
class GridFunction:
    """Function on the grid nodes.

    A function that solves u = v + c*K u carries its kernel, discount and
    right-hand side so that ``at(x)`` evaluates the equation itself at x.
    Other functions are interpolated: piecewise constant on the midpoint
    rule, piecewise linear on the trapezoid rule.
    """
    grid: Grid
    values: np.ndarray
    kernel: KernelMatrix | None = None
    discount: float = 1.0
    rhs: object = None

    def at(self, x):
        x = float(x)
        if self.kernel is not None:
            return self._rhs_at(x) + self.discount * float(self.kernel.row(x) @ self.values)
        if self.grid.rule == "trapezoid":
            return float(np.interp(x, self.grid.nodes, self.values))
        return float(self.values[self.grid.locate(x)])

    def _rhs_at(self, x):
        if isinstance(self.rhs, GridFunction):
            return self.rhs.at(x)
        if callable(self.rhs):
            return float(self.rhs(x))
        return float(self.rhs)

    def integral(self, density=None):
        """int u(x) q(x) dx on the grid (plain integral when ``density`` is None)."""
        weights = self.grid.weights if density is None else density.values * self.grid.weights
        return float(self.values @ weights)

    def mean(self):
        """First moment of a density on the grid."""
        return float((self.grid.nodes * self.values) @ self.grid.weights)


def dominant_eigenpair(matrix, left=True, tol=1e-12, max_iter=100000):
    """Dominant eigenvalue and positive eigenvector by power iteration.

    The vector is normalized to unit sum. Falls back to ARPACK when the
    power iteration stalls and checks that the dominant eigenvalue is
    isolated.
    """
    operator = matrix.T if left else matrix
    n = operator.shape[0]
    vector = np.full(n, 1.0 / n)
    value = 0.0
    for iteration in range(1, max_iter + 1):
        image = operator @ vector
        total = image.sum()
        if total <= 0:
            return 0.0, vector
        new_value = total / vector.sum()
        image /= total
        change = np.max(np.abs(image - vector)) / np.max(np.abs(image))
        vector = image
        if change <= tol and abs(new_value - value) <= tol * new_value:
            logger.debug("Power iteration converged in %d steps, eigenvalue %.15g",
                         iteration, new_value)
            return float(new_value), vector
        value = new_value
    logger.warning("Power iteration did not converge in %d steps; using ARPACK", max_iter)
    values, vectors = eigs(operator, k=2, which="LM")
    order = np.argsort(-np.abs(values))
    first, second = values[order[0]], values[order[1]]
    if abs(first) - abs(second) < 1e-10:
        raise ConvergenceError(f"dominant eigenvalue {first:.12g} is not isolated from {second:.12g}")
    vector = np.abs(vectors[:, order[0]].real)
    return float(abs(first)), vector / vector.sum()


def spectral_radius(matrix):
    """Spectral radius of a nonnegative matrix (row-sum bound first)."""
    bound = float(matrix.sum(axis=1).max())
    if bound < 1.0 - CONTRACTION_MARGIN:
        return bound
    return dominant_eigenpair(matrix, left=False, tol=1e-10)[0]


def _as_rhs(grid, rhs):
    if isinstance(rhs, GridFunction):
        return rhs.values
    if callable(rhs):
        return np.asarray(rhs(grid.nodes), dtype=float)
    return np.full(grid.size, float(rhs))


class _SystemCache:
    """LU factors of I - c*M keyed by discount, shared by all solves on a kernel."""

    def __init__(self, kernel):
        self.kernel = kernel
        self._factors = {}
        self.radius = None

    def check(self, discount):
        if self.radius is None:
            self.radius = spectral_radius(self.kernel.matrix)
        if discount * self.radius >= 1.0 - CONTRACTION_MARGIN:
            raise ConvergenceError(
                f"integral operator is not contractive: spectral radius "
                f"{discount * self.radius:.12g} on the {self.kernel.measure} kernel")

    def solve(self, values, discount):
        matrix = self.kernel.matrix
        n = matrix.shape[0]
        if n <= settings.QD_DIRECT_SOLVE_LIMIT:
            if discount not in self._factors:
                self._factors[discount] = linalg.lu_factor(np.eye(n) - discount * matrix)
            return linalg.lu_solve(self._factors[discount], values)
        solution, info = gmres(np.eye(n) - discount * matrix, values, rtol=1e-14, atol=0.0,
                               restart=200, maxiter=1000)
        if info != 0:
            raise ConvergenceError(f"GMRES stopped with code {info} on N={n}")
        return solution


def solve_fredholm(kernel: KernelMatrix, rhs, discount=1.0, cache=None) -> GridFunction:
    """Solve u = v + discount * K u; ``rhs`` is a GridFunction, callable or constant."""
    if not 0.0 < discount <= 1.0:
        raise DomainError("discount", f"must lie in (0, 1], got {discount!r}")
    cache = cache or _SystemCache(kernel)
    cache.check(discount)
    values = _as_rhs(kernel.grid, rhs)
    solution = cache.solve(values, discount)
    residual = np.max(np.abs(solution - values - discount * (kernel.matrix @ solution)))
    scale = np.max(np.abs(solution))
    if not np.all(np.isfinite(solution)) or residual > settings.QD_RESIDUAL_RTOL * max(scale, 1e-300):
        raise ConvergenceError(f"Fredholm residual {residual:.3e} exceeds tolerance "
                               f"(solution scale {scale:.3e})")
    return GridFunction(kernel.grid, solution, kernel=kernel, discount=discount, rhs=rhs)


@dataclass(frozen=True)
class Start:
    """Deterministic head start ``x`` or a start drawn from density ``q``."""
    x: float | None = None
    q: GridFunction | None = field(default=None, compare=False)

    @classmethod
    def point(cls, x):
        return cls(x=float(x))

    @classmethod
    def randomized(cls, q):
        return cls(q=q)

    @property
    def is_randomized(self):
        return self.q is not None

    def value(self, function: GridFunction):
        """u(x), or int u q for a randomized start."""
        if self.q is not None:
            return function.integral(self.q)
        return function.at(self.x)

    def apply(self, kernel: KernelMatrix, values):
        """(K u)(x) for the start, or int (K u) q."""
        if self.q is not None:
            return float((kernel.matrix @ values) @ (self.q.values * self.q.grid.weights))
        return float(kernel.row(self.x) @ values)

    def describe(self):
        return "quasi-stationary" if self.q is not None else self.x


@dataclass
class AddCurve:
    nu: np.ndarray
    add: np.ndarray
    delta: np.ndarray
    log_rho: np.ndarray
    plateau: float
    reached_plateau: bool
    rho_underflow_at: int | None = None

    @property
    def rho(self):
        return np.exp(self.log_rho)

    def supremum(self):
        index = int(np.argmax(self.add))
        return float(self.add[index]), int(self.nu[index])


def default_start(kind, q=None):
    if isinstance(kind, ShiryaevRobertsPollak):
        return Start.randomized(q if q is not None else kind.quasi_stationary)
    if isinstance(kind, Shiryaev):
        return Start.point(kind.initial())
    if isinstance(kind, ShiryaevRobertsR):
        return Start.point(kind.r)
    return Start.point(0.0)


class OCSolver:
    """Kernels, factorizations and solutions for one (model, kind, grid).

    Nothing is mutated after assembly apart from memoized solutions, so one
    solver can serve several starts and reports.
    """

    def __init__(self, model: ChangePointModel, kind, grid: Grid, assembly=None):
        self.model = model
        self.kind = kind
        self.grid = grid
        self.pre = build_kernel(model, grid, "pre", kind, assembly)
        self.post = build_kernel(model, grid, "post", kind, assembly)
        self._pre_system = _SystemCache(self.pre)
        self._post_system = _SystemCache(self.post)
        self._memo = {}

    @classmethod
    def create(cls, model, kind, A, N=None, rule="midpoint", assembly=None, spacing=None):
        return cls(model, kind, make_grid(A, N, rule, spacing), assembly)

    def _cached(self, key, compute):
        if key not in self._memo:
            self._memo[key] = compute()
        return self._memo[key]

    def arl(self) -> GridFunction:
        return self._cached("arl", lambda: solve_fredholm(self.pre, 1.0, cache=self._pre_system))

    def delay0(self) -> GridFunction:
        return self._cached("delay0", lambda: solve_fredholm(self.post, 1.0, cache=self._post_system))

    def iadd(self) -> GridFunction:
        return self._cached("iadd", lambda: solve_fredholm(self.pre, self.delay0(),
                                                           cache=self._pre_system))

    def quasi_stationary(self):
        """(q_A, lambda_A): left dominant eigenpair of K_inf, q normalized to unit mass."""
        def compute():
            value, masses = dominant_eigenpair(self.pre.matrix, left=True)
            if not 0.0 < value < 1.0:
                raise ConvergenceError(f"quasi-stationary eigenvalue {value!r} outside (0, 1)")
            self._pre_system.radius = value
            density = GridFunction(self.grid, masses / self.grid.weights)
            return density, value
        return self._cached("quasi_stationary", compute)

    def bayes(self, p, pi, start: Start):
        """Bayesian (PFA, ADD) under the zero-modified geometric prior."""
        if not 0.0 < p < 1.0:
            raise DomainError("p", f"must lie in (0, 1), got {p!r}")
        if not 0.0 <= pi < 1.0:
            raise DomainError("pi", f"must lie in [0, 1), got {pi!r}")
        psi_p = self._cached(("psi_p", p), lambda: solve_fredholm(
            self.pre, self.delay0(), discount=1.0 - p, cache=self._pre_system))
        chi_p = self._cached(("chi_p", p), lambda: solve_fredholm(
            self.pre, 1.0, discount=1.0 - p, cache=self._pre_system))
        chi = start.value(chi_p)
        psi = start.value(psi_p)
        delay = start.value(self.delay0())
        pfa = (1.0 - pi) * (1.0 - p * chi)
        add = (pi * delay + (1.0 - pi) * p * psi) / (pi + (1.0 - pi) * p * chi)
        return pfa, add, psi_p, chi_p

    def add_curve(self, start: Start, nu_max=None, stop_at_plateau=True) -> AddCurve:
        """ADD_nu = delta_nu / rho_nu for nu = 0, 1, ...

        Iterates until ``nu_max`` or, when ``stop_at_plateau`` is set,
        until the curve has been flat for QD_PLATEAU_RUN consecutive steps.
        The grid vectors are rescaled every step, so deep tails lose no
        precision; the unscaled rho_nu is kept as a logarithm.
        """
        limit = nu_max if nu_max is not None else settings.QD_NU_LIMIT
        rtol, run_needed = settings.QD_PLATEAU_RTOL, settings.QD_PLATEAU_RUN
        delta = self.delay0().values.copy()
        rho = np.ones(self.grid.size)
        log_scale = 0.0
        adds = [start.value(self.delay0())]
        log_rhos = [0.0]
        run, reached, underflow = 0, False, None
        for nu in range(1, limit + 1):
            num = start.apply(self.pre, delta)
            den = start.apply(self.pre, rho)
            if den <= 0.0:
                logger.warning("P_inf(T > %d) vanished for start %s; curve truncated",
                               nu, start.describe())
                break
            adds.append(num / den)
            log_rhos.append(math.log(den) + log_scale)
            if underflow is None and log_rhos[-1] < math.log(1e-12):
                underflow = nu
                logger.warning("rho_%d < 1e-12 at start %s; continuing on rescaled vectors",
                               nu, start.describe())
            delta = self.pre.matrix @ delta
            rho = self.pre.matrix @ rho
            scale = rho.max()
            if scale <= 0.0:
                break
            delta /= scale
            rho /= scale
            log_scale += math.log(scale)
            run = run + 1 if abs(adds[-1] - adds[-2]) < rtol * abs(adds[-1]) else 0
            if run >= run_needed:
                reached = True
                if stop_at_plateau and nu_max is None:
                    break
        if stop_at_plateau and nu_max is None and not reached:
            logger.warning("ADD curve did not plateau within %d steps", limit)
        adds = np.asarray(adds)
        log_rhos = np.asarray(log_rhos)
        return AddCurve(
            nu=np.arange(adds.size),
            add=adds,
            delta=adds * np.exp(log_rhos),
            log_rho=log_rhos,
            plateau=float(adds[-1]),
            reached_plateau=reached,
            rho_underflow_at=underflow,
        )

    def stadd(self, start: Start):
        """Stationary (relative integral) ADD psi/l at the start."""
        return start.value(self.iadd()) / start.value(self.arl())

    def lower_bound(self, r):
        """(r delta0(r) + psi(r)) / (r + l(r))."""
        r = float(r)
        return (r * self.delay0().at(r) + self.iadd().at(r)) / (r + self.arl().at(r))

    def local_pfa(self, start: Start, m, k_max):
        """P_inf(k < T <= k+m | T > k) for k = 0..k_max; returns (sup, profile).

        When P_inf(T > n) vanishes before k_max + m the missing rho_n are 0,
        so windows reaching past that point have PFA 1; the profile stops
        at the last k with P_inf(T > k) > 0.
        """
        if m is None or int(m) < 1:
            raise DomainError("m", f"window must be at least 1, got {m!r}")
        if k_max is None or int(k_max) < 0:
            raise DomainError("k_max", f"must be nonnegative, got {k_max!r}")
        m, k_max = int(m), int(k_max)
        curve = self.add_curve(start, nu_max=k_max + m, stop_at_plateau=False)
        log_rho = np.full(k_max + m + 1, -np.inf)
        log_rho[:curve.log_rho.size] = curve.log_rho
        available = min(k_max + 1, curve.log_rho.size)
        profile = -np.expm1(log_rho[m:m + available] - log_rho[:available])
        if available < k_max + 1:
            logger.warning("P_inf(T > %d) vanished; local PFA profile ends at k=%d",
                           available, available - 1)
        elif available >= 2 and abs(profile[-1] - profile[-2]) > 1e-6 * abs(profile[-1]):
            logger.warning("local PFA profile still moving at k=%d (window m=%d)", available - 1, m)
        return float(profile.max()), profile

    def srp(self):
        """(ARL, ADD, mu_Q) of the randomized procedure started from q_A."""
        q, value = self.quasi_stationary()
        return 1.0 / (1.0 - value), self.delay0().integral(q), q.mean()


# Module-level operations -------------------------------------------------

def _solver(model, grid, kind):
    return OCSolver(model, kind, grid)


def arl(model, A, grid, kind) -> GridFunction:
    """ARL to false alarm l(x) = E_inf[T | V_0 = x]."""
    return _solver(model, _grid_for(A, grid), kind).arl()


def add_curve(model, A, grid, kind, nu_max=None, start=None):
    solver = _solver(model, _grid_for(A, grid), kind)
    return solver.add_curve(start or default_start(kind), nu_max=nu_max,
                            stop_at_plateau=nu_max is None)


def iadd(model, A, grid, kind) -> GridFunction:
    return _solver(model, _grid_for(A, grid), kind).iadd()


def lower_bound(model, A, grid, r):
    return _solver(model, _grid_for(A, grid), ShiryaevRobertsR(r)).lower_bound(r)


def quasi_stationary(model, A, grid):
    return _solver(model, _grid_for(A, grid), ShiryaevRoberts()).quasi_stationary()


def srp_oc(model, A, grid):
    """(ARL, ADD) of the SRP procedure at threshold A."""
    arl_value, add_value, _ = _solver(model, _grid_for(A, grid), ShiryaevRoberts()).srp()
    return arl_value, add_value


def bayes_oc(model, A, grid, prior, x=None, kind=None):
    """Bayesian (PFA, ADD); ``prior`` is a mapping with ``pi`` and ``p``."""
    pi, p = float(prior.get("pi", 0.0)), float(prior["p"])
    kind = kind or Shiryaev(p, pi)
    solver = _solver(model, _grid_for(A, grid), kind)
    start = Start.point(x) if x is not None else default_start(kind)
    pfa, add, _, _ = solver.bayes(p, pi, start)
    return pfa, add


def local_pfa(model, A, grid, kind, m, k_max, start=None):
    solver = _solver(model, _grid_for(A, grid), kind)
    return solver.local_pfa(start or default_start(kind), m, k_max)


def supremum_add(model, A, grid, r):
    """(J_P, argmax nu) for SR-r, together with the plateau value ADD_inf."""
    solver = _solver(model, _grid_for(A, grid), ShiryaevRobertsR(r))
    curve = solver.add_curve(Start.point(r))
    value, argmax = curve.supremum()
    return value, argmax, curve.plateau


def _grid_for(A, grid):
    if grid is None:
        return make_grid(A)
    if isinstance(grid, Grid):
        if not math.isclose(grid.A, float(A)):
            raise DomainError("grid", f"grid covers [0, {grid.A}] but A={A}")
        return grid
    return make_grid(A, int(grid))


def _arl_at(model, kind, A, N, start_x, rule):
    solver = OCSolver.create(model, kind, A, N, rule)
    if isinstance(kind, ShiryaevRobertsPollak):
        return solver.srp()[0]
    return solver.arl().at(start_x)


def calibrate(model, kind, gamma, x=None, N=None, zeta=None, rule="midpoint"):
    """Threshold A with E_inf[T] = gamma at start x (Brent on A).

    For SRP the ARL is 1/(1 - lambda_A) and ``kind`` only selects the
    randomized start. The initial bracket is [gamma*zeta/2, 4*gamma*zeta]
    and is widened geometrically when it does not straddle the root.
    """
    if gamma is None or not gamma > 1:
        raise DomainError("gamma", f"target ARL must exceed 1, got {gamma!r}")
    gamma = float(gamma)
    if x is None:
        x = default_start(kind).x if not isinstance(kind, ShiryaevRobertsPollak) else None
    zeta = zeta if zeta is not None else 0.5
    N = N or settings.QD_GRID_SIZE
    values = {}

    def excess(A):
        if A not in values:
            values[A] = _arl_at(model, kind, A, N, x, rule) - gamma
        return values[A]

    low, high = 0.5 * gamma * zeta, 4.0 * gamma * zeta
    for _ in range(40):
        if excess(low) < 0:
            break
        low *= 0.5
    else:
        raise BracketError("could not find a threshold with ARL below target", (low, high))
    for _ in range(40):
        if excess(high) > 0:
            break
        low, high = high, 2.0 * high
    else:
        raise BracketError("could not find a threshold with ARL above target", (low, high))
    A = optimize.brentq(excess, low, high, xtol=1e-12, rtol=1e-12)
    if abs(excess(A)) > settings.QD_CALIBRATION_RTOL * gamma:
        raise BracketError(f"calibrated ARL misses gamma={gamma} by {excess(A):.4g}", (low, high))
    logger.info("Calibrated %s on %s to gamma=%.6g: A=%.10g (%d ARL solves)",
                getattr(kind, "label", kind), model.name, gamma, A, len(values))
    return A


def optimize_head_start(model, gamma, N=None, r_max=None):
    """Head start r minimizing J_P of SR-r with the threshold recalibrated to gamma.

    Returns (r, A, J_P). Used when no closed-form r* is available.
    """
    N = N or settings.QD_GRID_SIZE
    base = calibrate(model, ShiryaevRoberts(), gamma, N=N)
    r_max = r_max or 0.5 * base
    evaluations = {}

    def sup_add(r):
        kind = ShiryaevRobertsR(float(r))
        A = calibrate(model, kind, gamma, N=N, zeta=base / gamma)
        value, _ = OCSolver.create(model, kind, A, N).add_curve(Start.point(r)).supremum()
        evaluations[float(r)] = (A, value)
        return value

    result = optimize.minimize_scalar(sup_add, bounds=(0.0, r_max), method="bounded",
                                      options={"xatol": 1e-3 * max(r_max, 1.0)})
    r = float(result.x)
    if r not in evaluations:
        sup_add(r)
    A, value = evaluations[r]
    logger.info("Optimized head start for %s at gamma=%.6g: r=%.6g, A=%.6g, J_P=%.6g",
                model.name, gamma, r, A, value)
    return r, A, value


@dataclass
class OCReport:
    procedure: str
    model: str
    A: float
    start: object
    arl: float
    add_curve: list
    add_inf: float
    j_p: float
    j_p_argmax: int
    j_st: float
    j_b: float | None
    pfa_bayes: float | None = None
    add_bayes: float | None = None
    local_pfa_sup: float | None = None
    local_pfa_profile: list | None = None
    mu_q: float | None = None
    lambda_a: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        data = {key: value for key, value in self.__dict__.items()
                if key not in ("add_curve", "local_pfa_profile")}
        data["add_curve"] = [{"nu": int(nu), "add": float(add)} for nu, add in self.add_curve]
        if self.local_pfa_profile is not None:
            data["local_pfa_profile"] = [{"k": k, "pfa": float(v)}
                                         for k, v in enumerate(self.local_pfa_profile)]
        return data


def oc_report(model, kind, A, N=None, start=None, prior=None, m=None, k_max=None,
              nu_max=None, richardson=True, rule="midpoint") -> OCReport:
    """Full operating characteristics of one procedure at one threshold."""
    N = N or settings.QD_GRID_SIZE
    solver = OCSolver.create(model, kind, A, N, rule)
    q = lam = mu_q = None
    if isinstance(kind, ShiryaevRobertsPollak) or start == "srp":
        q, lam = solver.quasi_stationary()
        mu_q = q.mean()
        start = Start.randomized(q)
    elif start is None:
        start = default_start(kind)
    elif not isinstance(start, Start):
        start = Start.point(start)
    curve = solver.add_curve(start, nu_max=nu_max, stop_at_plateau=nu_max is None)
    j_p, argmax = curve.supremum()
    arl_value = 1.0 / (1.0 - lam) if start.is_randomized else start.value(solver.arl())
    j_b = None if start.is_randomized else solver.lower_bound(start.x)
    report = OCReport(
        procedure=getattr(kind, "label", str(kind)),
        model=model.name,
        A=float(A),
        start=start.describe(),
        arl=arl_value,
        add_curve=list(zip(curve.nu.tolist(), curve.add.tolist())),
        add_inf=curve.plateau,
        j_p=j_p,
        j_p_argmax=argmax,
        j_st=solver.stadd(start),
        j_b=j_b,
        mu_q=mu_q,
        lambda_a=lam,
        diagnostics={"N": int(N), "rule": rule, "spacing": solver.grid.spacing,
                     "plateau_reached": curve.reached_plateau,
                     "rho_underflow_at": curve.rho_underflow_at},
    )
    if start.is_randomized:
        report.diagnostics["eigen_consistency"] = abs(
            solver.arl().integral(q) - arl_value) / arl_value
    if prior is not None:
        report.pfa_bayes, report.add_bayes, _, _ = solver.bayes(
            float(prior["p"]), float(prior.get("pi", 0.0)), start)
    if m is not None:
        report.local_pfa_sup, profile = solver.local_pfa(start, m, k_max if k_max is not None else 50)
        report.local_pfa_profile = profile.tolist()
    if richardson and N >= 20:
        coarse_start = "srp" if start.is_randomized else start.x
        coarse = oc_report(model, kind, A, N // 2, start=coarse_start, nu_max=nu_max,
                           richardson=False, rule=rule)
        report.diagnostics["richardson_arl"] = abs(report.arl - coarse.arl) / report.arl
        report.diagnostics["richardson_j_p"] = abs(report.j_p - coarse.j_p) / report.j_p
    if report.j_b is not None and report.j_b > report.j_p * (1 + 1e-9):
        logger.warning("Lower bound %.6g exceeds J_P %.6g", report.j_b, report.j_p)
    logger.info("OC report %s on %s at A=%.6g: ARL=%.6g J_P=%.6g J_ST=%.6g",
                report.procedure, model.name, A, report.arl, report.j_p, report.j_st)
    return report
