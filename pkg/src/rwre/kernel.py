"""Linear-algebra engines for the non-divergence operator L_omega.

``L u(x) = sum_i a_i(x)/2 [u(x+e_i) + u(x-e_i)] - u(x)`` is assembled on the
interior of a :class:`~rwre.lattice.LatticeDomain`, optionally with a
killing term ``-rate * eta(x) u(x)``.  The operator is not self-adjoint, so
solves use sparse LU (two dimensions and small systems) or GMRES
preconditioned by classical algebraic multigrid.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from . import lattice as la
from .env import Environment

log = logging.getLogger(__name__)

RTOL = 1e-10
DIRECT_MAX_2D = 200_000
DIRECT_MAX = 5_000
POISSON_TAIL = 1e-12
MAX_UNKNOWNS = 500_000 * 20


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class SolveInfo:
    method: str
    n_unknowns: int
    residual: float
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


GMRES_RESTART = 30
GMRES_CYCLES = 20


def _gmres(A, b, **kw):
    # restarted GMRES keeps the Krylov basis at GMRES_RESTART vectors
    return pyamg.krylov.gmres(A, b, restart=GMRES_RESTART, **kw)


class LinearSolver:
    """Factor-once, solve-many wrapper around a sparse non-symmetric matrix."""

    def __init__(self, M: sp.csr_matrix, d: int, rtol: float = RTOL, method: str | None = None):
        self.M = M.tocsr()
        n = M.shape[0]
        if method is None:
            limit = DIRECT_MAX_2D if d <= 2 else DIRECT_MAX
            method = "splu" if n <= limit else "amg-gmres"
        self.method = method
        self.rtol = rtol
        if method == "splu":
            self._lu = spla.splu(self.M.tocsc())
        elif method == "amg-gmres":
            self._ml = pyamg.ruge_stuben_solver(self.M)
        else:
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        norm = np.linalg.norm(rhs)
        if norm == 0:
            return np.zeros_like(rhs), SolveInfo(self.method, len(rhs), 0.0)
        iters = 0
        if self.method == "splu":
            x = self._lu.solve(rhs)
        else:
            res = []
            x = self._ml.solve(rhs, tol=self.rtol * 0.1, accel=_gmres, maxiter=GMRES_CYCLES, residuals=res)
            iters = len(res)
        resid = float(np.linalg.norm(self.M @ x - rhs) / norm)
        if resid > self.rtol:
            # one step of iterative refinement before giving up
            corr, _ = self._raw(rhs - self.M @ x)
            x = x + corr
            resid = float(np.linalg.norm(self.M @ x - rhs) / norm)
            if resid > self.rtol:
                raise SolverError(f"{self.method} did not reach rtol={self.rtol}: residual {resid:.3e}", resid)
        return x, SolveInfo(self.method, len(rhs), resid, iters)

    def _raw(self, rhs):
        if self.method == "splu":
            return self._lu.solve(rhs), 0
        return self._ml.solve(rhs, tol=self.rtol * 0.1, accel=_gmres, maxiter=GMRES_CYCLES), 0


class DiscreteOperator:
    """``L_omega - rate * eta`` restricted to the interior of ``domain``.

    ``eta`` may be ``None`` (no killing), a number, or a callable evaluated on
    interior points.  ``matrix`` couples interior unknowns; ``coupling`` maps
    boundary values into the interior equations.
    """

    def __init__(self, env: Environment, domain: la.LatticeDomain, eta=None, rate: float = 0.0):
        if env.d != domain.d:
            raise ValueError("environment and domain dimensions differ")
        if rate < 0:
            raise ValueError("killing rate must be nonnegative")
        n = domain.n_interior
        if n > MAX_UNKNOWNS:
            raise ValueError(f"{n} unknowns exceed the cap {MAX_UNKNOWNS}")
        self.env, self.domain, self.rate = env, domain, float(rate)
        self.a = env.values(domain.interior)
        self.eta = self._eta_values(eta)
        if self.eta is not None and (np.any(self.eta < 0) or np.any(self.eta > 1)):
            raise ValueError("killing field must take values in [0, 1]")
        nb = domain.neighbor_table(np.arange(n))
        if np.any(nb < 0):
            raise ValueError("interior point with a neighbor outside the domain")
        w = np.repeat(self.a / 2, 2, axis=1)
        diag = -np.ones(n)
        if self.eta is not None:
            diag = diag - self.rate * self.eta
        rows = np.repeat(np.arange(n), nb.shape[1])
        cols = nb.ravel()
        vals = w.ravel()
        inner = cols < n
        A = sp.csr_matrix((vals[inner], (rows[inner], cols[inner])), shape=(n, n))
        self.matrix = (A + sp.diags(diag)).tocsr()
        self.coupling = sp.csr_matrix((vals[~inner], (rows[~inner], cols[~inner] - n)),
                                      shape=(n, domain.n_boundary))
        self._solver = None

    def _eta_values(self, eta):
        if eta is None or self.rate == 0:
            return None
        if callable(eta):
            return np.asarray(eta(self.domain.interior), dtype=float)
        if isinstance(eta, la.ScalarField):
            return eta(self.domain.interior)
        return np.full(self.domain.n_interior, float(eta))

    @property
    def solver(self) -> LinearSolver:
        if self._solver is None:
            if self.domain.period is not None and (self.eta is None or not np.any(self.eta > 0)):
                raise ValueError("operator is singular on a torus without killing")
            self._solver = LinearSolver(-self.matrix, self.domain.d)
        return self._solver

    def apply(self, u):
        """Interior values of ``(L - rate eta) u`` for a full-domain vector ``u``."""
        u = np.asarray(u.values if isinstance(u, la.ScalarField) else u, dtype=float)
        n = self.domain.n_interior
        return self.matrix @ u[:n] + self.coupling @ u[n:]

    def solve(self, f, b=None):
        """Solve ``(L - rate eta) u = f`` in the interior with ``u = b`` on the boundary."""
        n = self.domain.n_interior
        f = np.broadcast_to(np.asarray(f, dtype=float), (n,))
        b = np.zeros(self.domain.n_boundary) if b is None else np.broadcast_to(
            np.asarray(b, dtype=float), (self.domain.n_boundary,))
        rhs = f - self.coupling @ b
        x, info = self.solver.solve(-rhs)
        u = la.ScalarField(self.domain, np.concatenate([x, b]))
        scale = max(np.linalg.norm(f), np.linalg.norm(self.coupling @ b), 1e-300)
        info.residual = float(np.linalg.norm(self.apply(u) - f) / scale)
        return u, info


@dataclass
class OperatorSpec:
    """Affine problem ``L u - rate * eta * u = f`` on a domain with boundary data."""

    env: Environment
    domain: la.LatticeDomain
    f: object = 0.0
    boundary: object = 0.0
    eta: object = None
    rate: float = 0.0

    def solve(self):
        op = DiscreteOperator(self.env, self.domain, self.eta, self.rate)
        return op.solve(_values_on(self.f, self.domain.interior), _values_on(self.boundary, self.domain.boundary))


def _values_on(spec, pts):
    if callable(spec):
        return np.asarray(spec(pts), dtype=float)
    if isinstance(spec, la.ScalarField):
        return spec(pts)
    return np.broadcast_to(np.asarray(spec, dtype=float), (len(pts),))


def solve_dirichlet(env, domain, f=0.0, b=0.0):
    """Solve ``(1/2) tr(a grad^2 u) = f`` inside ``domain`` with ``u = b`` on its boundary.

    ``f`` and ``b`` may be constants, arrays (interior / boundary order),
    callables of points, or ScalarFields.
    """
    return OperatorSpec(env, domain, f, b).solve()


def _source_rhs(domain, y):
    y = np.asarray(y, dtype=np.int64)
    iy = int(domain.index(y))
    if iy < 0 or iy >= domain.n_interior:
        raise ValueError(f"source {y.tolist()} is not an interior point")
    f = np.zeros(domain.n_interior)
    f[iy] = -1.0
    return f


def green_ball(env, R: float, y, center=None):
    """``G_R(., y)``: expected occupation time at ``y`` before leaving ``B_R(center)``."""
    dom = la.ball(np.zeros(env.d, dtype=np.int64) if center is None else center, R, env.d)
    return DiscreteOperator(env, dom).solve(_source_rhs(dom, y))


def green_ball_columns(env, R: float, sources, center=None):
    """Several Green columns sharing one factorization; returns (domain, array[n_sources, N])."""
    dom = la.ball(np.zeros(env.d, dtype=np.int64) if center is None else center, R, env.d)
    op = DiscreteOperator(env, dom)
    cols = [op.solve(_source_rhs(dom, y))[0].values for y in np.atleast_2d(sources)]
    return dom, np.array(cols)


def green_row(env, R: float, x0, center=None):
    """Row ``x -> G_R(x0, x)`` of the Dirichlet Green function (adjoint solve).

    Returned as a ScalarField on the ball (zero on the boundary).
    """
    dom = la.ball(np.zeros(env.d, dtype=np.int64) if center is None else center, R, env.d)
    op = DiscreteOperator(env, dom)
    adj = LinearSolver((-op.matrix).T.tocsr(), env.d)
    e = np.zeros(dom.n_interior)
    i = int(dom.index(np.asarray(x0, dtype=np.int64)[None, :])[0])
    if i < 0 or i >= dom.n_interior:
        raise ValueError("x0 must be an interior point")
    e[i] = 1.0
    row, info = adj.solve(e)
    return la.ScalarField(dom, np.concatenate([row, np.zeros(dom.n_boundary)])), info


def killed_domain(env, R: float, K: float, center=None):
    if K < 5:
        raise ValueError(f"truncation factor K={K} < 5: truncation bias would dominate")
    return la.ball(np.zeros(env.d, dtype=np.int64) if center is None else center, K * R, env.d)


def green_killed(env, R: float, eta, y, K: float = 8.0, center=None, *, min_factor: float = 5.0):
    """Green function of ``L G - eta G / R^2 = -1_y`` on ``B_{KR}`` with zero exterior.

    ``eta`` (callable, constant or None for eta = 1) must equal 1 outside
    ``B_{3R}``; the zero exterior condition costs a bias of order
    ``exp(-c K)`` because the killed walk rarely travels ``KR``.
    """
    if K < min_factor:
        raise ValueError(f"truncation factor K={K} < {min_factor}: truncation bias would dominate")
    dom = la.ball(np.zeros(env.d, dtype=np.int64) if center is None else center, K * R, env.d)
    op = DiscreteOperator(env, dom, 1.0 if eta is None else eta, 1.0 / R ** 2)
    return op.solve(_source_rhs(dom, y))


def killed_mean_time(env, R: float, eta, x, K: float = 8.0):
    """``E^x[T]`` for the geometric clock with site rates ``eta/(R^2+eta)``.

    Solves ``(L - eta/R^2) m = -1`` on ``B_{KR}(x)`` with zero exterior.
    """
    x = np.asarray(x, dtype=np.int64)
    dom = killed_domain(env, R, K, center=x)
    op = DiscreteOperator(env, dom, 1.0 if eta is None else eta, 1.0 / R ** 2)
    m, info = op.solve(-1.0, 0.0)
    return float(m(x)), info


def killed_escape_probability(env, R: float, eta, x, k: float):
    """``P^x(T > tau_k)``: the walk leaves ``B_{kR}(x)`` before the clock rings.

    ``h`` solves ``(L - eta/R^2) h = 0`` inside with ``h = 1 - eta~`` on the
    exterior boundary (the clock must also stay silent at the exit time).
    """
    x = np.asarray(x, dtype=np.int64)
    dom = la.ball(x, k * R, env.d)
    eta_fn = (lambda p: np.ones(len(p))) if eta is None else (eta if callable(eta) else (lambda p: np.full(len(p), float(eta))))
    eb = eta_fn(dom.boundary)
    op = DiscreteOperator(env, dom, eta_fn, 1.0 / R ** 2)
    h, info = op.solve(0.0, 1.0 - eb / (R * R + eb))
    return float(h(x)), info


def green_whole(env, x, y, factors=(4.0, 8.0)):
    """Whole-space Green function for d >= 3 by ball truncation and extrapolation.

    ``G_R = G - c R^{2-d} + ...`` with ``R = factor * max(|x - y|, 1)``;
    the two largest radii are combined to cancel the leading term.
    """
    d = env.d
    if d < 3:
        raise ValueError("the whole-space Green function needs d >= 3 (use potential_kernel in d = 2)")
    x, y = np.asarray(x), np.asarray(y)
    dist = max(float(np.linalg.norm(x - y)), 1.0)
    vals, radii = [], []
    for k in factors:
        R = k * dist + 1
        u, _ = green_ball(env, R, y, center=y)
        vals.append(float(u(x)))
        radii.append(R)
    (r1, r2), (g1, g2) = radii[-2:], vals[-2:]
    w1, w2 = r1 ** (2 - d), r2 ** (2 - d)
    return (g2 * w1 - g1 * w2) / (w1 - w2), {"radii": radii, "values": vals}


def mf_h(r: float, t: float) -> float:
    """Heat-kernel exponent ``r^2/(r v t) + r log((r/t) v 1)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return 0.0
    return r * r / max(r, t) + r * np.log(max(r / t, 1.0))


def transition_matrix(env, domain: la.LatticeDomain) -> sp.csr_matrix:
    """One-step matrix of the walk on all points of ``domain``.

    Steps leaving the domain are dropped (sub-stochastic rows); on a torus
    the matrix is stochastic.
    """
    n = len(domain)
    a = env.values(domain.points)
    nb = domain.neighbor_table()
    w = np.repeat(a / 2, 2, axis=1)
    rows = np.repeat(np.arange(n), nb.shape[1])
    cols = nb.ravel()
    keep = cols >= 0
    return sp.csr_matrix((w.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n))


def poisson_truncation(t: float, tail: float = POISSON_TAIL) -> int:
    if t == 0:
        return 0
    return int(poisson.isf(tail, t)) + 1


def uniformized_series(matvec, v0, weights):
    """``sum_k weights[k] M^k v0`` with ``M`` given by ``matvec``."""
    out = weights[0] * v0
    v = v0
    for w in weights[1:]:
        v = matvec(v)
        out = out + w * v
    return out


def semigroup_weights(t: float, tail: float = POISSON_TAIL):
    K = poisson_truncation(t, tail)
    return poisson.pmf(np.arange(K + 1), t), float(poisson.sf(K, t))


def integrated_weights(T: float, tail: float = POISSON_TAIL):
    """Weights of ``int_0^T p_s ds = sum_k P(N_T >= k+1) P^k``; tail mass bound."""
    K = poisson_truncation(T, tail * 1e-3) + 10
    k = np.arange(K + 1)
    w = poisson.sf(k, T)
    # mass neglected beyond K: sum_{k>K} P(N_T > k) = E[(N_T - K - 1)^+]
    return w, float(np.sum(poisson.sf(np.arange(K + 1, K + 200), T)))


@dataclass
class HeatKernelSlice:
    t: float
    base: np.ndarray
    domain: la.LatticeDomain
    values: np.ndarray
    deficit_bound: float

    def __call__(self, pts):
        idx = self.domain.index(pts)
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)

    def to_csv(self, path):
        la.ScalarField(self.domain, self.values).to_csv(path)


def heat_semigroup(env, base, t: float, window=None, *, tail: float = POISSON_TAIL, max_deficit: float | None = None):
    """Row ``p_t(base, .)`` of the rate-1 continuous-time walk by uniformization.

    ``window`` is a LatticeDomain containing ``base`` (a torus for exact
    results) or a radius for a ball around ``base``.  Mass leaving a finite
    window is lost; the slice reports ``deficit_bound`` = lost mass plus the
    neglected Poisson tail.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    base = np.asarray(base, dtype=np.int64)
    if window is None:
        window = la.ball(base, max(8.0, 6 * np.sqrt(t) + 8), env.d)
    elif not isinstance(window, la.LatticeDomain):
        window = la.ball(base, float(window), env.d)
    P = transition_matrix(env, window)
    mu0 = np.zeros(len(window))
    i0 = int(window.index(base))
    if i0 < 0:
        raise ValueError("base point outside the window")
    mu0[i0] = 1.0
    weights, tail_mass = semigroup_weights(t, tail)
    PT = P.T.tocsr()
    row = uniformized_series(PT.dot, mu0, weights)
    deficit = max(0.0, 1.0 - row.sum())
    bound = deficit + tail_mass
    if max_deficit is not None and bound > max_deficit:
        raise SolverError(f"window too small: deficit {bound:.3e} > {max_deficit:.1e}", bound)
    return HeatKernelSlice(t, base, window, row, bound)


def semigroup_apply(P: sp.csr_matrix, zeta, t: float, tail: float = POISSON_TAIL):
    """``(P_t zeta)(x)`` for every x of the state space of ``P``."""
    weights, _ = semigroup_weights(t, tail)
    return uniformized_series(P.dot, np.asarray(zeta, dtype=float), weights)


def potential_kernel(env, x, y, schedule=(16, 32, 64, 128), tol: float = 5e-3):
    """Potential kernel ``A(x, y)`` in d = 2 from Dirichlet Green differences.

    ``A_R = G_R(y, y) - G_R(x, y)`` on balls ``B_R(y)`` for increasing R in
    ``schedule``.  The returned estimate extrapolates the last two values
    assuming an O(1/R) correction; a ``SolverError`` is raised when the last
    increment exceeds ``tol``.
    """
    if env.d != 2:
        raise ValueError("potential kernel is defined for d = 2")
    x, y = np.asarray(x, dtype=np.int64), np.asarray(y, dtype=np.int64)
    if np.array_equal(x, y):
        return 0.0, {"schedule": list(schedule), "values": [0.0] * len(schedule)}
    dist = float(np.linalg.norm(x - y))
    vals = []
    for R in schedule:
        if R <= dist + 1:
            raise ValueError("schedule radii must exceed |x - y| + 1")
        u, _ = green_ball(env, R, y, center=y)
        vals.append(float(u(y) - u(x)))
    r1, r2 = schedule[-2:]
    est = (r2 * vals[-1] - r1 * vals[-2]) / (r2 - r1)
    change = abs(vals[-1] - vals[-2])
    info = {"schedule": list(schedule), "values": vals, "last_change": change}
    if change > tol:
        raise SolverError(f"potential kernel not stabilized: last change {change:.3e} > {tol}", change)
    return est, info
