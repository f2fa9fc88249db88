"""Invariant density of the environment seen from the walk, realized on tori.

On a torus of period L the chain is finite and irreducible, so its
stationary law is unique; normalized to mean one it plays the role of the
density rho on the periodized environment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernel, lattice as la, rng
from .env import Environment, EnvironmentLaw, resample
from .rates import RateSeries

STATIONARY_TOL = 1e-12


class StationaryError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class InvariantField:
    L: int
    d: int
    rho: np.ndarray  # flattened in C order over [0, L)^d
    residual: float
    method: str

    def grid(self):
        return self.rho.reshape((self.L,) * self.d)

    def __call__(self, pts):
        pts = np.mod(np.asarray(pts, dtype=np.int64), self.L)
        return self.rho[np.ravel_multi_index(tuple(np.moveaxis(pts, -1, 0)), (self.L,) * self.d)]


def torus_env(law: EnvironmentLaw, L: int, seed: int) -> Environment:
    return Environment(law, seed, period=L)


def _torus_matrix(env: Environment):
    dom = la.torus(env.period, env.d)
    # torus points are enumerated in C order, matching reshape((L,)*d)
    return dom, kernel.transition_matrix(env, dom)


def stationary_torus(env: Environment, tol: float = STATIONARY_TOL, max_refine: int = 12) -> InvariantField:
    """Stationary density of the walk on the torus, normalized to mean 1.

    Pins ``rho(0) = 1``, solves the remaining equations of
    ``(I - P^T) rho = 0`` and applies iterative refinement until
    ``||rho^T (P - I)||_inf <= tol``.
    """
    L, d = env.period, env.d
    if L is None:
        raise ValueError("stationary_torus needs a periodic environment")
    if L < 4:
        raise ValueError("torus period must be at least 4")
    _, P = _torus_matrix(env)
    n = P.shape[0]
    colsum = np.asarray(P.sum(axis=0)).ravel()
    if np.max(np.abs(colsum - 1)) <= 1e-14:
        return InvariantField(L, d, np.ones(n), 0.0, "doubly-stochastic")
    M = (sp.identity(n, format="csr") - P.T).tocsr()
    solver = kernel.LinearSolver(M[1:, 1:].tocsr(), d, rtol=1e-11)
    rho = np.ones(n)
    rhs = -M[1:, 0].toarray().ravel()
    rho[1:] = solver.solve(rhs)[0]
    # The pinned row absorbs the floating-point row-sum defect of P.  A
    # correction along c_b (uniform right-hand side) moves that defect
    # evenly onto all rows, so every residual entry ends up tiny.
    c_b = np.zeros(n)
    c_b[1:] = solver._raw(np.full(n - 1, 1.0 / n))[0]
    r_b0 = float((M @ c_b)[0])
    res = np.inf
    for _ in range(max_refine):
        rho /= rho.mean()
        r = M @ rho
        res = float(np.max(np.abs(r)))
        if res <= tol:
            break
        rho[1:] += solver.solve(-r[1:])[0]
        rho -= (M @ rho)[0] / r_b0 * c_b
    if res > tol or np.any(rho <= 0):
        raise StationaryError(f"stationary solve did not converge: residual {res:.3e}", res)
    return InvariantField(L, d, rho, res, solver.method)


def stationarity_functional(env: Environment, field: InvariantField, f) -> float:
    """``sum_x rho(x) (L f)(x)`` on the torus (zero for the invariant density)."""
    _, P = _torus_matrix(env)
    f = np.asarray(f, dtype=float)
    return float(field.rho @ (P @ f - f))


def v_mass(env: Environment, t: float, base=None, window=None, tail: float = kernel.POISSON_TAIL):
    """``V(t) = sum_x p_t(x, base)``.

    Exact on a torus environment.  Otherwise the sum is taken over the ball
    ``B_window(base)`` with killed exits and the returned deficit bound is the
    change when the window is doubled.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    d = env.d
    base = np.zeros(d, dtype=np.int64) if base is None else np.asarray(base, dtype=np.int64)
    if t == 0:
        return 1.0, 0.0
    weights, tail_mass = kernel.semigroup_weights(t, tail)
    if env.period is not None:
        dom, P = _torus_matrix(env)
        v = kernel.uniformized_series(P.T.tocsr().dot, np.ones(P.shape[0]), weights)
        return float(v[dom.index(base)]), tail_mass
    r = window if window is not None else 6 * np.sqrt(t) + 8
    vals = []
    for rad in (r, 2 * r):
        dom = la.ball(base, rad, d)
        P = kernel.transition_matrix(env, dom)
        v = kernel.uniformized_series(P.T.tocsr().dot, np.ones(P.shape[0]), weights)
        vals.append(float(v[dom.index(base)]))
    deficit = abs(vals[1] - vals[0]) + tail_mass
    if deficit > 1e-6:
        raise kernel.SolverError(f"V(t) window deficit {deficit:.2e} above 1e-6", deficit)
    return vals[1], deficit


def v_mass_field(env: Environment, t: float, tail: float = kernel.POISSON_TAIL):
    """``V(t, theta_x omega)`` for every torus site x at once."""
    _, P = _torus_matrix(env)
    weights, _ = kernel.semigroup_weights(t, tail)
    return kernel.uniformized_series(P.T.tocsr().dot, np.ones(P.shape[0]), weights)


def _env_seed(seed: int, m: int) -> int:
    return rng.derive_key(seed, m)


def ball_offsets(R: float, d: int) -> np.ndarray:
    return la.ball(np.zeros(d, dtype=np.int64), R, d).interior


def block_average_stats(law: EnvironmentLaw, L: int, Rs, M: int, seed: int = 0, centers: int = 1,
                        fields=None) -> RateSeries:
    """Median of ``|rho(B_R)/|B_R| - 1|`` over M torus environments.

    ``centers`` > 1 places ``centers**d`` ball centers on a regular grid of
    every torus, spaced at least ``L / centers`` apart.
    """
    if M < 8:
        raise ValueError("block averages need at least 8 environments")
    Rs = list(Rs)
    if max(Rs) > L / 8:
        raise ValueError("max R must not exceed L/8")
    d = law.d
    grid = np.stack(np.meshgrid(*[np.arange(centers) * (L // centers)] * d, indexing="ij"), -1).reshape(-1, d)
    samples = [[] for _ in Rs]
    for m in range(M):
        env = torus_env(law, L, _env_seed(seed, m))
        fld = stationary_torus(env) if fields is None else fields[m]
        for j, R in enumerate(Rs):
            off = ball_offsets(R, d)
            for c in grid:
                samples[j].append(abs(float(fld(c + off).mean()) - 1.0))
    return RateSeries("block_average", Rs, samples, reference_exponent=-d / 2)


def _shell_average(C, L, d, r):
    z = np.stack(np.meshgrid(*[np.arange(L)] * d, indexing="ij"), -1)
    z = np.where(z > L // 2, z - L, z)
    norm = np.sqrt((z ** 2).sum(-1))
    mask = np.abs(norm - r) < 0.5
    return float(C[mask].mean())


def covariance_decay(law: EnvironmentLaw, L: int, offsets, M: int, seed: int = 0, fields=None) -> RateSeries:
    """``Cov(rho(0), rho(x))`` averaged over torus translations and shells ``|x| ~ r``.

    Each environment contributes its translation-averaged autocovariance
    (computed by FFT); errors are jackknife over environments.  The fit
    uses absolute values.
    """
    offsets = list(offsets)
    if max(offsets) > L / 8:
        raise ValueError("offsets must not exceed L/8")
    d = law.d
    per_env = np.zeros((M, len(offsets) + 1))
    for m in range(M):
        env = torus_env(law, L, _env_seed(seed, m))
        fld = stationary_torus(env) if fields is None else fields[m]
        g = fld.grid() - 1.0
        F = np.fft.rfftn(g)
        C = np.fft.irfftn(F * np.conj(F), s=g.shape, axes=tuple(range(d))) / g.size
        per_env[m, 0] = C.flat[0]
        for j, r in enumerate(offsets):
            per_env[m, j + 1] = _shell_average(C, L, d, r)
    means = per_env.mean(axis=0)
    jack = np.array([(per_env.sum(0) - per_env[i]) / (M - 1) for i in range(M)]) if M > 1 else per_env
    jk_err = np.sqrt((M - 1) / M * ((jack - jack.mean(0)) ** 2).sum(0)) if M > 1 else np.full(len(means), np.nan)
    series = RateSeries("covariance", offsets, [list(per_env[:, j + 1]) for j in range(len(offsets))],
                        reference_exponent=-d, values=[abs(float(v)) for v in means[1:]],
                        errors=[float(e) for e in jk_err[1:]], means=[float(v) for v in means[1:]])
    from .rates import fit_rate
    if len(offsets) >= 3 and all(v > 0 for v in series.values):
        series.fit = fit_rate(offsets, series.values)
    series.variance = float(means[0])
    series.variance_error = float(jk_err[0])
    return series


def sensitivity_check(env: Environment, y, x, R_green: float, draw: int = 1, value=None, base_field=None):
    """Compare the change of rho at x under resampling at y with the Green-function formula.

    ``lhs = rho'(x) - rho(x)`` from two stationary solves;
    ``rhs = rho(y) sum_i (omega'(y, y+e_i) - omega(y, y+e_i)) grad^2_i G'(y, x)``
    with ``G'`` the Dirichlet Green function of the resampled environment on
    ``B_{R_green}(x)``.  ``rhs_torus`` evaluates the same sum with the torus
    group inverse of ``I - P'`` in place of ``G'``; it matches ``lhs`` up to
    rounding and separates the ball truncation from periodic-image effects.
    """
    y = np.asarray(y, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    d = env.d
    env2 = resample(env, y, draw, value)
    rho = stationary_torus(env) if base_field is None else base_field
    rho2 = stationary_torus(env2)
    lhs = float(rho2(x) - rho(x))
    delta = (env2.sample_site(y) - env.sample_site(y)) / 2
    if not np.any(delta):
        return {"lhs": lhs, "rhs": 0.0, "gap": abs(lhs), "relative_gap": 0.0 if lhs == 0 else np.inf,
                "rhs_torus": 0.0, "relative_gap_torus": 0.0 if lhs == 0 else np.inf}
    G, _ = kernel.green_ball(env2, R_green, x, center=x)
    E = np.eye(d, dtype=np.int64)
    second = np.array([G(y + E[i]) + G(y - E[i]) - 2 * G(y) for i in range(d)])
    rhs = float(rho(y) * np.dot(delta, second))
    rhs_torus = float(_torus_response(env2, rho2, y, rho(y) * delta)(x))
    gap = abs(lhs - rhs)

    def relative(g):
        return float(g / abs(lhs)) if lhs != 0 else (0.0 if g == 0 else np.inf)

    return {"lhs": lhs, "rhs": rhs, "gap": gap, "relative_gap": relative(gap),
            "rhs_torus": rhs_torus, "relative_gap_torus": relative(abs(lhs - rhs_torus))}


def _torus_response(env2: Environment, rho2: InvariantField, y, weights):
    """Mean-zero solution of ``(I - P'^T) u = b`` with ``b(y +- e_i) = weights_i``.

    ``b`` sums to zero, so the singular system is consistent; the kernel
    direction ``rho'`` is removed to give the mean-zero representative.
    """
    dom, P = _torus_matrix(env2)
    n = P.shape[0]
    M = (sp.identity(n, format="csr") - P.T).tocsr()
    b = np.zeros(n)
    E = np.eye(env2.d, dtype=np.int64)
    for i, w in enumerate(weights):
        b[dom.index(y + E[i])] += w
        b[dom.index(y - E[i])] += w
    u = np.zeros(n)
    u[1:] = kernel.LinearSolver(M[1:, 1:].tocsr(), env2.d, rtol=1e-12).solve(b[1:])[0]
    u -= u.sum() / rho2.rho.sum() * rho2.rho
    return InvariantField(rho2.L, rho2.d, u, 0.0, "torus-response")


def occupation_check(env: Environment, field: InvariantField, n_steps: int, seed: int = 0,
                     n_groups: int = 20, paths_per_group: int = 50, burn_in: int | None = None):
    """Compare rho with visit frequencies of ``n_steps`` total walk steps.

    Walks are split into ``n_groups`` independent groups; returns
    ``(rho, estimate, stderr)`` per site, the error being the spread of the
    group frequencies.
    """
    from .walk import occupation_frequencies

    L, d = env.period, env.d
    if burn_in is None:
        burn_in = 4 * L * L
    per = max(1, n_steps // (n_groups * paths_per_group))
    freq = np.zeros((n_groups, L ** d))
    for g in range(n_groups):
        c = occupation_frequencies(env, per, seed=seed, n_paths=paths_per_group, burn_in=burn_in,
                                   first_path=g * paths_per_group)
        freq[g] = c * (L ** d) / (per * paths_per_group)
    return field.rho, freq.mean(0), freq.std(0, ddof=1) / np.sqrt(n_groups)
