"""Correctors, effective coefficients and homogenization-rate experiments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import invariant, kernel, lattice as la, poly, rng
from .env import Environment, EnvironmentLaw
from .rates import RateSeries

# --------------------------------------------------------------------------- rates


def rate_function(name: str, arg: float, d: int) -> float:
    """Scale functions mu(R), nu(T), delta(R) and U(r) by dimension."""
    if d < 2:
        raise ValueError("d must be at least 2")
    x = float(arg)
    if name == "mu":
        if x < 1:
            raise ValueError("mu needs R >= 1")
        return {2: x, 3: np.sqrt(x), 4: np.sqrt(max(1.0, np.log(x)))}.get(d, 1.0)
    if name == "nu":
        if x < 1:
            raise ValueError("nu needs T >= 1")
        if d == 2:
            return x ** -0.5
        if d == 3:
            return x ** -0.75
        if d == 4:
            return np.sqrt(np.log(x)) / x
        return 1.0 / x
    if name == "delta":
        if x < 1:
            raise ValueError("delta needs R >= 1")
        return max(1.0, np.log(x)) ** 1.5 if d == 2 else 1.0
    if name == "U":
        if x < 1:
            raise ValueError("U needs r >= 1")
        return -np.log(x) if d == 2 else x ** (2 - d)
    raise ValueError(f"unknown rate function {name!r}; expected mu, nu, delta or U")


REFERENCE_EXPONENTS = {
    ("mu", 2): 1.0, ("mu", 3): 0.5, ("mu", 4): 0.0,
    ("nu", 2): -0.5, ("nu", 3): -0.75, ("nu", 4): -1.0,
    ("delta", 3): 0.0, ("delta", 4): 0.0,
}


def reference_exponent(name: str, d: int):
    """Power part of a rate function (logarithms dropped)."""
    if d >= 5:
        return {"mu": 0.0, "nu": -1.0, "delta": 0.0}.get(name)
    return REFERENCE_EXPONENTS.get((name, d))


# --------------------------------------------------------------------------- cutoff

ETA_LO, ETA_HI = 7 / 3, 8 / 3


def eta0(s):
    """Quintic smoothstep in ``s = |x|``: 0 below 7/3, 1 above 8/3."""
    t = np.clip((np.asarray(s, dtype=float) - ETA_LO) / (ETA_HI - ETA_LO), 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class CutoffField:
    R: float

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return eta0(np.sqrt((pts ** 2).sum(-1)) / max(self.R, 1.0))


def cutoff(R: float) -> CutoffField:
    return CutoffField(float(R))


# --------------------------------------------------------------------------- psi

PSI = {
    "one": lambda a: np.ones(len(a)),
    "a_1": lambda a: a[:, 0],
    "a_1^2": lambda a: a[:, 0] ** 2,
    "a_max": lambda a: a.max(axis=1),
}


def psi_function(name_or_fn):
    if callable(name_or_fn):
        return name_or_fn
    try:
        return PSI[name_or_fn]
    except KeyError:
        raise ValueError(f"unknown psi {name_or_fn!r}; expected one of {sorted(PSI)}") from None


def _psi_on(env, psi, pts):
    return np.asarray(psi_function(psi)(env.values(pts)), dtype=float)


# --------------------------------------------------------------------------- correctors

AP_MIN_FACTOR = 6.0
LOC_MIN_FACTOR = 5.0


def approx_corrector(env: Environment, R: float, psi, psibar: float, factor: float = AP_MIN_FACTOR, center=None):
    """Solve ``(L - 1/R^2) phi = psi - psibar`` on the box of half-width ``factor * R``.

    The resolvent kernel decays like ``exp(-c|x|/R)``, so the zero exterior
    condition at distance ``factor * R`` is harmless.
    """
    if factor < AP_MIN_FACTOR:
        raise ValueError(f"truncation box half-width {factor}R is smaller than {AP_MIN_FACTOR}R")
    d = env.d
    c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    h = int(np.ceil(factor * R))
    dom = la.box(c - h, (2 * h + 1,) * d)
    op = kernel.DiscreteOperator(env, dom, 1.0, 1.0 / R ** 2)
    return op.solve(_psi_on(env, psi, dom.interior) - psibar, 0.0)


def local_corrector(env: Environment, R: float, psi, psibar: float, K: float = LOC_MIN_FACTOR, center=None,
                    min_factor: float = LOC_MIN_FACTOR):
    """Solve ``L phi - eta_R phi / R^2 = psi - psibar`` on ``B_{KR}`` with zero exterior."""
    if K < min_factor:
        raise ValueError(f"truncation factor K={K} is smaller than {min_factor}")
    d = env.d
    c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    dom = la.ball(c, K * R, d)
    eta = cutoff(R)
    op = kernel.DiscreteOperator(env, dom, lambda p: eta(p - c), 1.0 / R ** 2)
    return op.solve(_psi_on(env, psi, dom.interior) - psibar, 0.0)


def gradient_norms(u: la.ScalarField, R: float, center=None) -> np.ndarray:
    """``max_i |u(x+e_i) - u(x)|`` for every x in ``B_R(center)``."""
    d = u.domain.d
    c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    pts = la.ball(c, R, d).interior
    base = u(pts)
    E = np.eye(d, dtype=np.int64)
    return np.max(np.abs(np.stack([u(pts + E[i]) - base for i in range(d)], axis=1)), axis=1)


@dataclass
class CorrectorBundle:
    """Local correctors ``v^k`` for ``(a_k - abar_k)/2`` and ``xi`` for ``psi - psibar``."""

    R: float
    v: list
    xi: la.ScalarField | None
    grad_v: list
    grad_xi: float
    residuals: list = field(default_factory=list)

    @classmethod
    def build(cls, env, R, abar, psi="one", psibar=1.0, K=LOC_MIN_FACTOR, min_factor=LOC_MIN_FACTOR):
        d = env.d
        v, gv, res = [], [], []
        for k in range(d):
            phi, info = local_corrector(env, R, lambda a, k=k: a[:, k] / 2, abar[k] / 2, K, min_factor=min_factor)
            v.append(phi)
            gv.append(float(gradient_norms(phi, R).max()))
            res.append(info.residual)
        xi, gxi = None, 0.0
        p = psi_function(psi)
        if not (psi == "one" and psibar == 1.0):
            xi, info = local_corrector(env, R, p, psibar, K, min_factor=min_factor)
            gxi = float(gradient_norms(xi, R).max())
            res.append(info.residual)
        return cls(float(R), v, xi, gv, gxi, res)


# --------------------------------------------------------------------------- effective coefficients

def is_exchangeable(law: EnvironmentLaw) -> bool:
    if law.family == "kappa-padded-dirichlet":
        w = np.asarray(law.params["weights"])
        return bool(np.all(w == w[0]))
    if law.family == "degenerate-constant":
        v = np.asarray(law.params["value"])
        return bool(np.all(v == v[0]))
    return False


@dataclass
class EffectiveCoefficients:
    abar_exact: np.ndarray
    psibar_exact: float
    abar_ergodic: np.ndarray | None = None
    psibar_ergodic: float | None = None
    abar_ergodic_se: np.ndarray | None = None
    psibar_ergodic_se: float | None = None
    method: str = "torus"

    @property
    def discrepancy(self):
        if self.abar_ergodic is None:
            return None
        return np.abs(self.abar_exact - self.abar_ergodic)

    def to_dict(self):
        f = lambda v: None if v is None else np.asarray(v).tolist()
        return {"abar_exact": f(self.abar_exact), "psibar_exact": self.psibar_exact,
                "abar_ergodic": f(self.abar_ergodic), "psibar_ergodic": self.psibar_ergodic,
                "abar_ergodic_se": f(self.abar_ergodic_se), "psibar_ergodic_se": self.psibar_ergodic_se,
                "method": self.method}


def effective_coefficients(env: Environment, psi="one", n_steps: int = 0, seed: int = 0,
                           n_walkers: int = 20, field=None) -> EffectiveCoefficients:
    """Torus-exact ``abar = sum rho a / L^d`` and ``psibar``; optionally the ergodic estimate.

    The ergodic estimator averages ``a`` and ``psi`` along ``n_walkers``
    walks of total length ``n_steps`` started at the origin; its standard
    error is the spread across walkers.
    """
    if env.period is None:
        raise ValueError("effective coefficients need a torus environment")
    fld = invariant.stationary_torus(env) if field is None else field
    a = env.torus_values().reshape(-1, env.d)
    p = psi_function(psi)(a)
    n = len(a)
    out = EffectiveCoefficients(fld.rho @ a / n, float(fld.rho @ p / n))
    if n_steps:
        from .walk import SiteCache, _advance, _STEP

        per = n_steps // n_walkers
        cache = SiteCache(env, None)
        ids = np.arange(n_walkers, dtype=np.int64)
        pos = np.zeros((n_walkers, env.d), dtype=np.int64)
        acc_a = np.zeros((n_walkers, env.d))
        acc_p = np.zeros(n_walkers)
        psi_fn = psi_function(psi)
        for k in range(per):
            av = cache(pos)
            acc_a += av
            acc_p += psi_fn(av)
            u = rng.uniform(seed, ids, np.int64(k), np.int64(_STEP))
            pos = np.mod(_advance(pos, av, u), env.period)
        acc_a /= per
        acc_p /= per
        out.abar_ergodic = acc_a.mean(0)
        out.abar_ergodic_se = acc_a.std(0, ddof=1) / np.sqrt(n_walkers)
        out.psibar_ergodic = float(acc_p.mean())
        out.psibar_ergodic_se = float(acc_p.std(ddof=1) / np.sqrt(n_walkers))
    return out


def effective_parameters(law: EnvironmentLaw, psi="one", L: int = 64, seed: int = 0, M: int = 4):
    """``(abar, psibar, method)`` for the homogenized equation.

    Exchangeable laws give ``abar = I/d`` exactly, and then ``psibar`` is
    exact for ``psi`` in {one, a_1}.  Otherwise torus-exact values are
    averaged over ``M`` tori.
    """
    d = law.d
    if law.is_constant:
        a = np.asarray(law.transform(np.full((1, law.n_uniforms), 0.5))[0])
        return a, float(psi_function(psi)(a[None, :])[0]), "constant"
    if is_exchangeable(law) and psi in ("one", "a_1"):
        return np.full(d, 1.0 / d), (1.0 if psi == "one" else 1.0 / d), "symmetry"
    ab, pb = [], []
    for m in range(M):
        e = effective_coefficients(Environment(law, rng.derive_key(seed, m), period=L), psi)
        ab.append(e.abar_exact)
        pb.append(e.psibar_exact)
    return np.mean(ab, axis=0), float(np.mean(pb)), "torus"


# --------------------------------------------------------------------------- ergodic rate / variance decay

def _subsample(L, d, stride):
    g = np.stack(np.meshgrid(*[np.arange(0, L, stride)] * d, indexing="ij"), -1).reshape(-1, d)
    return np.ravel_multi_index(tuple(g.T), (L,) * d)


def ergodic_rate(law: EnvironmentLaw, psi, Ts, M: int, L: int, seed: int = 0, stride: int = 4,
                 tail: float = kernel.POISSON_TAIL) -> RateSeries:
    """``|T^{-1} E_omega int_0^T psi(env_s) ds - psibar|`` by exact uniformization on tori.

    Every torus site x gives the shifted environment theta_x omega; samples
    are taken on a sub-lattice of stride ``stride``.  ``psibar`` is the
    torus-exact value.
    """
    Ts = sorted(float(t) for t in Ts)
    d = law.d
    samples = [[] for _ in Ts]
    idx = _subsample(L, d, stride)
    for m in range(M):
        env = Environment(law, rng.derive_key(seed, m), period=L)
        fld = invariant.stationary_torus(env)
        dom, P = invariant._torus_matrix(env)
        p = psi_function(psi)(env.torus_values().reshape(-1, d))
        pbar = float(fld.rho @ p / len(p))
        ws = [kernel.integrated_weights(T, tail)[0] for T in Ts]
        K = max(len(w) for w in ws)
        acc = [np.zeros(len(p)) for _ in Ts]
        v = p.copy()
        for k in range(K):
            for j, w in enumerate(ws):
                if k < len(w):
                    acc[j] += w[k] * v
            v = P @ v
        for j, T in enumerate(Ts):
            samples[j].extend(np.abs(acc[j][idx] / T - pbar).tolist())
    return RateSeries("ergodic_rate", Ts, samples, reference_exponent=reference_exponent("nu", d))


def var_decay_check(law: EnvironmentLaw, zeta, ts, L: int, M: int, seed: int = 0,
                    tail: float = kernel.POISSON_TAIL) -> RateSeries:
    """``Var_Q(P_t zeta)`` with rho-weighting over the torus, per environment."""
    ts = sorted(float(t) for t in ts)
    d = law.d
    samples = [[] for _ in ts]
    for m in range(M):
        env = Environment(law, rng.derive_key(seed, m), period=L)
        fld = invariant.stationary_torus(env)
        _, P = invariant._torus_matrix(env)
        z = psi_function(zeta)(env.torus_values().reshape(-1, d))
        w = fld.rho / fld.rho.sum()
        for j, t in enumerate(ts):
            v = kernel.semigroup_apply(P, z, t, tail)
            mean = w @ v
            samples[j].append(float(w @ (v - mean) ** 2))
    return RateSeries("variance_decay", ts, samples, reference_exponent=-d / 2)


# --------------------------------------------------------------------------- two-scale error

@dataclass
class HomogenizedProblem:
    """Polynomial data ``f``, ``g`` and the closed-form effective solution ``ubar``."""

    d: int
    f: dict
    g: dict
    abar: np.ndarray
    psibar: float
    ubar: dict = field(init=False)

    def __post_init__(self):
        self.abar = np.asarray(self.abar, dtype=float)
        self.ubar = poly.solve_ball_dirichlet(self.f, self.g, self.abar, self.psibar, self.d)

    def residual(self, pts) -> float:
        """Max of ``|(1/2) tr(abar D^2 ubar) - psibar f|`` at ``pts`` (zero up to rounding)."""
        lhs = poly.evaluate(poly.diag_operator(self.ubar, self.abar), pts)
        return float(np.max(np.abs(lhs - self.psibar * poly.evaluate(self.f, pts))))


DEFAULT_F = {2: [[1.0, [0, 0]], [1.0, [1, 0]]], 3: [[1.0, [0, 0, 0]], [1.0, [1, 0, 0]]]}
DEFAULT_G = {2: [[1.0, [2, 0]], [-1.0, [0, 2]], [0.5, [1, 1]], [1.0, [4, 0]]],
             3: [[1.0, [2, 0, 0]], [-1.0, [0, 2, 0]], [0.5, [1, 0, 1]], [1.0, [4, 0, 0]]]}


def dirichlet_solution(env: Environment, R: float, prob: HomogenizedProblem, psi, convention: str = "extended"):
    """Solve ``L u = R^{-2} f(x/R) psi(x)`` on ``B_R`` with polynomial boundary data.

    ``convention = "extended"`` uses ``ubar(z/R)`` at boundary sites z;
    ``"radial"`` uses ``g(z/|z|)``.
    """
    d = env.d
    dom = la.ball(np.zeros(d, dtype=np.int64), R, d)
    x = dom.interior / R
    f = poly.evaluate(prob.f, x) * _psi_on(env, psi, dom.interior) / R ** 2
    zb = dom.boundary.astype(float)
    if convention == "extended":
        b = poly.evaluate(prob.ubar, zb / R)
    elif convention == "radial":
        b = poly.evaluate(prob.g, zb / np.linalg.norm(zb, axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown boundary convention {convention!r}")
    return kernel.solve_dirichlet(env, dom, f, b)


def homogenization_error(env, R, prob, psi, convention="extended"):
    u, info = dirichlet_solution(env, R, prob, psi, convention)
    dom = u.domain
    err = np.abs(u.interior_values - poly.evaluate(prob.ubar, dom.interior / R))
    return float(err.max()), info


def two_scale_error(law: EnvironmentLaw, Rs, M: int, seed: int = 0, f=None, g=None, psi="one",
                    convention: str = "extended", abar=None, psibar=None):
    """Median over M environments of ``max_{B_R} |u - ubar(x/R)|`` plus the constant-environment control.

    Returns ``(stochastic RateSeries, control RateSeries, problem)``.  The
    control uses the constant environment ``a = abar`` with the same data.
    """
    if M < 8:
        raise ValueError("two-scale experiments need M >= 8")
    d = law.d
    if abar is None or psibar is None:
        abar, psibar, _ = effective_parameters(law, psi, seed=seed)
    prob = HomogenizedProblem(d, poly.parse(f if f is not None else DEFAULT_F[d], d),
                              poly.parse(g if g is not None else DEFAULT_G[d], d), abar, psibar)
    samples = [[] for _ in Rs]
    for m in range(M):
        env = Environment(law, rng.derive_key(seed, m))
        for j, R in enumerate(Rs):
            samples[j].append(homogenization_error(env, R, prob, psi, convention)[0])
    const_law = EnvironmentLaw(d, min(law.kappa, float(np.min(abar)) / 2), "degenerate-constant",
                               {"value": list(np.asarray(abar) / np.sum(abar))})
    cenv = Environment(const_law, 0)
    # the constant environment has psi(a) = psibar only when psi is constant in a
    cpsi = lambda a: np.full(len(a), psibar)
    control = [[homogenization_error(cenv, R, prob, cpsi, convention)[0]] for R in Rs]
    stoch = RateSeries("homogenization_error", list(Rs), samples, reference_exponent=-1.0)
    ctrl = RateSeries("constant_control", list(Rs), control, reference_exponent=-2.0)
    return stoch, ctrl, prob


# --------------------------------------------------------------------------- global tower

def tower_member(env, R, psi, psibar, K, min_factor=LOC_MIN_FACTOR):
    phi, info = local_corrector(env, R, psi, psibar, K, min_factor=min_factor)
    d = env.d
    zero = np.zeros((1, d), dtype=np.int64)
    phi0 = float(phi(zero)[0])
    grad = None
    if d == 2:
        E = np.eye(d, dtype=np.int64)
        grad = np.array([float(phi(E[i][None, :])[0]) - phi0 for i in range(d)])

    def member(pts):
        pts = np.asarray(pts, dtype=np.int64)
        out = phi(pts) - phi0
        if grad is not None:
            out = out - pts @ grad
        return out
    return member, info


def global_tower(env: Environment, Rs, psi, psibar: float, r: float = 4.0, K: float = LOC_MIN_FACTOR,
                 min_factor: float = LOC_MIN_FACTOR):
    """``max_{B_r} |phi_{R_{i+1}} - phi_{R_i}|`` for the normalized local correctors.

    ``phi_R = phi^loc_R - phi^loc_R(0)``, and in d = 2 additionally minus
    ``x . grad^+ phi^loc_R(0)``.
    """
    Rs = list(Rs)
    if any(b <= a for a, b in zip(Rs, Rs[1:])):
        raise ValueError("R list must be increasing")
    pts = la.ball(np.zeros(env.d, dtype=np.int64), r, env.d).interior
    vals, infos = [], []
    for R in Rs:
        m, info = tower_member(env, R, psi, psibar, K, min_factor)
        vals.append(m(pts))
        infos.append(info)
    diffs = [float(np.max(np.abs(b - a))) for a, b in zip(vals, vals[1:])]
    return {"R": Rs, "differences": diffs, "at_origin": [float(v[np.all(pts == 0, axis=1)][0]) for v in vals],
            "residuals": [i.residual for i in infos]}


# --------------------------------------------------------------------------- QCLT

def ks_distance(samples, sigma: float) -> float:
    """``sup_r |F_hat(r sigma) - Phi(r)|`` for the empirical law of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=float)) / sigma
    n = len(x)
    cdf = norm.cdf(x)
    # both one-sided gaps at every jump; ties are handled by taking the last/first index
    upper = np.searchsorted(x, x, side="right") / n
    lower = np.searchsorted(x, x, side="left") / n
    return float(max(np.max(upper - cdf), np.max(cdf - lower)))


def qclt_check(env: Environment, ns, abar, direction=None, n_paths: int = 100_000, seed: int = 0,
               min_distance: float = 0.01):
    """Kolmogorov distance of ``X_n . l / sqrt(n)`` from ``N(0, l^T abar l)`` per n, and the variance ratio."""
    from .walk import positions_at

    if n_paths < 10 * min_distance ** -2:
        raise ValueError(f"N = {n_paths} too small to resolve distance {min_distance} (need >= 10 / distance^2)")
    d = env.d
    l = np.eye(d)[0] if direction is None else np.asarray(direction, dtype=float)
    l = l / np.linalg.norm(l)
    s2 = float(l @ np.diag(np.asarray(abar, dtype=float)) @ l) if np.ndim(abar) == 1 else float(l @ abar @ l)
    pos = positions_at(env, np.zeros(d, dtype=np.int64), ns, n_paths, seed)
    out = {"n": list(ns), "ks": [], "var_ratio": [], "envelope": []}
    for n, p in zip(sorted(ns), pos):
        proj = p @ l / np.sqrt(n)
        out["ks"].append(ks_distance(proj, np.sqrt(s2)))
        out["var_ratio"].append(float(np.mean(proj ** 2) / s2))
        out["envelope"].append(rate_function("nu", n, d) ** 0.2)
    return out
