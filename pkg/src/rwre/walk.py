"""Monte Carlo engines for the walk in a balanced environment.

All randomness comes from the counter-based generator keyed by
``(seed, path index, step, slot)``, so every path is reproducible on its
own and estimates do not depend on batch sizes or scheduling.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import rng
from .env import Environment

MAX_STEPS = 10_000_000
BATCH = 50_000

# stream slots
_STEP, _CLOCK, _HOLD, _GEOM = 0, 1, 2, 3


@dataclass
class MCEstimate:
    quantity: str
    mean: float
    stderr: float
    n_paths: int
    seed: int
    x: list | None = None

    @classmethod
    def from_samples(cls, quantity, samples, seed, x=None):
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        return cls(quantity, float(samples.mean()), se, n, int(seed), None if x is None else list(map(int, x)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def agrees(self, value, nsigma=3.0, other_stderr=0.0) -> bool:
        return abs(self.mean - value) <= nsigma * np.hypot(self.stderr, other_stderr)


@dataclass
class WalkPath:
    start: np.ndarray
    steps: np.ndarray  # (n, d) unit vectors
    holding: np.ndarray | None
    seed: int
    path_id: int

    @property
    def positions(self):
        return self.start + np.concatenate([np.zeros((1, len(self.start)), dtype=np.int64),
                                            np.cumsum(self.steps, axis=0)])


class SiteCache:
    """Dense window of environment values for fast lookups by walkers."""

    def __init__(self, env: Environment, center, halfwidth: int = 64):
        self.env = env
        self.d = env.d
        if env.period is not None:
            self.values = env.torus_values().reshape(-1, self.d)
            self._shape = (env.period,) * self.d
        else:
            self._build(np.asarray(center, dtype=np.int64), int(halfwidth))

    def _build(self, center, halfwidth):
        self.lo = center - halfwidth
        self._shape = (2 * halfwidth + 1,) * self.d
        self.halfwidth = halfwidth
        self.center = center
        self.values = self.env.box_values(self.lo, self._shape).reshape(-1, self.d)

    def __call__(self, pos):
        if self.env.period is not None:
            return self.values[np.ravel_multi_index(tuple(np.mod(pos, self.env.period).T), self._shape)]
        rel = pos - self.lo
        if rel.size and (rel.min() < 0 or rel.max() >= self._shape[0]):
            need = int(np.abs(pos - self.center).max()) + 1
            self._build(self.center, max(2 * self.halfwidth, need + 16))
            rel = pos - self.lo
        return self.values[np.ravel_multi_index(tuple(rel.T), self._shape)]


def _steps_from_uniform(a, u):
    """Unit-step choice: +-e_i each with probability a_i / 2."""
    cum = np.cumsum(a, axis=1)
    i = np.minimum((cum < u[:, None]).sum(axis=1), a.shape[1] - 1)
    lower = np.take_along_axis(cum, i[:, None], axis=1)[:, 0] - a[np.arange(len(u)), i]
    sign = np.where((u - lower) < 0.5 * a[np.arange(len(u)), i], 1, -1)
    return i, sign


def _advance(pos, a, u):
    i, sign = _steps_from_uniform(a, u)
    pos[np.arange(len(pos)), i] += sign
    return pos


def run_discrete(env: Environment, start, n: int, seed: int = 0, path_id: int = 0,
                 continuous: bool = False) -> WalkPath:
    """One path of ``n`` steps of the discrete walk (with Exp(1) holding times if ``continuous``)."""
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    start = np.asarray(start, dtype=np.int64)
    cache = SiteCache(env, start, halfwidth=int(4 * np.sqrt(n + 1)) + 8)
    pos = start[None, :].copy()
    steps = np.zeros((n, env.d), dtype=np.int64)
    ids = np.array([path_id], dtype=np.int64)
    for k in range(n):
        u = rng.uniform(seed, ids, np.int64(k), np.int64(_STEP))
        new = _advance(pos.copy(), cache(pos), u)
        steps[k] = new[0] - pos[0]
        pos = new
    hold = None
    if continuous:
        hold = -np.log(rng.uniform(seed, np.int64(path_id), np.arange(n + 1, dtype=np.int64), np.int64(_HOLD)))
    return WalkPath(start, steps, hold, int(seed), int(path_id))


def positions_at(env: Environment, start, times, n_paths: int, seed: int = 0, batch: int = BATCH,
                 compiled: bool = True):
    """Positions of ``n_paths`` independent walks at the requested step counts.

    Returns an array of shape (len(times), n_paths, d).  The compiled loop
    and the NumPy loop produce identical output.
    """
    times = sorted(int(t) for t in times)
    start = np.asarray(start, dtype=np.int64)
    cache = SiteCache(env, start, halfwidth=int(5 * np.sqrt(times[-1] + 1)) + 8)
    if compiled:
        from . import _fastwalk

        key = np.uint64(int(seed) & rng.MASK64)
        while True:
            period = env.period or 0
            lo = np.zeros(env.d, dtype=np.int64) if period else cache.lo
            out, ok = _fastwalk.positions(cache.values, lo, cache._shape[0], period, start,
                                          np.asarray(times, dtype=np.int64), 0, n_paths, key, _STEP)
            if ok:
                return out
            cache._build(cache.center, 2 * cache.halfwidth)
    out = np.zeros((len(times), n_paths, env.d), dtype=np.int64)
    for b0 in range(0, n_paths, batch):
        ids = np.arange(b0, min(n_paths, b0 + batch), dtype=np.int64)
        pos = np.tile(start, (len(ids), 1))
        j = 0
        for k in range(times[-1] + 1):
            while j < len(times) and times[j] == k:
                out[j, ids] = pos
                j += 1
            if k == times[-1]:
                break
            u = rng.uniform(seed, ids, np.int64(k), np.int64(_STEP))
            pos = _advance(pos, cache(pos), u)
    return out


def exit_samples(env: Environment, start, R: float, n_paths: int, seed: int = 0, center=None,
                 batch: int = BATCH, max_steps: int = MAX_STEPS):
    """Exit times from ``B_R(center)`` and exit positions for ``n_paths`` walks."""
    start = np.asarray(start, dtype=np.int64)
    center = np.zeros(env.d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    if np.sum((start - center) ** 2) >= R * R:
        raise ValueError("start must lie in the ball")
    tau = np.zeros(n_paths, dtype=np.int64)
    exitpos = np.zeros((n_paths, env.d), dtype=np.int64)
    cache = SiteCache(env, center, halfwidth=int(np.ceil(R)) + 2)
    for b0 in range(0, n_paths, batch):
        ids = np.arange(b0, min(n_paths, b0 + batch), dtype=np.int64)
        pos = np.tile(start, (len(ids), 1))
        alive = np.ones(len(ids), dtype=bool)
        k = 0
        while alive.any():
            if k > max_steps:
                raise RuntimeError(f"exit-time path exceeded {max_steps} steps")
            idx = np.flatnonzero(alive)
            p = pos[idx]
            u = rng.uniform(seed, ids[idx], np.int64(k), np.int64(_STEP))
            p = _advance(p, cache(p), u)
            pos[idx] = p
            k += 1
            out = np.sum((p - center) ** 2, axis=1) >= R * R
            done = idx[out]
            tau[ids[done]] = k
            exitpos[ids[done]] = p[out]
            alive[done] = False
    return tau, exitpos


def exit_time(env: Environment, start, R: float, n_paths: int, seed: int = 0, center=None) -> MCEstimate:
    """Estimate of ``E^start[tau(B_R)]``."""
    tau, _ = exit_samples(env, start, R, n_paths, seed, center)
    return MCEstimate.from_samples("exit_time", tau, seed, start)


def killing_probability(eta_values, R: float):
    """Per-visit ring probability ``eta / (R^2 + eta)``."""
    eta_values = np.asarray(eta_values, dtype=float)
    return eta_values / (R * R + eta_values)


def _eta_fn(eta):
    if eta is None:
        return lambda p: np.ones(len(p))
    if callable(eta):
        return eta
    return lambda p: np.full(len(p), float(eta))


def killed_walk(env: Environment, eta, R: float, start, n_paths: int, seed: int = 0, psi=None,
                exit_radius: float | None = None, center=None,
                batch: int = BATCH, max_steps: int = MAX_STEPS, compiled: bool = True):
    """Run walks until the geometric clock ``T(eta)`` rings.

    Returns ``(T, maxdist, acc)``: the clock time, the largest distance from
    ``start`` reached strictly before ``T`` (``-1`` when ``T = 0``), and, if
    ``psi`` is given, ``sum_{n <= T} (1 - eta~(X_n)) psi(a(X_n))`` per path.
    With ``exit_radius`` the walk is also stopped (without contributing) on
    leaving ``B_{exit_radius}(center)``, matching a zero-exterior ball solve.
    """
    start = np.asarray(start, dtype=np.int64)
    center = np.zeros(env.d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    eta_fn = _eta_fn(eta)
    cache = SiteCache(env, start, halfwidth=int(6 * R) + 8)
    if compiled and _window_ok(cache, exit_radius, env.d):
        return _killed_compiled(env, cache, eta_fn, R, start, center, n_paths, seed, psi, exit_radius, max_steps)
    T = np.zeros(n_paths, dtype=np.int64)
    maxdist = np.full(n_paths, -1.0)
    acc = np.zeros(n_paths)
    for b0 in range(0, n_paths, batch):
        ids = np.arange(b0, min(n_paths, b0 + batch), dtype=np.int64)
        pos = np.tile(start, (len(ids), 1))
        alive = np.ones(len(ids), dtype=bool)
        k = 0
        while alive.any():
            if k > max_steps:
                raise RuntimeError(f"killed walk exceeded {max_steps} steps; check the killing field")
            idx = np.flatnonzero(alive)
            p = pos[idx]
            if exit_radius is not None:
                out = np.sum((p - center) ** 2, axis=1) >= exit_radius ** 2
                if out.any():
                    T[ids[idx[out]]] = k
                    alive[idx[out]] = False
                    idx, p = idx[~out], p[~out]
                    if not len(idx):
                        break
            a = cache(p)
            ring_p = killing_probability(eta_fn(p), R)
            if psi is not None:
                acc[ids[idx]] += (1 - ring_p) * psi(a)
            ring = rng.uniform(seed, ids[idx], np.int64(k), np.int64(_CLOCK)) < ring_p
            dead = idx[ring]
            T[ids[dead]] = k
            alive[dead] = False
            live = ~ring
            idx, p, a = idx[live], p[live], a[live]
            dist = np.sqrt(np.sum((p - start) ** 2, axis=1))
            maxdist[ids[idx]] = np.maximum(maxdist[ids[idx]], dist)
            u = rng.uniform(seed, ids[idx], np.int64(k), np.int64(_STEP))
            pos[idx] = _advance(p, a, u)
            k += 1
    return T, maxdist, acc


WINDOW_MAX_SITES = 20_000_000


def _window_ok(cache, exit_radius, d):
    if cache.env.period is not None:
        return True
    if exit_radius is not None and exit_radius + 2 > cache.halfwidth:
        cache._build(cache.center, int(np.ceil(exit_radius)) + 2)
    return cache.values.shape[0] <= WINDOW_MAX_SITES


def _window_points(cache):
    if cache.env.period is not None:
        L, d = cache.env.period, cache.env.d
        grids = np.meshgrid(*[np.arange(L, dtype=np.int64)] * d, indexing="ij")
        return np.stack(grids, -1).reshape(-1, d)
    grids = np.meshgrid(*[np.arange(l, l + n, dtype=np.int64) for l, n in zip(cache.lo, cache._shape)], indexing="ij")
    return np.stack(grids, -1).reshape(-1, cache.d)


def _killed_compiled(env, cache, eta_fn, R, start, center, n_paths, seed, psi, exit_radius, max_steps):
    from . import _fastwalk

    key = np.uint64(int(seed) & rng.MASK64)
    while True:
        pts = _window_points(cache)
        eta_w = np.asarray(eta_fn(pts), dtype=float)
        psi_w = np.zeros(len(pts)) if psi is None else np.asarray(psi(cache.values), dtype=float)
        period = env.period or 0
        lo = np.zeros(env.d, dtype=np.int64) if period else cache.lo
        T, maxd, acc, status = _fastwalk.killed(
            cache.values, eta_w, psi_w, lo, cache._shape[0], period, float(R * R), start, center,
            -1.0 if exit_radius is None else float(exit_radius) ** 2, 0, n_paths, key, _STEP, _CLOCK, max_steps)
        if status == 0:
            return T, maxd, acc
        if status == 2:
            raise RuntimeError(f"killed walk exceeded {max_steps} steps; check the killing field")
        if 2 * cache.halfwidth + 1 > round(WINDOW_MAX_SITES ** (1 / env.d)):
            raise RuntimeError("killed walk left the largest admissible environment window")
        cache._build(cache.center, 2 * cache.halfwidth)


def killed_time(env: Environment, eta, R: float, start, n_paths: int, seed: int = 0, ks=()):
    """MC estimates of ``E[T]`` and ``P(T > tau_k)`` (exit of ``B_{kR}(start)`` before the clock)."""
    T, maxdist, _ = killed_walk(env, eta, R, start, n_paths, seed)
    out = {"T": MCEstimate.from_samples("killed_time", T, seed, start)}
    for k in ks:
        out[k] = MCEstimate.from_samples(f"P(T>tau_{k})", (maxdist >= k * R).astype(float), seed, start)
    return out


def mc_local_corrector(env: Environment, eta, R: float, psi, psibar: float, x, n_paths: int,
                       seed: int = 0, exit_radius: float | None = None) -> MCEstimate:
    """``-E^x[sum_{n<=T} (1 - eta~(X_n)) (psi - psibar)(X_n)]`` by simulation.

    ``psi`` maps weight vectors ``a`` (n, d) to values.  ``exit_radius``
    stops walks on leaving the centered ball, as in the truncated solve.
    """
    _, _, acc = killed_walk(env, eta, R, x, n_paths, seed, psi=lambda a: psi(a) - psibar,
                            exit_radius=exit_radius)
    return MCEstimate.from_samples("phi_loc", -acc, seed, x)


def mc_approx_corrector(env: Environment, R: float, psi, psibar: float, x, n_paths: int,
                        seed: int = 0, batch: int = BATCH, compiled: bool = True) -> MCEstimate:
    """``-R^2 E^x[psi(Y_tau) - psibar]`` with ``tau ~ Exp(mean R^2)``.

    The number of jumps before ``tau`` is geometric with success
    probability ``1/(R^2 + 1)``, so the embedded chain is run that long.
    """
    x = np.asarray(x, dtype=np.int64)
    vals = np.zeros(n_paths)
    q = 1.0 / (R * R + 1.0)
    cache = SiteCache(env, x, halfwidth=int(6 * R) + 8)
    if compiled:
        from . import _fastwalk

        ids = np.arange(n_paths, dtype=np.int64)
        u = rng.uniform(seed, ids, np.int64(0), np.int64(_GEOM))
        nsteps = np.floor(np.log(u) / np.log1p(-q)).astype(np.int64)
        if nsteps.max() > MAX_STEPS:
            raise RuntimeError("geometric horizon exceeded the step cap")
        key = np.uint64(int(seed) & rng.MASK64)
        while True:
            period = env.period or 0
            lo = np.zeros(env.d, dtype=np.int64) if period else cache.lo
            end = _fastwalk.geometric_endpoints(cache.values, lo, cache._shape[0], period, x, nsteps, 0, key, _STEP)
            if np.all(end >= 0):
                vals = -R * R * (psi(cache.values[end]) - psibar)
                return MCEstimate.from_samples("phi_ap", vals, seed, x)
            cache._build(cache.center, 2 * cache.halfwidth)
    for b0 in range(0, n_paths, batch):
        ids = np.arange(b0, min(n_paths, b0 + batch), dtype=np.int64)
        u = rng.uniform(seed, ids, np.int64(0), np.int64(_GEOM))
        nsteps = np.floor(np.log(u) / np.log1p(-q)).astype(np.int64)
        if nsteps.max() > MAX_STEPS:
            raise RuntimeError("geometric horizon exceeded the step cap")
        pos = np.tile(x, (len(ids), 1))
        for k in range(int(nsteps.max())):
            idx = np.flatnonzero(nsteps > k)
            p = pos[idx]
            uu = rng.uniform(seed, ids[idx], np.int64(k), np.int64(_STEP))
            pos[idx] = _advance(p, cache(p), uu)
        vals[ids] = -R * R * (psi(cache(pos)) - psibar)
    return MCEstimate.from_samples("phi_ap", vals, seed, x)


def occupation_frequencies(env: Environment, n_steps: int, seed: int = 0, start=None, n_paths: int = 1,
                           burn_in: int = 0, first_path: int = 0):
    """Visit counts per torus site from ``n_paths`` walks (torus only).

    Each walk runs ``burn_in + n_steps`` steps; only the last ``n_steps``
    positions are counted.
    """
    if env.period is None:
        raise ValueError("occupation frequencies need a torus environment")
    L, d = env.period, env.d
    cache = SiteCache(env, None)
    counts = np.zeros(L ** d, dtype=np.int64)
    pos = np.zeros((n_paths, d), dtype=np.int64) if start is None else np.tile(np.asarray(start), (n_paths, 1))
    ids = np.arange(first_path, first_path + n_paths, dtype=np.int64)
    for k in range(burn_in + n_steps):
        if k >= burn_in:
            counts += np.bincount(np.ravel_multi_index(tuple(pos.T), (L,) * d), minlength=L ** d)
        u = rng.uniform(seed, ids, np.int64(k), np.int64(_STEP))
        pos = np.mod(_advance(pos, cache(pos), u), L)
    return counts
