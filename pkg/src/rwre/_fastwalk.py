"""Compiled walker loop for long horizons.

Reproduces, bit for bit, the step rule and the counter-based stream of
:mod:`rwre.walk` (same hash chain, same floating-point operations), so it
is a drop-in replacement for the vectorized NumPy loop.
"""
import numba as nb
import numpy as np

_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


@nb.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def _uniform(key, w1, w2, w3):
    h = _mix(key + _G)
    h = _mix(h ^ _mix(np.uint64(w1) + _G))
    h = _mix(h ^ _mix(np.uint64(w2) + _G))
    h = _mix(h ^ _mix(np.uint64(w3) + _G))
    return (float(h >> _S11) + 0.5) * _INV53


@nb.njit(cache=True)
def positions(values, lo, side, period, start, times, first_path, n_paths, key, slot):
    """Walk ``n_paths`` paths and record positions at ``times`` (sorted).

    ``values`` is the flattened window ``lo + [0, side)^d`` (or the whole
    torus when ``period > 0``).  Returns ``(out, ok)``; ``ok`` is False if a
    walker left the window.
    """
    d = start.shape[0]
    nt = times.shape[0]
    out = np.zeros((nt, n_paths, d), dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    cum = np.zeros(d)
    tmax = times[nt - 1]
    for p in range(n_paths):
        for i in range(d):
            pos[i] = start[i]
        j = 0
        for k in range(tmax + 1):
            while j < nt and times[j] == k:
                for i in range(d):
                    out[j, p, i] = pos[i]
                j += 1
            if k == tmax:
                break
            idx = 0
            for i in range(d):
                if period > 0:
                    c = pos[i] % period
                else:
                    c = pos[i] - lo[i]
                    if c < 0 or c >= side:
                        return out, False
                idx = idx * side + c
            s = 0.0
            for i in range(d):
                s += values[idx, i]
                cum[i] = s
            u = _uniform(key, first_path + p, k, slot)
            n_below = 0
            for i in range(d):
                if cum[i] < u:
                    n_below += 1
            i = min(n_below, d - 1)
            lower = cum[i] - values[idx, i]
            if (u - lower) < 0.5 * values[idx, i]:
                pos[i] += 1
            else:
                pos[i] -= 1
    return out, True


@nb.njit(cache=True, inline="always")
def _site(pos, lo, side, period):
    d = pos.shape[0]
    idx = 0
    for i in range(d):
        if period > 0:
            c = pos[i] % period
        else:
            c = pos[i] - lo[i]
            if c < 0 or c >= side:
                return -1
        idx = idx * side + c
    return idx


@nb.njit(cache=True, inline="always")
def _step(pos, values, idx, u, cum):
    d = pos.shape[0]
    s = 0.0
    for i in range(d):
        s += values[idx, i]
        cum[i] = s
    n_below = 0
    for i in range(d):
        if cum[i] < u:
            n_below += 1
    i = min(n_below, d - 1)
    lower = cum[i] - values[idx, i]
    if (u - lower) < 0.5 * values[idx, i]:
        pos[i] += 1
    else:
        pos[i] -= 1


@nb.njit(cache=True)
def killed(values, eta, psi, lo, side, period, R2, start, center, exit_r2, first_path, n_paths, key,
           slot_step, slot_clock, max_steps):
    """Geometric-clock walks; mirrors ``rwre.walk.killed_walk``.

    Returns ``(T, maxdist, acc, status)`` with status 0 = ok, 1 = left the
    window, 2 = step cap exceeded.
    """
    d = start.shape[0]
    T = np.zeros(n_paths, dtype=np.int64)
    maxd = np.full(n_paths, -1.0)
    acc = np.zeros(n_paths)
    pos = np.zeros(d, dtype=np.int64)
    cum = np.zeros(d)
    for p in range(n_paths):
        for i in range(d):
            pos[i] = start[i]
        k = 0
        while True:
            if k > max_steps:
                return T, maxd, acc, 2
            if exit_r2 >= 0:
                r2 = 0.0
                for i in range(d):
                    r2 += float((pos[i] - center[i]) ** 2)
                if r2 >= exit_r2:
                    T[p] = k
                    break
            idx = _site(pos, lo, side, period)
            if idx < 0:
                return T, maxd, acc, 1
            e = eta[idx]
            ring_p = e / (R2 + e)
            acc[p] += (1 - ring_p) * psi[idx]
            if _uniform(key, first_path + p, k, slot_clock) < ring_p:
                T[p] = k
                break
            r2 = 0.0
            for i in range(d):
                r2 += float((pos[i] - start[i]) ** 2)
            dist = np.sqrt(r2)
            if dist > maxd[p]:
                maxd[p] = dist
            _step(pos, values, idx, _uniform(key, first_path + p, k, slot_step), cum)
            k += 1
    return T, maxd, acc, 0


@nb.njit(cache=True)
def geometric_endpoints(values, lo, side, period, start, nsteps, first_path, key, slot_step):
    """Endpoint window indices after ``nsteps[p]`` steps of path p (-1 if the window is left)."""
    d = start.shape[0]
    n_paths = nsteps.shape[0]
    end = np.zeros(n_paths, dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    cum = np.zeros(d)
    for p in range(n_paths):
        for i in range(d):
            pos[i] = start[i]
        left = False
        for k in range(nsteps[p]):
            idx = _site(pos, lo, side, period)
            if idx < 0:
                left = True
                break
            _step(pos, values, idx, _uniform(key, first_path + p, k, slot_step), cum)
        end[p] = -1 if left else _site(pos, lo, side, period)
    return end
