"""Small multivariate polynomial toolkit for closed-form homogenized solutions.

A polynomial is a dict mapping exponent tuples to coefficients.
"""
from __future__ import annotations

import itertools

import numpy as np


def monomials(d: int, degree: int):
    return [e for k in range(degree + 1) for e in itertools.product(range(k + 1), repeat=d) if sum(e) == k]


def degree(p: dict) -> int:
    return max((sum(e) for e, c in p.items() if c != 0), default=0)


def add(p: dict, q: dict, s: float = 1.0) -> dict:
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, 0.0) + s * c
    return {e: c for e, c in out.items() if c != 0}


def mul(p: dict, q: dict) -> dict:
    out = {}
    for (e1, c1), (e2, c2) in itertools.product(p.items(), q.items()):
        e = tuple(a + b for a, b in zip(e1, e2))
        out[e] = out.get(e, 0.0) + c1 * c2
    return {e: c for e, c in out.items() if c != 0}


def deriv(p: dict, i: int, order: int = 1) -> dict:
    out = {}
    for e, c in p.items():
        if e[i] >= order:
            f = np.prod(np.arange(e[i] - order + 1, e[i] + 1))
            e2 = list(e)
            e2[i] -= order
            out[tuple(e2)] = out.get(tuple(e2), 0.0) + c * f
    return out


def evaluate(p: dict, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for e, c in p.items():
        out = out + c * np.prod(x ** np.asarray(e), axis=-1)
    return out


def constant(d: int, c: float) -> dict:
    return {(0,) * d: float(c)}


def norm_sq_minus_one(d: int) -> dict:
    p = {(0,) * d: -1.0}
    for i in range(d):
        e = [0] * d
        e[i] = 2
        p[tuple(e)] = 1.0
    return p


def diag_operator(p: dict, abar) -> dict:
    """``(1/2) sum_k abar_k d^2 p / dx_k^2``."""
    out = {}
    for k, ak in enumerate(abar):
        out = add(out, deriv(p, k, 2), 0.5 * ak)
    return out


def parse(spec, d: int) -> dict:
    """Accept a dict of exponent tuples, a list of ``[coef, [exponents]]`` pairs, or a number."""
    if isinstance(spec, (int, float)):
        return constant(d, spec)
    if isinstance(spec, dict):
        return {tuple(int(v) for v in e): float(c) for e, c in spec.items()}
    out = {}
    for c, e in spec:
        e = tuple(int(v) for v in e)
        if len(e) != d:
            raise ValueError(f"exponent {e} does not have length {d}")
        out[e] = out.get(e, 0.0) + float(c)
    return out


def to_list(p: dict):
    return [[c, list(e)] for e, c in sorted(p.items())]


def solve_ball_dirichlet(f: dict, g: dict, abar, psibar: float, d: int) -> dict:
    """Polynomial ``u`` with ``(1/2) tr(abar D^2 u) = psibar f`` in the unit ball and ``u = g`` on its sphere.

    Writes ``u = g + (|x|^2 - 1) q`` and solves for the coefficients of ``q``.
    The linear map ``q -> diag_operator((|x|^2 - 1) q)`` preserves degree and
    is injective by the maximum principle, so the square system is regular.
    """
    h = add(mul(f, constant(d, psibar)), diag_operator(g, abar), -1.0)
    m = degree(h)
    basis = monomials(d, m)
    pos = {e: i for i, e in enumerate(basis)}
    w = norm_sq_minus_one(d)
    A = np.zeros((len(basis), len(basis)))
    for j, e in enumerate(basis):
        img = diag_operator(mul(w, {e: 1.0}), abar)
        for e2, c in img.items():
            A[pos[e2], j] += c
    rhs = np.zeros(len(basis))
    for e, c in h.items():
        rhs[pos[e]] += c
    coef = np.linalg.solve(A, rhs)
    q = {e: float(c) for e, c in zip(basis, coef) if abs(c) > 1e-15}
    return add(g, mul(w, q))
