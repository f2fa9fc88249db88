"""Lattice geometry, finite differences and the polynomial-oscillation functional."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

LP_TOL = 1e-10


def unit_vectors(d: int) -> np.ndarray:
    """The 2d unit vectors, ordered e_1, -e_1, e_2, -e_2, ..."""
    eye = np.eye(d, dtype=np.int64)
    return np.stack([s * eye[i] for i in range(d) for s in (1, -1)])


class LatticeDomain:
    """Finite set of lattice points split into interior and discrete boundary.

    ``points`` lists the interior first, then the boundary; ``index`` maps
    points back to rows (``-1`` when absent).  For a torus every point is
    interior and neighbor lookups wrap.
    """

    def __init__(self, kind, d, interior, boundary, center=None, radius=None, period=None):
        self.kind = kind
        self.d = d
        self.center = None if center is None else np.asarray(center, dtype=np.int64)
        self.radius = radius
        self.period = period
        interior = np.asarray(interior, dtype=np.int64).reshape(-1, d)
        boundary = np.asarray(boundary, dtype=np.int64).reshape(-1, d)
        self.points = np.concatenate([interior, boundary])
        self.n_interior = len(interior)
        if period is None:
            self._lo = self.points.min(axis=0) - 1
            shape = self.points.max(axis=0) - self._lo + 2
            self._lookup = np.full(tuple(shape), -1, dtype=np.int32 if len(self.points) < 2**31 else np.int64)
            self._lookup[tuple((self.points - self._lo).T)] = np.arange(len(self.points))
            if np.count_nonzero(self._lookup >= 0) != len(self.points):
                raise ValueError("domain points must be distinct")

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        extra = f"R={self.radius}" if self.radius is not None else f"L={self.period}"
        return f"LatticeDomain({self.kind}, d={self.d}, {extra}, interior={self.n_interior}, boundary={self.n_boundary})"

    @property
    def interior(self):
        return self.points[: self.n_interior]

    @property
    def boundary(self):
        return self.points[self.n_interior:]

    @property
    def n_boundary(self):
        return len(self.points) - self.n_interior

    def index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.int64)
        if self.period is not None:
            return np.ravel_multi_index(tuple(np.mod(pts, self.period).reshape(-1, self.d).T),
                                        (self.period,) * self.d).reshape(pts.shape[:-1])
        rel = pts - self._lo
        shape = np.array(self._lookup.shape)
        inside = np.all((rel >= 0) & (rel < shape), axis=-1)
        out = np.full(pts.shape[:-1], -1, dtype=np.int64)
        out[inside] = self._lookup[tuple(rel[inside].T)]
        return out

    def contains(self, pts) -> np.ndarray:
        return self.index(pts) >= 0

    def neighbor_table(self, rows=None) -> np.ndarray:
        """Row indices of the 2d neighbors (order of :func:`unit_vectors`), -1 if absent."""
        pts = self.points if rows is None else self.points[rows]
        return self.index(pts[:, None, :] + unit_vectors(self.d)[None, :, :])


def _ball_interior(center, R, d):
    r = int(np.ceil(R))
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid.astype(float) ** 2).sum(axis=1) < R * R
    return grid[keep] + np.asarray(center, dtype=np.int64)


def _outer_boundary(interior, d):
    lo = interior.min(axis=0) - 1
    shape = tuple(interior.max(axis=0) - lo + 2)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple((interior - lo).T)] = True
    grown = mask.copy()
    for i in range(d):
        grown[(slice(None),) * i + (slice(1, None),)] |= mask[(slice(None),) * i + (slice(None, -1),)]
        grown[(slice(None),) * i + (slice(None, -1),)] |= mask[(slice(None),) * i + (slice(1, None),)]
    return np.argwhere(grown & ~mask).astype(np.int64) + lo


def ball(center, R: float, d: int | None = None) -> LatticeDomain:
    """Discrete ball ``{x : |x - center| < R}`` with its discrete boundary."""
    if R <= 0:
        raise ValueError("radius must be positive")
    center = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    d = len(center) if d is None else d
    interior = _ball_interior(center, R, d)
    return LatticeDomain("ball", d, interior, _outer_boundary(interior, d), center=center, radius=R)


def box(lo, shape) -> LatticeDomain:
    """Box ``lo + [0, shape)`` with its discrete boundary (faces, no corners)."""
    lo = np.asarray(lo, dtype=np.int64)
    d = len(lo)
    grids = np.meshgrid(*[np.arange(l, l + n) for l, n in zip(lo, shape)], indexing="ij")
    interior = np.stack(grids, axis=-1).reshape(-1, d)
    return LatticeDomain("box", d, interior, _outer_boundary(interior, d), center=lo)


def torus(L: int, d: int) -> LatticeDomain:
    grids = np.meshgrid(*[np.arange(L)] * d, indexing="ij")
    pts = np.stack(grids, axis=-1).reshape(-1, d)
    return LatticeDomain("torus", d, pts, np.empty((0, d), dtype=np.int64), period=L)


@dataclass
class ScalarField:
    """Real values indexed by the rows of a :class:`LatticeDomain`."""

    domain: LatticeDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.domain),):
            raise ValueError(f"expected {len(self.domain)} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def from_function(cls, domain, fn):
        return cls(domain, fn(domain.points))

    def __call__(self, pts):
        idx = self.domain.index(pts)
        if np.any(idx < 0):
            bad = np.asarray(pts)[idx < 0] if np.ndim(idx) else np.asarray(pts)
            raise KeyError(f"points outside the field's domain: {np.atleast_2d(bad)[:3].tolist()}")
        return self.values[idx]

    @property
    def interior_values(self):
        return self.values[: self.domain.n_interior]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.domain.d)] + ["value"])
            for p, v in zip(self.domain.points.tolist(), self.values.tolist()):
                w.writerow(p + [repr(v)])


def read_field_csv(path, domain: LatticeDomain) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pts = data[:, :-1].astype(np.int64)
    values = np.zeros(len(domain))
    idx = domain.index(pts)
    if np.any(idx < 0):
        raise ValueError("CSV contains points outside the domain")
    values[idx] = data[:, -1]
    return ScalarField(domain, values)


def nabla(u: ScalarField, x, e) -> float:
    """Forward difference ``u(x + e) - u(x)``."""
    x = np.asarray(x, dtype=np.int64)
    return float(u(x + np.asarray(e, dtype=np.int64)) - u(x))


def nabla2(u: ScalarField, x, i: int) -> float:
    """Second difference ``u(x + e_i) + u(x - e_i) - 2 u(x)`` (``i`` zero-based)."""
    x = np.asarray(x, dtype=np.int64)
    e = np.eye(len(x), dtype=np.int64)[i]
    return float(u(x + e) + u(x - e) - 2 * u(x))


def nabla2_mixed(u: ScalarField, x, e, l) -> float:
    """``-nabla_e nabla_l u(x)``."""
    x = np.asarray(x, dtype=np.int64)
    e = np.asarray(e, dtype=np.int64)
    l = np.asarray(l, dtype=np.int64)
    return float(-(u(x + e + l) - u(x + e) - u(x + l) + u(x)))


def monomial_exponents(d: int, degree: int):
    return [m for k in range(degree + 1) for m in itertools.product(range(k + 1), repeat=d) if sum(m) == k]


def polynomial_design(points, degree: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    exps = monomial_exponents(pts.shape[1], degree)
    return np.stack([np.prod(pts ** np.asarray(m), axis=1) for m in exps], axis=1)


def chebyshev_deviation(points, values, degree: int) -> float:
    """``inf_p max |values - p(points)|`` over polynomials of total degree <= degree.

    Solved as a linear program; raises ``ValueError`` if the points do not
    determine a polynomial of that degree (rank-deficient design).
    """
    values = np.asarray(values, dtype=float)
    if degree < 0:
        return float(np.max(np.abs(values)))
    pts = np.asarray(points, dtype=float)
    scale = max(1.0, float(np.abs(pts - pts.mean(axis=0)).max()))
    X = polynomial_design((pts - pts.mean(axis=0)) / scale, degree)
    m = X.shape[1]
    if np.linalg.matrix_rank(X) < m:
        raise ValueError(f"point set is degenerate for degree-{degree} polynomials (rank < {m})")
    vscale = max(1.0, float(np.abs(values).max()))
    v = values / vscale
    # variables: (coefficients, t); minimize t s.t. |v - X c| <= t
    ones = np.ones((len(v), 1))
    A = np.block([[X, -ones], [-X, -ones]])
    b = np.concatenate([v, -v])
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * m + [(0, None)], method="highs",
                  options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL})
    if not res.success:
        raise RuntimeError(f"Chebyshev LP failed: {res.message}")
    return float(res.x[-1] * vscale)


def osc_der(u: ScalarField, A, j: int) -> float:
    """``D^j_A(u)``: distance in sup norm on A from polynomials of degree j - 1."""
    if j not in (1, 2, 3):
        raise ValueError("order j must be 1, 2 or 3")
    A = np.asarray(A, dtype=np.int64)
    return chebyshev_deviation(A, u(A), j - 1)


def osc_der_normalized(u: ScalarField, R: float, j: int, center=None) -> float:
    """``D^j_{B_R}(u) / R^j``."""
    d = u.domain.d
    pts = _ball_interior(np.zeros(d, dtype=np.int64) if center is None else center, R, d)
    return osc_der(u, pts, j) / R ** j
