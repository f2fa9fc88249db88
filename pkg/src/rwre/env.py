"""I.i.d. balanced environments on Z^d (or a periodic torus).

An environment stores, for each site ``x``, the diagonal of the normalized
weight matrix ``a(x) = omega(x) / tr omega(x)``.  Values are never stored:
they are recomputed from the counter-based generator keyed by the master
seed and the site coordinates, which makes shifting, single-site resampling
and lazy evaluation over arbitrary windows order independent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng

FAMILIES = ("kappa-padded-dirichlet", "two-point", "degenerate-constant")


@dataclass(frozen=True)
class EnvironmentLaw:
    """Sampling law of ``a(0)``.

    ``params`` depends on ``family``:

    * ``kappa-padded-dirichlet``: optional ``weights`` (length d, positive);
      ``a_i = 2 kappa + (1 - 2 d kappa) w_i`` with ``w`` on the simplex,
      uniform when all weights are equal.
    * ``two-point``: ``atoms`` (two admissible vectors) and ``p``, the
      probability of the first atom.
    * ``degenerate-constant``: optional ``value`` (defaults to ``1/d``).
    """

    d: int
    kappa: float
    family: str = "kappa-padded-dirichlet"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d, kappa = self.d, self.kappa
        if int(d) != d or d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {d}")
        if not 0 < kappa <= 1 / (2 * d) + 1e-15:
            raise ValueError(f"kappa must lie in (0, 1/(2d)] = (0, {1 / (2 * d)}], got {kappa}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        p = dict(self.params)
        if self.family == "kappa-padded-dirichlet":
            w = np.asarray(p.get("weights", np.ones(d)), dtype=float)
            if w.shape != (d,) or np.any(w <= 0):
                raise ValueError("weights must be d positive numbers")
            p["weights"] = [float(v) for v in w]
        elif self.family == "two-point":
            atoms = np.asarray(p.get("atoms"), dtype=float)
            if atoms.shape != (2, d):
                raise ValueError("two-point law needs 'atoms' of shape (2, d)")
            for atom in atoms:
                self._check_admissible(atom)
            prob = float(p.get("p", 0.5))
            if not 0 <= prob <= 1:
                raise ValueError("p must lie in [0, 1]")
            p["atoms"] = atoms.tolist()
            p["p"] = prob
        else:
            value = np.asarray(p.get("value", np.full(d, 1.0 / d)), dtype=float)
            if value.shape != (d,):
                raise ValueError("value must have length d")
            self._check_admissible(value)
            p["value"] = value.tolist()
        object.__setattr__(self, "params", p)

    def _check_admissible(self, a):
        if abs(a.sum() - 1) > 1e-12:
            raise ValueError(f"weights {a} must sum to 1")
        if np.any(a < 2 * self.kappa - 1e-15):
            raise ValueError(f"weights {a} violate ellipticity a_i >= 2 kappa = {2 * self.kappa}")

    # convenience constructors -------------------------------------------------
    @classmethod
    def srw(cls, d: int) -> "EnvironmentLaw":
        return cls(d, 1.0 / (2 * d), "degenerate-constant")

    @classmethod
    def two_point(cls, d: int, kappa: float, p: float = 0.5) -> "EnvironmentLaw":
        """Two atoms, each heavy in one of the first two coordinates."""
        hi = 1 - 2 * kappa * (d - 1)
        a1 = np.full(d, 2 * kappa)
        a2 = np.full(d, 2 * kappa)
        a1[0], a2[1] = hi, hi
        return cls(d, kappa, "two-point", {"atoms": [a1.tolist(), a2.tolist()], "p": p})

    @property
    def n_uniforms(self) -> int:
        return {"kappa-padded-dirichlet": self.d, "two-point": 1, "degenerate-constant": 0}[self.family]

    @property
    def is_constant(self) -> bool:
        if self.family == "degenerate-constant":
            return True
        if self.family == "two-point":
            atoms = np.asarray(self.params["atoms"])
            return self.params["p"] in (0.0, 1.0) or np.array_equal(atoms[0], atoms[1])
        return False

    def transform(self, u):
        """Map uniforms of shape (..., n_uniforms) to weight vectors (..., d)."""
        d = self.d
        if self.family == "kappa-padded-dirichlet":
            e = -np.log(u) * np.asarray(self.params["weights"])
            w = e / e.sum(axis=-1, keepdims=True)
            a = 2 * self.kappa + (1 - 2 * d * self.kappa) * w
        elif self.family == "two-point":
            atoms = np.asarray(self.params["atoms"])
            a = np.where(u[..., :1] < self.params["p"], atoms[0], atoms[1])
        else:
            a = np.broadcast_to(np.asarray(self.params["value"]), u.shape[:-1] + (d,)).copy()
        return a / a.sum(axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {"d": self.d, "kappa": self.kappa, "family": self.family, "params": self.params}


class Environment:
    """Lazily evaluated i.i.d. environment keyed by ``(law, seed)``.

    ``period`` turns the field into a torus environment: site keys use the
    canonical representative in ``[0, period)^d``.  ``offset`` implements the
    spatial shift ``theta_z``.
    """

    def __init__(self, law: EnvironmentLaw, seed: int, period: int | None = None, offset=None):
        self.law = law
        self.seed = int(seed) & rng.MASK64
        self.period = None if period is None else int(period)
        if self.period is not None and self.period < 1:
            raise ValueError("period must be positive")
        self.offset = np.zeros(law.d, dtype=np.int64) if offset is None else np.asarray(offset, dtype=np.int64)

    @property
    def d(self) -> int:
        return self.law.d

    def __repr__(self):
        return f"Environment(family={self.law.family!r}, d={self.d}, seed={self.seed}, period={self.period})"

    def _canonical(self, pts):
        pts = np.asarray(pts, dtype=np.int64) + self.offset
        if self.period is not None:
            pts = np.mod(pts, self.period)
        return pts

    def _draw(self, canon, draw: int):
        law = self.law
        k = law.n_uniforms
        lead = canon.shape[:-1]
        if k == 0:
            return law.transform(np.empty(lead + (0,)))
        words = [canon[..., i, None] for i in range(self.d)]
        u = rng.uniform(self.seed, np.int64(draw), *words, np.arange(k, dtype=np.int64))
        return law.transform(u.reshape(lead + (k,)))

    def values(self, pts):
        """Weight vectors ``a(x)`` for integer points of shape (..., d)."""
        pts = np.asarray(pts, dtype=np.int64)
        if pts.shape[-1] != self.d:
            raise ValueError(f"points must have trailing dimension {self.d}")
        return self._draw(self._canonical(pts), 0)

    def sample_site(self, x):
        return self.values(np.asarray(x, dtype=np.int64)[None, :])[0]

    def box_values(self, lo, shape):
        """Values on the box ``lo + [0, shape)``, as an array of shape (*shape, d)."""
        grids = np.meshgrid(*[np.arange(l, l + n, dtype=np.int64) for l, n in zip(lo, shape)], indexing="ij")
        return self.values(np.stack(grids, axis=-1))

    def torus_values(self):
        if self.period is None:
            raise ValueError("torus_values needs a periodic environment")
        return self.box_values(np.zeros(self.d, dtype=np.int64), (self.period,) * self.d)

    def shift(self, z) -> "Environment":
        """The shifted environment ``theta_z omega``: value at x is the old value at x + z."""
        return Environment(self.law, self.seed, self.period, self.offset + np.asarray(z, dtype=np.int64))

    def resample(self, y, draw: int = 1) -> "ResampledEnvironment":
        return ResampledEnvironment(self, y, draw)

    def descriptor(self) -> dict:
        out = self.law.to_dict()
        out.update(seed=self.seed, period=self.period)
        return out

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Environment":
        law = EnvironmentLaw(desc["d"], desc["kappa"], desc["family"], desc.get("params", {}))
        return cls(law, desc["seed"], desc.get("period"))

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        return cls.from_descriptor(json.loads(text))


class ResampledEnvironment(Environment):
    """``omega'_y``: the base environment with the value at ``y`` redrawn.

    The replacement uses an independent stream (``draw`` >= 1) of the same
    counter-based generator; every other site is untouched.
    """

    def __init__(self, base: Environment, y, draw: int = 1, value=None):
        if draw < 1:
            raise ValueError("draw index 0 is reserved for the base field")
        super().__init__(base.law, base.seed, base.period, base.offset)
        self.base = base
        self.site = np.asarray(y, dtype=np.int64)
        self.draw = int(draw)
        self.value = None
        if value is not None:
            value = np.asarray(value, dtype=float)
            base.law._check_admissible(value)
            self.value = value

    def __repr__(self):
        return f"ResampledEnvironment({self.base!r}, site={self.site.tolist()}, draw={self.draw})"

    def values(self, pts):
        pts = np.asarray(pts, dtype=np.int64)
        out = self.base.values(pts)
        canon = self._canonical(pts)
        target = self._canonical(self.site)
        hit = np.all(canon == target, axis=-1)
        if np.any(hit):
            out[hit] = self.replacement()
        return out

    def replacement(self):
        if self.value is not None:
            return self.value.copy()
        return self._draw(self._canonical(self.site)[None, :], self.draw)[0]

    def shift(self, z) -> "ResampledEnvironment":
        z = np.asarray(z, dtype=np.int64)
        return ResampledEnvironment(self.base.shift(z), self.site - z, self.draw, self.value)


def shift(env: Environment, z) -> Environment:
    return env.shift(z)


def resample(env: Environment, y, draw: int = 1, value=None) -> ResampledEnvironment:
    """Redraw the value at ``y`` (or set it to ``value`` when given)."""
    return ResampledEnvironment(env, y, draw, value)


def sample_site(env: Environment, x):
    return env.sample_site(x)
