"""Log-log rate regression shared by the experiments."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class RateFit:
    slope: float
    intercept: float
    band: float
    residual: float

    def contains(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def fit_rate(scales, values) -> RateFit:
    """Least squares of ``log value`` on ``log scale``; band is 1.96 slope standard errors."""
    x = np.asarray(scales, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("scales and values must be 1-d arrays of equal length")
    if len(x) < 3:
        raise ValueError("a rate fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("rate fits need positive finite scales and values")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2))
    return RateFit(float(coef[0]), float(coef[1]), float(1.96 * se), float(np.sqrt(np.mean(resid ** 2))))


@dataclass
class RateSeries:
    """Per-scale statistics with a fitted log-log slope.

    ``samples`` holds the raw per-sample values (one list per scale);
    ``values`` are the medians and ``errors`` bootstrap-free robust errors
    (1.2533 * std / sqrt(n), the asymptotic standard error of a median).
    """

    name: str
    scales: list
    samples: list
    reference_exponent: float | None = None
    values: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    means: list = field(default_factory=list)
    fit: RateFit | None = None
    mean_fit: RateFit | None = None

    def __post_init__(self):
        if not self.values:
            self.values = [float(np.median(s)) for s in self.samples]
            self.means = [float(np.mean(s)) for s in self.samples]
            self.errors = [float(1.2533 * np.std(s, ddof=1) / np.sqrt(len(s))) if len(s) > 1 else float("nan")
                           for s in self.samples]
        if self.fit is None and len(self.scales) >= 3 and all(v > 0 for v in self.values):
            self.fit = fit_rate(self.scales, self.values)
            if all(v > 0 for v in self.means):
                self.mean_fit = fit_rate(self.scales, self.means)

    @property
    def slope(self):
        return None if self.fit is None else self.fit.slope

    def rows(self):
        """Flat rows ``(scale, sample index, value)`` for CSV output."""
        return [(s, i, float(v)) for s, vals in zip(self.scales, self.samples) for i, v in enumerate(vals)]

    def summary(self) -> dict:
        out = {"name": self.name, "scales": list(self.scales), "median": self.values,
               "median_error": self.errors, "mean": self.means,
               "reference_exponent": self.reference_exponent,
               "n_samples": [len(s) for s in self.samples]}
        out["fit"] = None if self.fit is None else asdict(self.fit)
        out["mean_fit"] = None if self.mean_fit is None else asdict(self.mean_fit)
        return out
