"""Sampled multipliers on uniform box grids in R^{3d} and a few smooth test families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e

from trimult.errors import RefusalError


@dataclass(frozen=True, eq=False)
class MultiplierGrid:
    """Samples of m at ``origin + i * spacing`` along every axis.

    Each sample stands for the cell of side ``spacing`` centered on it, so the
    rectangle sum ``values.sum() * cell_volume`` is the midpoint rule on
    ``box``.
    """

    d: int
    origin: tuple[float, ...]
    spacing: float
    values: np.ndarray
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if values.ndim != 3 * self.d or len(self.origin) != 3 * self.d:
            raise ValueError(f"expected {3 * self.d} axes, got values.ndim={values.ndim}")
        if min(values.shape) < 2:
            raise ValueError("need at least 2 samples per axis")
        if not np.all(np.isfinite(values)):
            raise ValueError("multiplier samples must be finite")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def dim(self) -> int:
        return 3 * self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axes(self) -> list[np.ndarray]:
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.shape)]

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.origin) - self.spacing / 2
        hi = lo + self.spacing * np.array(self.shape)
        return lo, hi

    def lq_norm(self, q: float) -> float:
        if q == np.inf:
            return float(np.abs(self.values).max())
        return float((np.sum(np.abs(self.values) ** q) * self.cell_volume) ** (1 / q))

    def with_values(self, values, func=None) -> MultiplierGrid:
        return MultiplierGrid(self.d, self.origin, self.spacing, values, func)

    def scaled(self, lam: float) -> MultiplierGrid:
        f = self.func
        return self.with_values(lam * self.values, None if f is None else (lambda *x: lam * f(*x)))

    def __add__(self, other: MultiplierGrid) -> MultiplierGrid:
        if other.shape != self.shape or not np.allclose(other.origin, self.origin):
            raise ValueError("grids differ")
        return self.with_values(self.values + other.values)

    def sample_at(self, axes: list[np.ndarray]) -> np.ndarray:
        """Values on the product of per-axis coordinate arrays.

        Coordinates must be lattice points of this grid, or the grid must
        carry a closed-form evaluator; otherwise the request is refused.
        """
        idx = []
        aligned = True
        for o, n, a in zip(self.origin, self.shape, axes):
            pos = (np.asarray(a, dtype=float) - o) / self.spacing
            ip = np.rint(pos)
            if np.any(np.abs(pos - ip) > 1e-7) or ip.min() < 0 or ip.max() > n - 1:
                aligned = False
                break
            idx.append(ip.astype(np.int64))
        if aligned:
            return self.values[np.ix_(*idx)]
        if self.func is None:
            raise RefusalError("requested points are off the multiplier lattice and no evaluator is attached")
        return np.asarray(self.func(*np.meshgrid(*axes, indexing="ij")), dtype=float)


def sample(func: Callable, d: int, lo, hi, spacing: float) -> MultiplierGrid:
    """Sample ``func(x1, ..., x_{3d})`` on lattice points between ``lo`` and ``hi``."""
    dim = 3 * d
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    counts = np.floor((hi - lo) / spacing + 1e-9).astype(int) + 1
    axes = [lo[r] + spacing * np.arange(counts[r]) for r in range(dim)]
    values = func(*np.meshgrid(*axes, indexing="ij"))
    values = np.broadcast_to(np.asarray(values, dtype=float), tuple(counts)).copy()
    return MultiplierGrid(d, tuple(lo), spacing, values, func)


def zero(d: int, lo, hi, spacing: float) -> MultiplierGrid:
    return sample(lambda *x: np.zeros_like(x[0]), d, lo, hi, spacing)


def smooth_bump_1d(t):
    """exp(1 - 1/(1 - t^2)) on |t| < 1, zero elsewhere; maximum 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)

    def e(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out

    a, b = e(t), e(1.0 - t)
    return a / (a + b)


def radial_bump(center, radius: float, amplitude: float = 1.0) -> Callable:
    center = np.asarray(center, dtype=float)

    def f(*x):
        r2 = sum((xi - c) ** 2 for xi, c in zip(x, center))
        return amplitude * smooth_bump_1d(np.sqrt(r2) / radius)

    return f


def cone(center, radius: float, amplitude: float = 1.0) -> Callable:
    """Lipschitz tent with a kink at the apex and along the rim."""
    center = np.asarray(center, dtype=float)

    def f(*x):
        r = np.sqrt(sum((xi - c) ** 2 for xi, c in zip(x, center)))
        return amplitude * np.maximum(0.0, 1.0 - r / radius)

    return f


def _hermite_sup(k: int) -> float:
    u = np.linspace(-12, 12, 48001)
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    return float(np.max(np.abs(hermite_e.hermeval(u, coef) * np.exp(-u * u / 2))))


@dataclass(frozen=True)
class GaussianMixture:
    """Sum of axis-aligned Gaussians ``A exp(-sum ((x_r - c_r)/w_r)^2 / 2)``.

    Smooth with every derivative bounded, and in every L^q.
    """

    amplitudes: tuple[float, ...]
    centers: tuple[tuple[float, ...], ...]
    widths: tuple[tuple[float, ...], ...]

    def __call__(self, *x):
        out = np.zeros(np.broadcast(*x).shape)
        for a, c, w in zip(self.amplitudes, self.centers, self.widths):
            e = sum(((xi - ci) / wi) ** 2 for xi, ci, wi in zip(x, c, w))
            out = out + a * np.exp(-e / 2)
        return out

    def derivative_bound(self, order: int) -> float:
        """Upper bound for max over |alpha| <= order of sup |d^alpha m|."""
        import itertools

        sups = [_hermite_sup(k) for k in range(order + 1)]
        dim = len(self.centers[0])
        best = 0.0
        for alpha in itertools.product(range(order + 1), repeat=dim):
            if sum(alpha) > order:
                continue
            total = 0.0
            for a, w in zip(self.amplitudes, self.widths):
                term = abs(a)
                for ar, wr in zip(alpha, w):
                    term *= sups[ar] * wr ** (-ar)
                total += term
            best = max(best, total)
        return best

    def lq_norm_exact(self, q: float) -> float | None:
        """Closed form for a single component; None for mixtures."""
        if len(self.amplitudes) != 1:
            return None
        a, w = self.amplitudes[0], self.widths[0]
        return abs(a) * float(np.prod([wr * math.sqrt(2 * math.pi / q) for wr in w])) ** (1 / q)

    def scaled(self, lam: float) -> GaussianMixture:
        return GaussianMixture(tuple(lam * a for a in self.amplitudes), self.centers, self.widths)


def random_gaussian_mixture(rng: np.random.Generator, dim: int, span: float = 0.6,
                            width_range=(0.25, 0.5), max_terms: int = 3) -> GaussianMixture:
    k = int(rng.integers(1, max_terms + 1))
    amps = tuple(float(a) for a in rng.uniform(0.5, 1.5, k) * rng.choice([-1.0, 1.0], k))
    centers = tuple(tuple(float(c) for c in rng.uniform(-span, span, dim)) for _ in range(k))
    widths = tuple(tuple(float(w) for w in rng.uniform(*width_range, dim)) for _ in range(k))
    return GaussianMixture(amps, centers, widths)


def random_bump_sum(rng: np.random.Generator, dim: int, span: float = 0.4,
                    radius_range=(0.5, 0.9), max_terms: int = 3) -> Callable:
    """Sum of compactly supported radial bumps (C-infinity, support within span + radius)."""
    k = int(rng.integers(1, max_terms + 1))
    parts = [
        radial_bump(rng.uniform(-span, span, dim), float(rng.uniform(*radius_range)),
                    float(rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])))
        for _ in range(k)
    ]

    def f(*x):
        return sum(p(*x) for p in parts)

    return f
