"""Compactly supported orthonormal wavelets and their tensor frames on R^{3d}.

The father/mother pair is tabulated by the cascade iteration started from a
unit impulse.  The level-``r`` table holds values at spacing ``2**-r``; the
tables of different levels are *not* subsamples of each other.  When a
function is sampled on a dyadic grid of spacing ``2**-s`` the scale-``j``
factor is read from the level ``s - j`` table, which makes the sampled system
an exactly orthonormal discrete wavelet basis under the rectangle rule.
Evaluation at arbitrary points interpolates the finest table linearly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

from trimult.errors import ConstructionError, RefusalError

FATHER = "F"
MOTHER = "M"


def daubechies_filter(order: int) -> np.ndarray:
    """Minimum-phase Daubechies low-pass filter with ``order`` vanishing moments.

    Normalized so that ``sum(h) == sqrt(2)``; length ``2 * order``.
    """
    if order < 1:
        raise ConstructionError(f"family order must be >= 1, got {order}")
    if order == 1:
        return np.array([1.0, 1.0]) / math.sqrt(2.0)
    # P(y) = sum_k C(N-1+k, k) y^k with y = sin^2(w/2) = (2 - z - 1/z) / 4
    y_coeffs = [math.comb(order - 1 + k, k) for k in range(order)]
    y_roots = np.roots(y_coeffs[::-1])
    poly = np.array([1.0 + 0j])
    for y in y_roots:
        # z^2 - (2 - 4y) z + 1 = 0, keep the root inside the unit circle
        z_pair = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        z = z_pair[np.argmin(np.abs(z_pair))]
        poly = P.polymul(poly, [-z, 1.0])
    for _ in range(order):
        poly = P.polymul(poly, [1.0, 1.0])
    h = np.real(poly)
    h *= math.sqrt(2.0) / h.sum()
    return h[::-1].copy() if abs(h[0]) < abs(h[-1]) else h


def highpass_from_lowpass(h: np.ndarray) -> np.ndarray:
    """Quadrature mirror filter ``g_k = (-1)^k h_{L-1-k}``."""
    L = len(h)
    return np.array([(-1) ** k * h[L - 1 - k] for k in range(L)])


def check_orthonormal_filter(h: np.ndarray, tol: float = 1e-10) -> None:
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or len(h) < 2 or len(h) % 2:
        raise ConstructionError("filter must be a 1-D array of even length >= 2")
    if not np.all(np.isfinite(h)):
        raise ConstructionError("filter has non-finite coefficients")
    if abs(h.sum() - math.sqrt(2.0)) > tol:
        raise ConstructionError(f"sum(filter) = {h.sum()!r}, expected sqrt(2)")
    L = len(h)
    for m in range(L // 2):
        s = float(np.dot(h[2 * m:], h[: L - 2 * m]))
        target = 1.0 if m == 0 else 0.0
        if abs(s - target) > tol:
            raise ConstructionError(
                f"filter is not orthonormal: sum h_k h_(k+{2 * m}) = {s!r}"
            )


def cascade(h: np.ndarray, levels: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Cascade iteration from a unit impulse.

    Returns per-level tables ``phi[r]``, ``psi[r]`` of length
    ``(L - 1) * 2**r + 1`` holding values at ``k * 2**-r``.
    """
    h = np.asarray(h, dtype=float)
    g = highpass_from_lowpass(h)
    L = len(h)
    phis = [np.zeros(L)]
    phis[0][0] = 1.0
    psis = [np.zeros(L)]
    for r in range(levels):
        prev = phis[-1]
        step = 2**r
        size = (L - 1) * 2 * step + 1
        nxt_phi = np.zeros(size)
        nxt_psi = np.zeros(size)
        for m in range(L):
            sl = slice(m * step, m * step + len(prev))
            nxt_phi[sl] += math.sqrt(2.0) * h[m] * prev
            nxt_psi[sl] += math.sqrt(2.0) * g[m] * prev
        phis.append(nxt_phi)
        psis.append(nxt_psi)
    # level 0 has no meaningful mother table; reuse level-0 impulse grid
    psis[0] = np.zeros(L)
    return phis, psis


def vanishing_moments(g: np.ndarray, tol: float = 1e-9) -> int:
    k = np.arange(len(g), dtype=float)
    count = 0
    while count < len(g):
        if abs(float(np.sum(k**count * g))) > tol * max(1.0, float(np.sum(np.abs(k**count * g)))):
            break
        count += 1
    return count


@dataclass(frozen=True, eq=False)
class WaveletSystem:
    filter: tuple[float, ...]
    K: int
    resolution_levels: int
    family_order: int | None = None
    _phi: tuple = field(default=(), repr=False)
    _psi: tuple = field(default=(), repr=False)

    @property
    def support_len(self) -> int:
        return len(self.filter) - 1

    @property
    def phi_F_samples(self) -> np.ndarray:
        return self._phi[self.resolution_levels]

    @property
    def phi_M_samples(self) -> np.ndarray:
        return self._psi[self.resolution_levels]

    @property
    def spacing(self) -> float:
        return 2.0 ** -self.resolution_levels

    def table(self, kind: str, level: int) -> np.ndarray:
        if not 0 <= level <= self.resolution_levels:
            raise RefusalError(
                f"table level {level} outside [0, {self.resolution_levels}]"
            )
        if kind == FATHER:
            return self._phi[level]
        if kind == MOTHER:
            if level == 0:
                raise RefusalError("mother wavelet needs table level >= 1")
            return self._psi[level]
        raise ValueError(f"unknown wavelet kind {kind!r}")

    def sup_norm(self) -> float:
        return float(max(np.abs(self.phi_F_samples).max(), np.abs(self.phi_M_samples).max()))

    def to_json(self) -> str:
        return json.dumps(
            {
                "filter": [float(format(c, ".17g")) for c in self.filter],
                "K": self.K,
                "resolution_levels": self.resolution_levels,
                "family_order": self.family_order,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> WaveletSystem:
        rec = json.loads(text)
        return from_filter(rec["filter"], rec["resolution_levels"], rec.get("family_order"))


def from_filter(h, resolution_levels: int, family_order: int | None = None) -> WaveletSystem:
    h = np.asarray(h, dtype=float)
    check_orthonormal_filter(h)
    phis, psis = cascade(h, resolution_levels)
    finest = phis[-1]
    if not np.all(np.isfinite(finest)) or np.abs(finest).max() > 1e6:
        raise ConstructionError("cascade iteration diverged")
    g = highpass_from_lowpass(h)
    K = vanishing_moments(g)
    for arr in itertools.chain(phis, psis):
        arr.setflags(write=False)
    return WaveletSystem(
        filter=tuple(float(c) for c in h),
        K=K,
        resolution_levels=resolution_levels,
        family_order=family_order,
        _phi=tuple(phis),
        _psi=tuple(psis),
    )


@lru_cache(maxsize=16)
def build_wavelet_system(family_order: int, resolution_levels: int = 8) -> WaveletSystem:
    """Daubechies system with ``K = family_order`` vanishing moments.

    ``family_order=1`` gives the Haar pair.
    """
    if resolution_levels < 1:
        raise ConstructionError("resolution_levels must be >= 1")
    return from_filter(daubechies_filter(family_order), resolution_levels, family_order)


@dataclass(frozen=True, order=True)
class FrameIndex:
    j: int
    G: str
    n: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if self.j < 0:
            raise ValueError(f"scale must be nonnegative, got {self.j}")
        if len(self.G) != len(self.n) or set(self.G) - {FATHER, MOTHER}:
            raise ValueError(f"type {self.G!r} does not match translation {self.n}")
        if self.j > 0 and MOTHER not in self.G:
            raise ValueError("scales j >= 1 need at least one mother factor")

    @property
    def dim(self) -> int:
        return len(self.n)


def admissible_types(j: int, dim: int) -> list[str]:
    """Types at scale ``j``: every type at ``j = 0``, at least one mother above.

    Scale 0 needs the mother types too; without them the system misses the
    coarsest detail space and is not complete.
    """
    if j == 0:
        return ["".join(t) for t in itertools.product(FATHER + MOTHER, repeat=dim)]
    return ["".join(t) for t in itertools.product(FATHER + MOTHER, repeat=dim) if MOTHER in t]


def dyadic_level(spacing: float) -> int | None:
    s = -math.log2(spacing)
    si = round(s)
    if abs(s - si) < 1e-12:
        return si
    return None


def _interp_table(table: np.ndarray, level: int, t: np.ndarray) -> np.ndarray:
    pos = np.asarray(t, dtype=float) * 2.0**level
    out = np.zeros_like(pos)
    inside = (pos >= 0) & (pos <= len(table) - 1)
    p = pos[inside]
    i0 = np.minimum(np.floor(p).astype(int), len(table) - 2)
    frac = p - i0
    out[inside] = table[i0] * (1 - frac) + table[i0 + 1] * frac
    return out


def eval_1d(sys: WaveletSystem, kind: str, t) -> np.ndarray:
    """phi_F or phi_M at arbitrary points (linear interpolation of the finest table)."""
    R = sys.resolution_levels
    return _interp_table(sys.table(kind, R), R, np.asarray(t, dtype=float))


def sample_factor(sys: WaveletSystem, kind: str, j: int, k: int, points) -> np.ndarray:
    """``2**(j/2) * phi_kind(2**j x - k)`` on a uniform grid of points.

    Dyadic grids whose points sit on ``2**-s`` lattice sites read the level
    ``s - j`` table exactly; anything else falls back to interpolation.
    """
    x = np.asarray(points, dtype=float)
    amp = 2.0 ** (j / 2)
    if x.size >= 2:
        spacing = float(x[1] - x[0])
        s = dyadic_level(spacing) if spacing > 0 else None
        if s is not None and j <= s and s - j <= sys.resolution_levels and (kind == FATHER or s > j):
            idx_f = x * 2.0**s - k * 2.0 ** (s - j)
            idx = np.rint(idx_f)
            if np.all(np.abs(idx - idx_f) < 1e-7):
                table = sys.table(kind, s - j)
                idx = idx.astype(np.int64)
                out = np.zeros(x.shape)
                ok = (idx >= 0) & (idx < len(table))
                out[ok] = table[idx[ok]]
                return amp * out
    return amp * eval_1d(sys, kind, 2.0**j * x - k)


def tensor_wavelet_eval(sys: WaveletSystem, idx: FrameIndex, x) -> float:
    """Value of the L^2-normalized tensor wavelet at a single point."""
    x = np.asarray(x, dtype=float)
    val = 2.0 ** (idx.j * idx.dim / 2)
    for kind, n_r, x_r in zip(idx.G, idx.n, x):
        val *= float(eval_1d(sys, kind, np.array([2.0**idx.j * x_r - n_r]))[0])
        if val == 0.0:
            return 0.0
    return val


def support_box(sys: WaveletSystem, idx: FrameIndex) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(idx.n, dtype=float)
    scale = 2.0 ** -idx.j
    return n * scale, (n + sys.support_len) * scale


def inner_product(sys: WaveletSystem, a: FrameIndex, b: FrameIndex, level: int | None = None) -> float:
    """Rectangle-rule inner product on the ``2**-level`` grid, one axis at a time."""
    s = sys.resolution_levels if level is None else level
    if max(a.j, b.j) > s:
        raise RefusalError(f"grid level {s} cannot resolve scale {max(a.j, b.j)}")
    h = 2.0**-s
    total = 1.0
    for r in range(a.dim):
        lo_a, hi_a = a.n[r] * 2.0**-a.j, (a.n[r] + sys.support_len) * 2.0**-a.j
        lo_b, hi_b = b.n[r] * 2.0**-b.j, (b.n[r] + sys.support_len) * 2.0**-b.j
        lo, hi = max(lo_a, lo_b), min(hi_a, hi_b)
        if lo >= hi:
            return 0.0
        x = np.arange(math.floor(lo / h), math.ceil(hi / h) + 1) * h
        fa = sample_factor(sys, a.G[r], a.j, a.n[r], x)
        fb = sample_factor(sys, b.G[r], b.j, b.n[r], x)
        total *= float(np.dot(fa, fb)) * h
        if total == 0.0:
            return 0.0
    return total


def translation_range(sys: WaveletSystem, j: int, lo: float, hi: float) -> range:
    """Translations ``n`` whose open support ``2**-j (n, n + L - 1)`` meets ``[lo, hi]``."""
    if lo > hi:
        return range(0)
    a = 2.0**j * lo - sys.support_len
    b = 2.0**j * hi
    return range(math.floor(a) + 1, math.ceil(b))


def enumerate_indices(sys: WaveletSystem, j: int, box) -> list[FrameIndex]:
    """All ``(G, n)`` at scale ``j`` whose wavelet support meets the closed box.

    ``box`` is a pair ``(lo, hi)`` of coordinate sequences.
    """
    lo, hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in box)
    if np.any(lo > hi):
        return []
    dim = len(lo)
    ranges = [translation_range(sys, j, lo[r], hi[r]) for r in range(dim)]
    out = []
    for G in admissible_types(j, dim):
        for n in itertools.product(*ranges):
            out.append(FrameIndex(j, G, n))
    return out
