"""Desk-scale evaluation of T_m(f1, f2, f3) for d = 1.

Frequencies live on uniform lattices of spacing ``delta``; every integral is
a Riemann sum.  Inverse transforms use ``exp(+2 pi i x xi)`` with no extra
normalization, so a function sampled on a lattice of spacing ``delta`` is
periodic in ``x`` with period ``1 / delta`` and the natural spatial window is
one period.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from trimult.coeff_analysis import CoeffTensor
from trimult.errors import RefusalError
from trimult.multipliers import MultiplierGrid, smooth_bump_1d
from trimult.wavelet_frame import WaveletSystem, sample_factor

_CHUNK = 2_000_000  # complex entries per temporary block


@dataclass(frozen=True, eq=False)
class TestFunctionTriple:
    __test__ = False  # not a pytest class

    freq_axes: tuple[np.ndarray, np.ndarray, np.ndarray]
    fhats: tuple[np.ndarray, np.ndarray, np.ndarray]
    d: int = 1
    norms: tuple[float, float, float] = field(init=False)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.freq_axes)
        fh = tuple(np.asarray(f, dtype=complex) for f in self.fhats)
        if self.d != 1:
            raise RefusalError("the engine runs with d = 1 only")
        for a, f in zip(axes, fh):
            if a.shape != f.shape or len(a) < 2:
                raise ValueError("each fhat must match its frequency axis")
            if not np.all(np.isfinite(f)):
                raise ValueError("test function samples must be finite")
            if not np.allclose(np.diff(a), a[1] - a[0]):
                raise ValueError("frequency axes must be uniform")
        object.__setattr__(self, "freq_axes", axes)
        object.__setattr__(self, "fhats", fh)
        object.__setattr__(self, "norms", tuple(
            float(np.sqrt(np.sum(np.abs(f) ** 2) * (a[1] - a[0]))) for a, f in zip(axes, fh)))

    def spacing(self, i: int) -> float:
        a = self.freq_axes[i]
        return float(a[1] - a[0])

    def norm_product(self) -> float:
        return float(np.prod(self.norms))

    def replace(self, i: int, fhat) -> TestFunctionTriple:
        fh = list(self.fhats)
        fh[i] = fhat
        return TestFunctionTriple(self.freq_axes, tuple(fh), self.d)

    def scaled(self, factors) -> TestFunctionTriple:
        return TestFunctionTriple(self.freq_axes, tuple(c * f for c, f in zip(factors, self.fhats)), self.d)


@dataclass(frozen=True, eq=False)
class OutputField:
    x: np.ndarray
    samples: np.ndarray
    cell_volume: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("output samples must be finite")

    def __add__(self, other: OutputField) -> OutputField:
        return OutputField(self.x, self.samples + other.samples, self.cell_volume)

    def scaled(self, lam) -> OutputField:
        return OutputField(self.x, lam * self.samples, self.cell_volume)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "re", "im", "abs"])
        for xv, s in zip(self.x, self.samples):
            w.writerow([format(xv, ".17g"), format(s.real, ".17g"), format(s.imag, ".17g"), format(abs(s), ".17g")])
        return buf.getvalue()


def period_grid(fns: TestFunctionTriple, points: int | None = None, oversample: int = 4) -> np.ndarray:
    """One period ``[-P/2, P/2)`` of the common spatial period ``P = 1 / delta``."""
    delta = min(fns.spacing(i) for i in range(3))
    for i in range(3):
        ratio = fns.spacing(i) / delta
        if abs(ratio - round(ratio)) > 1e-9:
            raise RefusalError("frequency spacings are not commensurate")
    span = max(a[-1] for a in fns.freq_axes) * 3 - min(a[0] for a in fns.freq_axes) * 3
    if points is None:
        points = int(2 ** math.ceil(math.log2(max(8, oversample * (span / delta + 1)))))
    period = 1.0 / delta
    return -period / 2 + period * np.arange(points) / points


def quasi_norm(field: OutputField, p: float) -> float:
    """(sum |samples|^p * cell_volume)^(1/p); a quasi-norm for p < 1."""
    if not p > 0:
        raise ValueError("p must be positive")
    return float((np.sum(np.abs(field.samples) ** p) * field.cell_volume) ** (1 / p))


def inverse_transform(axis: np.ndarray, fhat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Riemann sum of fhat(xi) exp(2 pi i x xi) d xi."""
    delta = axis[1] - axis[0]
    nz = np.nonzero(fhat)[0]
    if len(nz) == 0:
        return np.zeros(len(x), dtype=complex)
    return np.exp(2j * np.pi * np.outer(x, axis[nz])) @ (fhat[nz] * delta)


def _support(fns: TestFunctionTriple):
    return [np.nonzero(f)[0] for f in fns.fhats]


def apply_direct(m: MultiplierGrid, fns: TestFunctionTriple, x) -> OutputField:
    """Riemann sum of m f1^ f2^ f3^ exp(2 pi i x (xi + eta + delta)) over the lattice."""
    if m.d != 1:
        raise RefusalError("the engine runs with d = 1 only")
    x = np.asarray(x, dtype=float)
    dx = float(x[1] - x[0]) if len(x) > 1 else 1.0
    supp = _support(fns)
    if any(len(s) == 0 for s in supp):
        return OutputField(x, np.zeros(len(x), dtype=complex), dx)
    lo, hi = m.box
    pts = [fns.freq_axes[i][supp[i]] for i in range(3)]
    for i in range(3):
        if pts[i].min() < lo[i] - 1e-9 or pts[i].max() > hi[i] + 1e-9:
            raise RefusalError(f"support of fhat{i + 1} leaves the multiplier box")
    mv = m.sample_at(pts).astype(complex)
    E = [np.exp(2j * np.pi * np.outer(x, pts[i])) * (fns.fhats[i][supp[i]] * fns.spacing(i)) for i in range(3)]
    M1, M2, M3 = mv.shape
    out = np.empty(len(x), dtype=complex)
    step = max(1, _CHUNK // max(1, M1 * M2))
    flat = mv.reshape(M1 * M2, M3)
    for s in range(0, len(x), step):
        sl = slice(s, s + step)
        Z = (E[2][sl] @ flat.T).reshape(-1, M1, M2)
        Z = np.einsum("xab,xb->xa", Z, E[1][sl])
        out[sl] = np.einsum("xa,xa->x", Z, E[0][sl])
    return OutputField(x, out, dx)


def partial_field(m_vals: np.ndarray, E_other: list[np.ndarray], free: int) -> np.ndarray:
    """Contract m against two fixed factors, leaving the ``free`` one: shape (X, M_free)."""
    A, B = E_other
    if free == 0:
        Z = np.einsum("abc,xc->xab", m_vals, B)
        return np.einsum("xab,xb->xa", Z, A)
    if free == 1:
        Z = np.einsum("abc,xc->xab", m_vals, B)
        return np.einsum("xab,xa->xb", Z, A)
    Z = np.einsum("abc,xb->xac", m_vals, B)
    return np.einsum("xac,xa->xc", Z, A)


def window_transforms(sys: WaveletSystem, j: int, kind: str, ks, axis: np.ndarray, fhat: np.ndarray,
                      x: np.ndarray) -> np.ndarray:
    """Rows F^{-1}(omega_k fhat)(x) for each translation k, omega_k = 2^{j/2} phi(2^j . - k)."""
    ks = list(ks)
    delta = axis[1] - axis[0]
    nz = np.nonzero(fhat)[0]
    if len(nz) == 0 or not ks:
        return np.zeros((len(ks), len(x)), dtype=complex)
    W = np.stack([sample_factor(sys, kind, j, k, axis) for k in ks])[:, nz]
    E = np.exp(2j * np.pi * np.outer(axis[nz], x))
    return (W * (fhat[nz] * delta)) @ E


def apply_wavelet_form(c: CoeffTensor, sys: WaveletSystem, fns: TestFunctionTriple, x) -> OutputField:
    """Sum over the tensor's entries of b_n times three windowed inverse transforms."""
    if c.dim != 3:
        raise RefusalError("the engine runs with d = 1 only")
    x = np.asarray(x, dtype=float)
    dx = float(x[1] - x[0]) if len(x) > 1 else 1.0
    out = np.zeros(len(x), dtype=complex)
    for (j, G), (n, b) in c.blocks.items():
        if not len(b):
            continue
        rows = []
        inv = []
        for i in range(3):
            uniq, ii = np.unique(n[:, i], return_inverse=True)
            rows.append(window_transforms(sys, j, G[i], uniq, fns.freq_axes[i], fns.fhats[i], x))
            inv.append(ii.reshape(-1))
        step = max(1, _CHUNK // max(1, len(x)))
        for s in range(0, len(b), step):
            sl = slice(s, s + step)
            prod = rows[0][inv[0][sl]] * rows[1][inv[1][sl]] * rows[2][inv[2][sl]]
            out += b[sl] @ prod
    return OutputField(x, out, dx)


def make_bump_hat(center: float, width: float, grid) -> np.ndarray:
    """Smooth bump, 1 at ``center``, exactly 0 at distance >= ``width``."""
    if not width > 0:
        raise ValueError("width must be positive")
    return smooth_bump_1d((np.asarray(grid, dtype=float) - center) / width).astype(complex)


def window_energy_check(sys: WaveletSystem, j: int, kind: str, axis: np.ndarray, fhat: np.ndarray) -> dict:
    """Sum_k ||omega_k fhat||^2 against overlap * ||omega||_inf^2 * ||fhat||^2."""
    delta = axis[1] - axis[0]
    lo, hi = axis[0], axis[-1]
    L = sys.support_len
    ks = range(math.floor(2**j * lo) - L, math.ceil(2**j * hi) + 1)
    W = np.stack([sample_factor(sys, kind, j, k, axis) for k in ks])
    lhs = float(np.sum(np.abs(W * fhat) ** 2) * delta)
    sup = float(np.abs(W).max())
    overlap = int((np.abs(W) > 0).sum(axis=0).max())
    rhs = overlap * sup**2 * float(np.sum(np.abs(fhat) ** 2) * delta)
    return {"lhs": lhs, "rhs": rhs, "overlap": overlap, "sup": sup,
            "sup_bound": 2 ** (j / 2) * sys.sup_norm(), "holds": lhs <= rhs * (1 + 1e-12)}
