"""Randomized-sign counterexample at the q = 3 boundary, d = 1.

Block inputs put equal weight ``2^{-N/2}`` on frequencies ``2^N .. 2^{N+1}-1``.
The multiplier places ``v_l s_l`` on every cube whose three integer centers
sum to ``l``.  On those inputs the operator collapses to a trigonometric
polynomial in ``x`` times ``phi(x)^3``, and its averaged ``2/3`` power grows
like ``N^{1/3}`` while ``||m||_{L^q}`` is finite only for ``q > 3``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate, special

from trimult.errors import RefusalError
from trimult.multipliers import MultiplierGrid, smooth_bump_1d, smooth_step
from trimult.trilinear_engine import OutputField, TestFunctionTriple, inverse_transform, make_bump_hat

I_HALF = 1 / 32  # supp phi^ = [-I_HALF, I_HALF]
J_HALF = 10 * I_HALF  # supp psi = [-J_HALF, J_HALF]
PLATEAU = 0.5  # psi = 1 on [-PLATEAU * J_HALF, PLATEAU * J_HALF]
EXHAUSTIVE_MAX = 12


@dataclass(frozen=True)
class BlockSequences:
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")

    @property
    def lo(self) -> int:
        return 2**self.N

    @property
    def hi(self) -> int:
        return 2 ** (self.N + 1) - 1

    @property
    def weight(self) -> float:
        return 2.0 ** (-self.N / 2)

    def dense(self) -> np.ndarray:
        """a_j for j = 0 .. hi (index 0 unused)."""
        a = np.zeros(self.hi + 1)
        a[self.lo:] = self.weight
        return a

    def active_range(self) -> range:
        return range(3 * self.lo, 3 * self.hi + 1)

    def square_sum(self) -> float:
        """Exact: 2^N squared weights of 2^-N each."""
        return float(np.count_nonzero(self.dense()) * Fraction(1, 2**self.N))


@dataclass(frozen=True)
class SignAssignment:
    signs: dict
    provenance: str = "enumerated"

    def __post_init__(self):
        if any(s not in (-1, 1) for s in self.signs.values()):
            raise ValueError("signs must be +1 or -1")

    def __getitem__(self, l: int) -> int:
        return self.signs[l]

    def flipped(self) -> SignAssignment:
        return SignAssignment({l: -s for l, s in self.signs.items()}, self.provenance + ":flipped")

    @classmethod
    def constant(cls, ls, value: int = 1) -> SignAssignment:
        return cls({int(l): value for l in ls}, "constant")

    @classmethod
    def sampled(cls, ls, rng: np.random.Generator, seed=None) -> SignAssignment:
        ls = list(ls)
        vals = rng.integers(0, 2, len(ls)) * 2 - 1
        return cls({int(l): int(v) for l, v in zip(ls, vals)}, f"sampled({seed})")

    @classmethod
    def rademacher(cls, ls, t) -> SignAssignment:
        """s_l(t) = 1 - 2 * (l-th binary digit of t), exact for rational t."""
        t = Fraction(t)
        if not 0 <= t < 1:
            raise ValueError("t must lie in [0, 1)")
        return cls({int(l): 1 - 2 * (math.floor(t * 2**l) % 2) for l in ls}, f"rademacher_t({t})")


@dataclass(frozen=True)
class VWeights:
    def __call__(self, l):
        l = np.asarray(l, dtype=float)
        out = np.zeros_like(l)
        ok = l >= 3
        out[ok] = np.sqrt(np.log(l[ok] - 1)) / (l[ok] - 1)
        return out

    def at(self, l: int) -> float:
        return float(self(np.array([l]))[0])


def convolution_sum(seqs: BlockSequences, l: int) -> float:
    """S_l = sum over j, k >= 1 with l - j - k >= 1 of a_j b_k c_{l-j-k}."""
    if l < 3:
        raise ValueError("l must be at least 3")
    S = _all_sums(seqs)
    return float(S[l]) if l < len(S) else 0.0


def _all_sums(seqs: BlockSequences) -> np.ndarray:
    a = seqs.dense()
    return np.convolve(np.convolve(a, a), a)


def _triple_loop_sum(seqs: BlockSequences, l: int, order=(0, 1, 2)) -> float:
    """Direct double loop; ``order`` permutes which sequence plays a, b, c."""
    a = seqs.dense()
    seq = [a, a, a]
    x, y, z = (seq[o] for o in order)

    def at(s, i):
        return s[i] if 0 <= i < len(s) else 0.0

    total = 0.0
    for j in range(1, l - 1):
        for k in range(1, l - j):
            total += at(x, j) * at(y, k) * at(z, l - j - k)
    return total


def active_terms(seqs: BlockSequences, vw: VWeights) -> tuple[np.ndarray, np.ndarray]:
    """(l, v_l S_l) over the nonzero window."""
    S = _all_sums(seqs)
    ls = np.arange(len(S))
    keep = (ls >= 3) & (S > 0)
    return ls[keep], vw(ls[keep]) * S[keep]


def proxy_B(seqs: BlockSequences, vw: VWeights) -> float:
    """(sum_l (v_l S_l)^2)^{1/3}."""
    _, c = active_terms(seqs, vw)
    return float(np.sum(c**2) ** (1 / 3))


# ---------------------------------------------------------------- phi and psi

def phi_hat(xi, half: float = I_HALF):
    return make_bump_hat(0.0, half, xi)


def phi_space(x, half: float = I_HALF, quad_points: int = 4097) -> np.ndarray:
    """Continuous inverse transform of ``phi_hat`` by trapezoid quadrature (real, even)."""
    xi = np.linspace(-half, half, quad_points)
    w = np.full(quad_points, xi[1] - xi[0])
    w[[0, -1]] /= 2
    ph = smooth_bump_1d(xi / half) * w
    x = np.asarray(x, dtype=float)
    return np.cos(2 * np.pi * np.outer(x, xi)) @ ph


def phi_l2_squared(half: float = I_HALF) -> float:
    val, _ = integrate.quad(lambda t: float(smooth_bump_1d(np.array([t / half]))[0]) ** 2, -half, half,
                            epsabs=1e-14, epsrel=1e-12)
    return float(val)


def psi(t, half: float = J_HALF, plateau: float = PLATEAU):
    """1 on |t| <= plateau * half, 0 for |t| >= half, smooth in between."""
    t = np.abs(np.asarray(t, dtype=float))
    return smooth_step((half - t) / (half * (1 - plateau)))


# ---------------------------------------------------------------- closed form and multiplier

def closed_form_T(seqs: BlockSequences, signs: SignAssignment, vw: VWeights, x, phi) -> OutputField:
    """phi(x)^3 * sum_l v_l s_l S_l e^{2 pi i x l}.

    ``phi`` is either an array of samples on ``x`` or a callable.
    """
    x = np.asarray(x, dtype=float)
    ph = phi(x) if callable(phi) else np.asarray(phi)
    ls, c = active_terms(seqs, vw)
    s = np.array([signs[int(l)] for l in ls], dtype=float)
    P = np.exp(2j * np.pi * np.outer(x, ls)) @ (s * c)
    dx = float(x[1] - x[0]) if len(x) > 1 else 1.0
    return OutputField(x, ph**3 * P, dx)


def _mt_coeffs(seqs: BlockSequences, signs: SignAssignment, vw: VWeights) -> tuple[np.ndarray, np.ndarray]:
    centers = np.arange(seqs.lo, seqs.hi + 1)
    ls = centers[:, None, None] + centers[None, :, None] + centers[None, None, :]
    v = vw(ls.ravel()).reshape(ls.shape)
    s = np.vectorize(lambda l: signs[int(l)])(ls).astype(float)
    return centers, v * s


def assemble_mt(seqs: BlockSequences, signs: SignAssignment, vw: VWeights, spacing: float = 1 / 16,
                lo: float | None = None, hi: float | None = None) -> MultiplierGrid:
    """Samples of sum v_{j+k+l} s_{j+k+l} psi(xi-j) psi(eta-k) psi(delta-l) over the active blocks.

    The grid carries the closed-form evaluator, so off-lattice requests are exact.
    """
    need_lo, need_hi = seqs.lo - J_HALF, seqs.hi + J_HALF
    lo = need_lo if lo is None else lo
    hi = need_hi if hi is None else hi
    if lo > need_lo + 1e-12 or hi < need_hi - 1e-12:
        raise RefusalError(f"box [{lo}, {hi}] does not cover the active blocks [{need_lo}, {need_hi}]")
    missing = [l for l in seqs.active_range() if l not in signs.signs]
    if missing:
        raise RefusalError(f"no sign for l = {missing[0]}")
    centers, W = _mt_coeffs(seqs, signs, vw)

    def func(xi, eta, delta):
        shape = np.broadcast(xi, eta, delta).shape
        axes = [np.unique(np.ravel(a)) for a in (xi, eta, delta)]
        if np.prod([len(a) for a in axes]) == np.prod(shape):
            # separable product grid: contract per axis
            P = [psi(a[None, :] - centers[:, None]) for a in axes]
            vals = np.einsum("jkl,ja,kb,lc->abc", W, *P, optimize=True)
            idx = [np.searchsorted(a, np.broadcast_to(v, shape)) for a, v in zip(axes, (xi, eta, delta))]
            return vals[tuple(idx)]
        pts = [np.broadcast_to(v, shape).ravel() for v in (xi, eta, delta)]
        P = [psi(p[None, :] - centers[:, None]) for p in pts]
        return np.einsum("jkl,ja,ka,la->a", W, *P, optimize=True).reshape(shape)

    axis = lo + spacing * np.arange(int(math.floor((hi - lo) / spacing + 1e-9)) + 1)
    P = psi(axis[None, :] - centers[:, None])
    values = np.einsum("jkl,ja,kb,lc->abc", W, P, P, P, optimize=True)
    return MultiplierGrid(1, (lo, lo, lo), spacing, values, func)


def mt_lq_count(seqs: BlockSequences, vw: VWeights, q: float, quad_points: int = 20001) -> float:
    """(int |psi|^q)^3 * sum over block triples of v_{j+k+l}^q: ||m_t||_q^q when bumps are disjoint."""
    t = np.linspace(-J_HALF, J_HALF, quad_points)
    a_psi = float(integrate.trapezoid(np.abs(psi(t)) ** q, t))
    centers = np.arange(seqs.lo, seqs.hi + 1)
    ls = (centers[:, None, None] + centers[None, :, None] + centers[None, None, :]).ravel()
    return a_psi**3 * float(np.sum(vw(ls) ** q))


def block_inputs(seqs: BlockSequences, spacing: float = 1 / 64) -> TestFunctionTriple:
    """f^ = g^ = h^ = sum_j a_j phi^(xi - j) on a lattice of the given spacing."""
    n_per = round(1 / spacing)
    if abs(n_per * spacing - 1) > 1e-12:
        raise RefusalError("spacing must divide 1")
    axis = seqs.lo - J_HALF + spacing * np.arange(int(round((seqs.hi - seqs.lo + 2 * J_HALF) / spacing)) + 1)
    axis = np.round(axis / spacing) * spacing
    f = np.zeros(len(axis), dtype=complex)
    for j in range(seqs.lo, seqs.hi + 1):
        f += seqs.weight * phi_hat(axis - j)
    return TestFunctionTriple((axis, axis, axis), (f, f, f))


def lattice_phi(spacing: float, x) -> np.ndarray:
    """Riemann-sum inverse transform of phi^ on the lattice spacing * Z."""
    k = int(math.ceil(I_HALF / spacing))
    axis = spacing * np.arange(-k, k + 1)
    return inverse_transform(axis, phi_hat(axis), np.asarray(x, dtype=float)).real


# ---------------------------------------------------------------- averages

def _poly_grid(ls: np.ndarray, oversample: int = 8) -> int:
    return int(2 ** math.ceil(math.log2(oversample * (ls.max() + 1))))


def _mean_two_thirds(ls: np.ndarray, coeffs: np.ndarray, sign_rows: np.ndarray, U: int) -> np.ndarray:
    """int_0^1 |sum_l eps_l c_l e^{2 pi i u l}|^{2/3} du for each row of signs."""
    spectrum = np.zeros((len(sign_rows), U), dtype=complex)
    spectrum[:, ls % U] = sign_rows * coeffs
    P = np.fft.ifft(spectrum, axis=1) * U
    return np.mean(np.abs(P) ** (2 / 3), axis=1)


def khinchin_average(seqs: BlockSequences, vw: VWeights, num_signs: int = 256, seed: int = 0,
                     oversample: int = 8) -> dict:
    """A_N = average over signs of ||T||_{2/3}^{2/3} next to B_N.

    Uses the exact identity ``int |phi|^2 |P|^{2/3} dx = ||phi||_2^2 int_0^1 |P|^{2/3}``,
    valid because ``phi^`` is supported in an interval shorter than 1.
    """
    if num_signs < 64:
        raise ValueError("num_signs must be at least 64")
    ls, c = active_terms(seqs, vw)
    U = _poly_grid(ls, oversample)
    if len(ls) <= EXHAUSTIVE_MAX:
        rows = np.array(list(itertools.product((-1.0, 1.0), repeat=len(ls))))
        mode = "enumerated"
    else:
        rng = np.random.default_rng(seed)
        rows = rng.integers(0, 2, (num_signs, len(ls))) * 2.0 - 1
        mode = f"sampled({seed})"
    vals = np.concatenate([_mean_two_thirds(ls, c, rows[i:i + 256], U) for i in range(0, len(rows), 256)])
    vals *= phi_l2_squared()
    A = float(vals.mean())
    B = proxy_B(seqs, vw)
    best = int(np.argmax(vals))
    return {
        "N": seqs.N, "A": A, "B": B, "ratio": A / B, "mode": mode, "samples": len(rows),
        "ci_half_width": float(1.96 * vals.std(ddof=1) / math.sqrt(len(vals))) if mode != "enumerated" else 0.0,
        "best_value": float(vals[best]),
        "best_signs": SignAssignment({int(l): int(s) for l, s in zip(ls, rows[best])}, mode),
    }


def growth_fit(N_range=range(2, 9), num_signs: int = 256, seed: int = 0) -> dict:
    """A_N and B_N across N with log-log slopes against N."""
    N_range = list(N_range)
    if min(N_range) < 2 or max(N_range) > 8:
        raise RefusalError("N must lie in [2, 8]")
    vw = VWeights()
    rows = [khinchin_average(BlockSequences(N), vw, num_signs, seed + N) for N in N_range]
    logN = np.log(N_range)
    slope_A = float(np.polyfit(logN, np.log([r["A"] for r in rows]), 1)[0]) if len(rows) > 1 else float("nan")
    slope_B = float(np.polyfit(logN, np.log([r["B"] for r in rows]), 1)[0]) if len(rows) > 1 else float("nan")
    return {"rows": rows, "slope_A": slope_A, "slope_B": slope_B,
            "A_nondecreasing": bool(all(b["A"] >= a["A"] for a, b in zip(rows, rows[1:])))}


def stitch_signs(best_by_N: dict) -> SignAssignment:
    """sigma_l = best sign of block N on that block's window; windows of distinct N are disjoint."""
    out = {}
    for N, sa in sorted(best_by_N.items()):
        for l in BlockSequences(N).active_range():
            if l in out:
                raise RefusalError(f"windows overlap at l = {l}")
            out[l] = sa.signs.get(l, 1)
    return SignAssignment(out, "stitched")


def two_thirds_power(field: OutputField) -> float:
    return float(np.sum(np.abs(field.samples) ** (2 / 3)) * field.cell_volume)


# ---------------------------------------------------------------- q boundary

@dataclass
class BoundaryReport:
    q: float
    L_max: int
    P_max: float
    ratio: float
    tail: float
    tail_fraction: float
    verdict: str
    partials: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"q": self.q, "L_max": self.L_max, "P_max": self.P_max, "ratio": self.ratio,
                "tail": self.tail, "tail_fraction": self.tail_fraction, "verdict": self.verdict,
                "partials": {str(k): v for k, v in self.partials.items()}}


def boundary_tail(q: float, L: float) -> float:
    """int_{L-1}^inf (log y)^{q/2} y^{2-q} dy in closed form (incomplete gamma), q > 3."""
    if q <= 3:
        return float("inf")
    beta = q - 3
    a = math.log(L - 1)
    return float(special.gamma(q / 2 + 1) * special.gammaincc(q / 2 + 1, beta * a) / beta ** (q / 2 + 1))


def _boundary_partials(q: float, L_max: int, marks, chunk: int = 2_000_000) -> dict:
    out = {}
    total = 0.0
    marks = sorted(set(marks))
    for start in range(3, L_max + 1, chunk):
        l = np.arange(start, min(start + chunk, L_max + 1), dtype=float)
        y = l - 1
        c = total + np.cumsum(np.log(y) ** (q / 2) * y ** (2 - q))
        for mk in marks:
            if start <= mk < start + len(l):
                out[mk] = float(c[mk - start])
        total = float(c[-1])
    return out


def lq_boundary_check(q: float, L_max: int = 10**6, vw: VWeights | None = None) -> BoundaryReport:
    """Partial sums P(L) of (log(l-1))^{q/2} (l-1)^{2-q} over 3 <= l <= L, with a verdict.

    ``ratio`` is P(L_max) / P(L_max / 10); the tail beyond L_max is the
    integral of the summand, so ``tail_fraction < 1%`` reads as converged.
    """
    if not q > 0:
        raise RefusalError("q must be positive")
    if L_max < 1000:
        raise RefusalError("L_max must be at least 1000")
    marks = [10**k for k in range(3, int(math.log10(L_max)) + 1)] + [L_max // 10, L_max]
    partials = _boundary_partials(q, L_max, marks)
    P = partials[L_max]
    ratio = P / partials[L_max // 10]
    tail = boundary_tail(q, L_max)
    frac = tail / (P + tail) if math.isfinite(tail) else 1.0
    if frac < 0.01:
        verdict = "converged"
    elif ratio > 1.5:
        verdict = "diverging"
    else:
        verdict = "undecided"
    return BoundaryReport(q, L_max, P, ratio, tail, frac, verdict, partials)
