"""Wavelet coefficients of sampled multipliers and the checks built on them.

Coefficients are rectangle-rule inner products on the multiplier's dyadic
grid.  ``analyze`` evaluates them with a zero-padded separable Mallat
recursion; ``analyze(..., method="matrix")`` evaluates the same sums by
explicit per-axis quadrature matrices and serves as the independent route.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from trimult.errors import RefusalError
from trimult.multipliers import MultiplierGrid
from trimult.wavelet_frame import (
    FATHER,
    MOTHER,
    FrameIndex,
    WaveletSystem,
    admissible_types,
    dyadic_level,
    highpass_from_lowpass,
    sample_factor,
    translation_range,
)

DROP_RELATIVE = 1e-14


@dataclass(eq=False)
class CoeffTensor:
    """Sparse coefficients grouped by ``(j, G)``.

    ``blocks[(j, G)] = (n, b)`` with ``n`` an integer array of shape
    ``(count, dim)`` in lexicographic order and ``b`` the matching values.
    """

    dim: int
    j_max: int
    blocks: dict = field(default_factory=dict)
    source_meta: dict = field(default_factory=dict)

    def keys(self):
        return sorted(self.blocks, key=lambda k: (k[0], k[1]))

    def __len__(self) -> int:
        return sum(len(b) for _, b in self.blocks.values())

    def block(self, j: int, G: str) -> tuple[np.ndarray, np.ndarray]:
        if (j, G) in self.blocks:
            return self.blocks[(j, G)]
        return np.zeros((0, self.dim), dtype=np.int64), np.zeros(0)

    def items(self):
        for key in self.keys():
            n, b = self.blocks[key]
            for row, val in zip(n, b):
                yield FrameIndex(key[0], key[1], tuple(row)), float(val)

    def entries(self) -> dict:
        return dict(self.items())

    def get(self, idx: FrameIndex) -> float:
        n, b = self.block(idx.j, idx.G)
        if len(b) == 0:
            return 0.0
        hit = np.all(n == np.asarray(idx.n), axis=1)
        return float(b[hit][0]) if hit.any() else 0.0

    def energy(self) -> float:
        return float(sum(np.sum(b**2) for _, b in self.blocks.values()))

    def sup_at_scale(self, j: int, G: str | None = None) -> float:
        vals = [np.abs(b).max() for (jj, g), (_, b) in self.blocks.items()
                if jj == j and (G is None or g == G) and len(b)]
        return float(max(vals)) if vals else 0.0

    def restrict(self, family) -> CoeffTensor:
        """Sub-tensor on a collection of FrameIndex; absent indices are refused."""
        grouped: dict = {}
        for idx in family:
            grouped.setdefault((idx.j, idx.G), []).append(idx.n)
        out = CoeffTensor(self.dim, self.j_max, {}, dict(self.source_meta))
        for key, ns in grouped.items():
            n_all, b_all = self.block(*key)
            lookup = {tuple(r): i for i, r in enumerate(n_all.tolist())}
            rows = []
            for nn in ns:
                if tuple(nn) not in lookup:
                    raise RefusalError(f"index {key}, n={tuple(nn)} is not in the tensor")
                rows.append(lookup[tuple(nn)])
            rows = np.unique(np.array(rows, dtype=np.int64))
            out.blocks[key] = (n_all[rows], b_all[rows])
        return out

    def scaled(self, lam: float) -> CoeffTensor:
        return CoeffTensor(self.dim, self.j_max,
                           {k: (n, lam * b) for k, (n, b) in self.blocks.items()},
                           dict(self.source_meta))

    def to_jsonl(self) -> str:
        lines = []
        for idx, val in self.items():
            lines.append(json.dumps({"j": idx.j, "G": idx.G, "n": list(idx.n), "b": float(format(val, ".17g"))}))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, dim: int, j_max: int) -> CoeffTensor:
        grouped: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            grouped.setdefault((rec["j"], rec["G"]), []).append((tuple(rec["n"]), rec["b"]))
        out = cls(dim, j_max)
        for key, rows in grouped.items():
            rows.sort()
            out.blocks[key] = (np.array([r[0] for r in rows], dtype=np.int64).reshape(-1, dim),
                               np.array([r[1] for r in rows], dtype=float))
        return out


def from_entries(entries: dict, dim: int, j_max: int | None = None) -> CoeffTensor:
    grouped: dict = {}
    for idx, val in entries.items():
        grouped.setdefault((idx.j, idx.G), []).append((idx.n, float(val)))
    jm = max((k[0] for k in grouped), default=0) if j_max is None else j_max
    out = CoeffTensor(dim, jm)
    for key, rows in grouped.items():
        rows.sort()
        out.blocks[key] = (np.array([r[0] for r in rows], dtype=np.int64).reshape(-1, dim),
                           np.array([r[1] for r in rows], dtype=float))
    return out


def _grid_level(m: MultiplierGrid, sys: WaveletSystem) -> tuple[int, np.ndarray]:
    s = dyadic_level(m.spacing)
    if s is None:
        raise RefusalError(f"grid spacing {m.spacing} is not a power of two")
    if s > sys.resolution_levels:
        raise RefusalError(f"grid level {s} exceeds the wavelet tables (level {sys.resolution_levels})")
    start = np.array(m.origin) * 2.0**s
    if np.any(np.abs(start - np.rint(start)) > 1e-7):
        raise RefusalError("grid origin is not on the dyadic lattice")
    return s, np.rint(start).astype(np.int64)


def _check_resolution(s: int, j_max: int) -> None:
    if s < j_max + 2:
        raise RefusalError(
            f"resolution 2^{s} per unit is too coarse for j_max={j_max}; "
            f"need at least 2^{j_max + 2}"
        )


def _down(A: np.ndarray, off: int, filt: np.ndarray, axis: int) -> tuple[np.ndarray, int]:
    """out[n] = sum_k filt[k] A[2n + k] along one axis (zero padded)."""
    L = len(filt)
    A = np.moveaxis(A, axis, 0)
    length = A.shape[0]
    new_off = -((L - 1 - off) // 2)  # ceil((off - L + 1) / 2)
    last = (off + length - 1) // 2
    nb = last - new_off + 1
    pl = off - 2 * new_off
    total = 2 * (nb - 1) + L
    Pd = np.zeros((total,) + A.shape[1:])
    Pd[pl:pl + length] = A
    out = np.zeros((nb,) + A.shape[1:])
    for k in range(L):
        out += filt[k] * Pd[k:k + 2 * nb - 1:2]
    return np.moveaxis(out, 0, axis), new_off


def _up(A: np.ndarray, off: int, filt: np.ndarray, axis: int) -> tuple[np.ndarray, int]:
    """Transpose of ``_down``: out[2n + k] += filt[k] A[n]."""
    L = len(filt)
    A = np.moveaxis(A, axis, 0)
    nb = A.shape[0]
    out = np.zeros((2 * (nb - 1) + L,) + A.shape[1:])
    for k in range(L):
        out[k:k + 2 * nb - 1:2] += filt[k] * A
    return np.moveaxis(out, 0, axis), 2 * off


def _sparsify(dense: np.ndarray, offs, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    keep = np.nonzero(np.abs(dense) > cutoff)
    n = np.stack([k + o for k, o in zip(keep, offs)], axis=1).astype(np.int64) if keep[0].size else \
        np.zeros((0, dense.ndim), dtype=np.int64)
    return n, dense[keep].astype(float)


def analyze(m: MultiplierGrid, sys: WaveletSystem, j_max: int = 4, method: str = "mallat") -> CoeffTensor:
    """Coefficients b = <Phi^{j,G}_n, m> for all j <= j_max."""
    s, start = _grid_level(m, sys)
    _check_resolution(s, j_max)
    dim = m.dim
    h = np.asarray(sys.filter)
    g = highpass_from_lowpass(h)
    dense: dict = {}
    if method == "mallat":
        approx = m.values * 2.0 ** (-s * dim / 2)
        offs = [int(v) for v in start]
        for level in range(s - 1, -1, -1):
            bands = {"": (approx, offs)}
            for axis in range(dim):
                nxt = {}
                for key, (arr, o) in bands.items():
                    for kind, filt in ((FATHER, h), (MOTHER, g)):
                        out, no = _down(arr, o[axis], filt, axis)
                        nxt[key + kind] = (out, o[:axis] + [no] + o[axis + 1:])
                bands = nxt
            approx, offs = bands.pop(FATHER * dim)
            if level <= j_max:
                for G, (arr, o) in bands.items():
                    dense[(level, G)] = (arr, o)
            if level == 0:
                dense[(0, FATHER * dim)] = (approx, offs)
    elif method == "matrix":
        axes = m.axes()
        vol = m.cell_volume
        lo, hi = m.box
        for j in range(j_max + 1):
            for G in admissible_types(j, dim):
                mats, offs = [], []
                for r in range(dim):
                    ns = translation_range(sys, j, axes[r][0], axes[r][-1])
                    # discrete tables are nonzero at a support endpoint, so widen by one
                    ns = range(ns.start - 1, ns.stop + 1)
                    mats.append(np.stack([sample_factor(sys, G[r], j, n, axes[r]) for n in ns]))
                    offs.append(ns.start)
                arr = m.values
                for r in range(dim):
                    arr = np.tensordot(arr, mats[r], axes=([0], [1]))
                dense[(j, G)] = (arr * vol, offs)
    else:
        raise ValueError(f"unknown method {method!r}")
    biggest = max((np.abs(a).max() for a, _ in dense.values() if a.size), default=0.0)
    cutoff = DROP_RELATIVE * biggest if biggest > 0 else np.inf
    out = CoeffTensor(dim, j_max, {}, {"grid_level": s, "origin": list(m.origin),
                                       "shape": list(m.shape), "method": method})
    for key in sorted(dense, key=lambda k: (k[0], k[1])):
        arr, offs = dense[key]
        n, b = _sparsify(arr, offs, cutoff)
        if len(b):
            out.blocks[key] = (n, b)
    return out


def _dense_block(n: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, list[int]]:
    lo = n.min(axis=0)
    hi = n.max(axis=0)
    arr = np.zeros(tuple(hi - lo + 1))
    arr[tuple((n - lo).T)] = b
    return arr, [int(v) for v in lo]


def reconstruct(c: CoeffTensor, sys: WaveletSystem, like: MultiplierGrid) -> MultiplierGrid:
    """Sum of b * Phi over all entries, sampled on the grid of ``like``."""
    if len(c) == 0:
        raise RefusalError("cannot reconstruct from an empty tensor")
    s = dyadic_level(like.spacing)
    aligned = s is not None and s >= c.j_max + 1 and s <= sys.resolution_levels
    if aligned:
        start = np.array(like.origin) * 2.0**s
        aligned = bool(np.all(np.abs(start - np.rint(start)) < 1e-7))
    if aligned:
        values = _synthesize(c, sys, s, np.rint(start).astype(np.int64), like.shape)
    else:
        values = _reconstruct_matrix(c, sys, like.axes())
    return like.with_values(values)


def _embed(canvas, canvas_off, arr, offs):
    idx = tuple(slice(o - co, o - co + n) for o, co, n in zip(offs, canvas_off, arr.shape))
    canvas[idx] += arr


def _synthesize(c: CoeffTensor, sys, s, start, shape) -> np.ndarray:
    dim = c.dim
    h = np.asarray(sys.filter)
    g = highpass_from_lowpass(h)
    filters = {FATHER: h, MOTHER: g}
    dense = {k: _dense_block(*v) for k, v in c.blocks.items() if len(v[1])}
    approx = dense.get((0, FATHER * dim))
    if approx is None:
        approx = (np.zeros((1,) * dim), [0] * dim)
    for level in range(0, s):
        pieces = []
        for G in itertools.product(FATHER + MOTHER, repeat=dim):
            G = "".join(G)
            src = approx if G == FATHER * dim else dense.get((level, G))
            if src is None:
                continue
            arr, offs = src
            offs = list(offs)
            for axis in range(dim):
                arr, offs[axis] = _up(arr, offs[axis], filters[G[axis]], axis)
            pieces.append((arr, offs))
        lo = np.min([p[1] for p in pieces], axis=0)
        hi = np.max([np.array(p[1]) + np.array(p[0].shape) for p in pieces], axis=0)
        canvas = np.zeros(tuple(hi - lo))
        for arr, offs in pieces:
            _embed(canvas, lo, arr, offs)
        approx = (canvas, [int(v) for v in lo])
    arr, offs = approx
    out = np.zeros(shape)
    src_idx, dst_idx = [], []
    for r in range(dim):
        a0 = max(int(start[r]), offs[r])
        a1 = min(int(start[r]) + shape[r], offs[r] + arr.shape[r])
        if a1 <= a0:
            return out
        src_idx.append(slice(a0 - offs[r], a1 - offs[r]))
        dst_idx.append(slice(a0 - int(start[r]), a1 - int(start[r])))
    out[tuple(dst_idx)] = arr[tuple(src_idx)]
    return out * 2.0 ** (s * dim / 2)


def _reconstruct_matrix(c: CoeffTensor, sys, axes) -> np.ndarray:
    out = np.zeros(tuple(len(a) for a in axes))
    for (j, G), (n, b) in c.blocks.items():
        if not len(b):
            continue
        arr, offs = _dense_block(n, b)
        for r in range(c.dim):
            mat = np.stack([sample_factor(sys, G[r], j, offs[r] + i, axes[r]) for i in range(arr.shape[0])])
            arr = np.tensordot(arr, mat, axes=([0], [0]))
        out += arr
    return out


def coefficient(m: MultiplierGrid, sys: WaveletSystem, idx: FrameIndex) -> float:
    """Single coefficient by direct rectangle-rule quadrature."""
    val = m.values
    for r, ax in enumerate(m.axes()):
        f = sample_factor(sys, idx.G[r], idx.j, idx.n[r], ax)
        val = np.tensordot(val, f, axes=([0], [0]))
    return float(val) * m.cell_volume


def frame_norm_lq(c: CoeffTensor, q: float, sys: WaveletSystem | None = None) -> float:
    """L^q norm of the square function sum |b 2^{dim j/2} chi_{Q_jn}|^2.

    ``Q_jn`` is the cube centered at ``2^-j n`` with side ``2^(1-j)``.  Cube
    faces sit on the ``2^-j`` lattice, so the integral is exact on cells of
    side ``2^-j_max``.
    """
    if not 1 <= q < np.inf:
        raise ValueError("need 1 <= q < inf")
    dim = c.dim
    per_scale: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for (j, G), (n, b) in c.blocks.items():
        if len(b):
            prev = per_scale.get(j)
            pair = (n, b**2 * 2.0 ** (dim * j))
            per_scale[j] = pair if prev is None else (np.vstack([prev[0], pair[0]]), np.concatenate([prev[1], pair[1]]))
    if not per_scale:
        return 0.0
    J = max(per_scale)
    # cell index c covers [c, c+1) * 2^-J; the cube of (j, n) covers cells
    # [(n - 1) 2^(J-j), (n + 1) 2^(J-j))
    lows, highs = [], []
    for j, (n, _) in per_scale.items():
        f = 2 ** (J - j)
        lows.append((n.min(axis=0) - 1) * f)
        highs.append((n.max(axis=0) + 1) * f)
    lo = np.min(lows, axis=0)
    hi = np.max(highs, axis=0)
    S = np.zeros(tuple(hi - lo))
    for j, (n, w) in per_scale.items():
        f = 2 ** (J - j)
        clo = (n.min(axis=0) - 1)
        coarse = np.zeros(tuple(n.max(axis=0) - clo + 1))
        # each entry deposits on the 2^dim coarse cells [n-1, n+1)
        for shift in itertools.product((-1, 0), repeat=dim):
            np.add.at(coarse, tuple((n + np.array(shift) - clo).T), w)
        fine = coarse
        for axis in range(dim):
            fine = np.repeat(fine, f, axis=axis)
        start = clo * f - lo
        S[tuple(slice(a, a + e) for a, e in zip(start, fine.shape))] += fine
    cell = 2.0 ** (-J * dim)
    return float((np.sum(S ** (q / 2)) * cell) ** (1 / q))


def lq_coeff_bound_check(c: CoeffTensor, q: float, m_norm_q: float, limit: float = np.inf) -> dict:
    """Per-(j, G) ratio ||b||_q / (2^{dim j (1/q - 1/2)} ||m||_q)."""
    rows = []
    for (j, G) in c.keys():
        _, b = c.blocks[(j, G)]
        bq = float(np.sum(np.abs(b) ** q) ** (1 / q))
        denom = 2.0 ** (c.dim * j * (1 / q - 0.5)) * m_norm_q
        ratio = bq / denom if denom > 0 else (0.0 if bq == 0 else np.inf)
        rows.append({"j": j, "G": G, "lq": bq, "ratio": ratio, "flag": ratio > limit})
    per_j: dict[int, float] = {}
    for r in rows:
        per_j[r["j"]] = max(per_j.get(r["j"], 0.0), r["ratio"])
    js = sorted(j for j in per_j if j >= 1 and per_j[j] > 0)
    slope = float(np.polyfit(js, np.log2([per_j[j] for j in js]), 1)[0]) if len(js) >= 2 else 0.0
    return {"q": q, "rows": rows, "max_ratio_per_j": per_j,
            "max_ratio": max(per_j.values(), default=0.0), "log2_slope": slope,
            "flagged": [r for r in rows if r["flag"]]}


def decay_slope(c: CoeffTensor, per_type: bool = False, j_range: tuple[int, int] | None = None):
    """Least-squares slope of log2 sup_n |b^{j,G}_n| against j.

    The fit runs for every type G over scales ``1..j_max``; the returned slope
    is the worst (largest) one, so a uniform-in-G decay bound is what passes.
    """
    j_lo, j_hi = (1, c.j_max) if j_range is None else j_range
    js = list(range(j_lo, j_hi + 1))
    if len(js) < 3:
        raise RefusalError("need at least 3 scales to fit a decay slope")
    slopes = {}
    for G in admissible_types(1, c.dim):
        sups = [c.sup_at_scale(j, G) for j in js]
        if min(sups) <= 0:
            continue
        slopes[G] = float(np.polyfit(js, np.log2(sups), 1)[0])
    if not slopes:
        raise RefusalError("no type has nonzero coefficients at every scale")
    worst = max(slopes.values())
    return (worst, slopes) if per_type else worst


def dilation_covariance_check(sys: WaveletSystem, func, d: int, i: int, j: int, lo, hi,
                              s: int, tol: float = 1e-4) -> dict:
    """Compare <Phi^{j,G}_n, m(2^i .)> with 2^{-dim i/2} <Phi^{j-i,G}_n, m>.

    Both sides are independent quadratures: the left samples ``m(2^i x)`` on
    a ``2^-s`` grid over ``[lo, hi]``, the right samples ``m`` on the
    ``2^-(s-i)`` grid over the dilated box.
    """
    from trimult.multipliers import sample

    dim = 3 * d
    if not 0 <= j - i or j > s or s - i > sys.resolution_levels or s > sys.resolution_levels:
        raise RefusalError(f"scales j={j}, j-i={j - i} do not fit the grid level {s}")
    lhs_grid = sample(lambda *x: func(*(2.0**i * xi for xi in x)), d, lo, hi, 2.0**-s)
    rhs_grid = sample(func, d, np.asarray(lo) * 2.0**i, np.asarray(hi) * 2.0**i, 2.0 ** (i - s))
    types = admissible_types(j, dim)
    lhs_vals, rhs_vals, labels = [], [], []
    for G in types:
        ranges = [translation_range(sys, j, lhs_grid.axes()[r][0], lhs_grid.axes()[r][-1]) for r in range(dim)]
        for n in itertools.islice(itertools.product(*ranges), 0, None, 7):
            lhs = coefficient(lhs_grid, sys, FrameIndex(j, G, n))
            # the dilated index may leave the admissible set; evaluate the factors directly
            rhs_val = rhs_grid.values
            for r, ax in enumerate(rhs_grid.axes()):
                rhs_val = np.tensordot(rhs_val, sample_factor(sys, G[r], j - i, n[r], ax), axes=([0], [0]))
            rhs = float(rhs_val) * rhs_grid.cell_volume
            lhs_vals.append(lhs)
            rhs_vals.append(2.0 ** (-dim * i / 2) * rhs)
            labels.append((G, n))
    lhs_vals = np.array(lhs_vals)
    rhs_vals = np.array(rhs_vals)
    scale = max(np.abs(rhs_vals).max(), 1e-300)
    err = float(np.abs(lhs_vals - rhs_vals).max() / scale)
    return {"i": i, "j": j, "count": len(labels), "max_rel_error": err, "passed": err <= tol,
            "lhs": lhs_vals, "rhs": rhs_vals}
