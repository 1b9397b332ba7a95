"""Sufficiency-side checks: piece envelopes, summability, smoothness threshold and norm probes."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from trimult.coeff_analysis import CoeffTensor
from trimult.errors import RefusalError
from trimult.index_partition import WeightedIndexSet, level_sets
from trimult.multipliers import GaussianMixture, MultiplierGrid, random_gaussian_mixture, sample
from trimult.trilinear_engine import (
    TestFunctionTriple, apply_direct, apply_wavelet_form, make_bump_hat, partial_field,
    period_grid, quasi_norm,
)
from trimult.wavelet_frame import WaveletSystem, sample_factor

P_OUT = 2 / 3


def required_smoothness(q: float, d: int) -> int:
    """M_q = floor(3d / (3 - q)) + 1 for 1 <= q < 3."""
    if not 1 <= q < 3:
        raise RefusalError(f"q = {q} is outside [1, 3)")
    if d < 1:
        raise RefusalError("d must be a positive integer")
    val = 3 * d / (3 - q)
    # guard against representation error when 3d/(3-q) is an exact integer
    fl = math.floor(val + 1e-12) if abs(val - round(val)) < 1e-9 else math.floor(val)
    return int(fl) + 1


@dataclass
class BoundReport:
    kind: str
    rows: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "constants": self.constants, "flags": self.flags, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonify)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        cols = sorted({k for r in self.rows for k in r if not isinstance(r[k], (list, dict))})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
        return buf.getvalue()


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else v


def _jsonify(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ---------------------------------------------------------------- piece envelope

def piece_axes(sys: WaveletSystem, j: int, keys: np.ndarray, sub_levels: int = 4) -> list[np.ndarray]:
    """Per-coordinate frequency lattices covering the union of the piece's windows."""
    h = 2.0 ** -(j + sub_levels)
    L = sys.support_len
    out = []
    for i in range(3):
        lo = 2.0**-j * keys[:, i].min()
        hi = 2.0**-j * (keys[:, i].max() + L)
        out.append(lo + h * np.arange(int(round((hi - lo) / h)) + 1))
    return out


def _piece_trials(sys, j, G, piece: WeightedIndexSet, axes, trials, rng):
    """Windows of single members, signed sums of windows, and smooth noise on the hull."""
    keys = piece.keys
    out = []
    for t in range(trials):
        mode = t % 3
        fh = []
        for i in range(3):
            ax = axes[i]
            if mode == 0:
                k = keys[rng.integers(len(keys)), i]
                f = sample_factor(sys, G[i], j, int(k), ax).astype(complex)
            elif mode == 1:
                ks = np.unique(keys[:, i])
                ph = np.exp(2j * np.pi * rng.random(len(ks)))
                f = sum(p * sample_factor(sys, G[i], j, int(k), ax) for p, k in zip(ph, ks))
            else:
                f = (rng.standard_normal(len(ax)) + 1j * rng.standard_normal(len(ax)))
                f *= make_bump_hat((ax[0] + ax[-1]) / 2, (ax[-1] - ax[0]) / 2 + 1e-9, ax)
            if not np.any(f):
                f = make_bump_hat((ax[0] + ax[-1]) / 2, (ax[-1] - ax[0]) / 2 + 1e-9, ax)
            fh.append(f)
        out.append(TestFunctionTriple(tuple(axes), tuple(fh)))
    return out


def lemma8_piece_check(piece: WeightedIndexSet, j: int, G: str, sys: WaveletSystem, r: int, C: int,
                       b_sup: float, trials: int = 6, seed: int = 0, piece_id=None) -> dict:
    """Worst measured L^{2/3} ratio of one piece against 2^{3jd/2} 2^{-r} ||b||_inf C^{1/3}."""
    d = piece.d
    envelope = 2.0 ** (3 * j * d / 2) * 2.0**-r * b_sup * C ** (1 / 3)
    row = {"piece_id": piece_id, "j": j, "G": G, "r": r, "C": C, "size": len(piece),
           "envelope": envelope, "ratio": 0.0, "constant": 0.0}
    if len(piece) == 0:
        return row
    if d != 1:
        raise RefusalError("the engine runs with d = 1 only")
    c = CoeffTensor(3, j, {(j, G): (piece.keys, piece.weights)})
    axes = piece_axes(sys, j, piece.keys)
    rng = np.random.default_rng(seed)
    best = 0.0
    for fns in _piece_trials(sys, j, G, piece, axes, trials, rng):
        x = period_grid(fns)
        val = quasi_norm(apply_wavelet_form(c, sys, fns, x), P_OUT) / fns.norm_product()
        best = max(best, val)
    row["ratio"] = best
    row["constant"] = best / envelope if envelope > 0 else 0.0
    return row


def collect_pieces(c: CoeffTensor, scales, tree_builder, limit_per_block: int | None = None, seed: int = 0):
    """(piece, j, G, r, C, ||b||_inf) for every piece of every (j, G) block at the given scales."""
    rng = np.random.default_rng(seed)
    out = []
    for (j, G) in c.keys():
        if j not in scales or j == 0:
            continue
        n, b = c.blocks[(j, G)]
        if not len(b):
            continue
        S = WeightedIndexSet(n, b)
        tree = tree_builder(S)
        found = [(p, node, ctx) for p, node, ctx in tree.pieces()]
        if limit_per_block is not None and len(found) > limit_per_block:
            pick = rng.choice(len(found), limit_per_block, replace=False)
            found = [found[i] for i in sorted(pick)]
        for p, node, ctx in found:
            out.append((p, j, G, ctx["r"], ctx["C"], S.sup(), node.op))
    return out


def envelope_sweep(pieces, sys: WaveletSystem, trials: int = 6, seed: int = 0) -> BoundReport:
    rep = BoundReport("envelope")
    for pid, (p, j, G, r, C, bsup, op) in enumerate(pieces):
        row = lemma8_piece_check(p, j, G, sys, r, C, bsup, trials, seed + pid, pid)
        row["op"] = op
        rep.rows.append(row)
    good = [r for r in rep.rows if r["constant"] > 0]
    consts = np.array([r["constant"] for r in good])
    rep.constants["max_constant"] = float(consts.max()) if len(consts) else 0.0
    rep.constants["median_constant"] = float(np.median(consts)) if len(consts) else 0.0
    rep.constants["slope_vs_size"] = _slope([r["size"] for r in good], consts)
    rep.constants["slope_vs_j"] = _slope([2.0 ** r["j"] for r in good], consts)
    # the discrepant 2^{3jd/3} envelope, for deciding which one the data saturates
    alt = np.array([r["constant"] * 2.0 ** (r["j"] / 2) for r in good])
    rep.constants["slope_vs_j_alt_envelope"] = _slope([2.0 ** r["j"] for r in good], alt)
    rep.flags["no_growth"] = bool(rep.constants["slope_vs_size"] <= 0.05 and rep.constants["slope_vs_j"] <= 0.05)
    return rep


def _slope(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.ptp(np.log2(xs)) == 0:
        return 0.0
    return float(np.polyfit(np.log2(xs), np.log2(ys), 1)[0])


# ---------------------------------------------------------------- summability

def summability_audit(c: CoeffTensor, q: float, K: int, m_norm_q: float, r_max: int = 40) -> BoundReport:
    """Per-(j, r) envelopes 2^{jd(5/2-q/2)} 2^{r(q/3-1)} ||b_j||_inf^{1-q/3} ||m||_q^{q/3} and their sums."""
    if q < 1:
        raise RefusalError("q must be at least 1")
    d = c.dim // 3
    rep = BoundReport("summability")
    rho = 2.0 ** (q / 3 - 1)
    diverging = rho >= 1
    mq = m_norm_q ** (q / 3)
    per_j = {}
    for j in range(c.j_max + 1):
        bj = max((c.sup_at_scale(j, G) for (jj, G) in c.keys() if jj == j), default=0.0)
        base = 2.0 ** (j * d * (2.5 - q / 2)) * bj ** (1 - q / 3) * mq
        terms = base * rho ** np.arange(r_max + 1)
        per_j[j] = float(terms.sum())
        rep.rows.append({"j": j, "b_sup": bj, "r0_term": base, "r_sum": per_j[j]})
        lv, _ = level_sets(WeightedIndexSet(*_scale_set(c, j)), r_max=r_max) if bj > 0 else ({}, None)
        measured = sum(2.0 ** (3 * j * d / 2) * 2.0**-r * bj * len(U) ** (1 / 3) for r, U in lv.items())
        rep.rows[-1]["measured_piece_sum"] = float(measured)
    total = float(sum(per_j.values()))
    js = [j for j in per_j if j >= 1 and per_j[j] > 0]
    fitted = float(np.polyfit(js, np.log2([per_j[j] for j in js]), 1)[0]) if len(js) >= 2 else float("nan")
    rep.constants.update({
        "q": q, "K": K, "d": d, "r_ratio": rho, "total": total, "m_term": mq,
        "total_over_m_term": total / mq if mq > 0 else float("inf"),
        "condition_lhs": (K + d + 1) * (1 - q / 3), "condition_rhs": d,
        "envelope_j_exponent": d * (2.5 - q / 2) - (K + d + 1) * (1 - q / 3),
        "fitted_j_slope": fitted,
    })
    rep.flags.update({
        "diverging_in_r": bool(diverging),
        "condition_holds": bool((K + d + 1) * (1 - q / 3) > d),
        "envelope_summable_in_j": bool(rep.constants["envelope_j_exponent"] < 0),
        "passes": bool(not diverging and (K + d + 1) * (1 - q / 3) > d),
    })
    return rep


def _scale_set(c: CoeffTensor, j: int):
    ns, bs = [], []
    for (jj, G), (n, b) in c.blocks.items():
        if jj == j and len(b):
            ns.append(n)
            bs.append(b)
    n = np.concatenate(ns)
    b = np.concatenate(bs)
    # indices of different types may coincide as integer tuples; keep them apart
    tags = np.concatenate([np.full(len(x), t) for t, x in enumerate(ns)])
    n = n.copy()
    n[:, 0] = n[:, 0] * (len(ns) + 1) + tags
    return n, b


def geometric_oracle(j_max: int, q: float, decay: float, d: int, m_norm_q: float, r_max: int) -> float:
    """Closed-form total for ||b_j||_inf = 2^{-decay j}."""
    rho = 2.0 ** (q / 3 - 1)
    r_part = (1 - rho ** (r_max + 1)) / (1 - rho)
    g = 2.0 ** (d * (2.5 - q / 2) - decay * (1 - q / 3))
    j_part = (1 - g ** (j_max + 1)) / (1 - g) if g != 1 else j_max + 1
    return r_part * j_part * m_norm_q ** (q / 3)


# ---------------------------------------------------------------- operator norm probe

@dataclass
class NormEstimate:
    lower_bound: float
    witness: TestFunctionTriple
    trials: int
    trace: list
    x: np.ndarray

    def recompute(self, m: MultiplierGrid) -> float:
        n = self.witness.norm_product()
        if n == 0:
            return 0.0
        return quasi_norm(apply_direct(m, self.witness, self.x), P_OUT) / n


def _random_fhat(rng, ax, box_lo, box_hi):
    span = box_hi - box_lo
    width = span * rng.uniform(0.05, 0.5)
    center = rng.uniform(box_lo + width / 2, box_hi - width / 2) if span > width else (box_lo + box_hi) / 2
    f = make_bump_hat(center, width, ax)
    if rng.random() < 0.5:
        f = f * (rng.standard_normal(len(ax)) + 1j * rng.standard_normal(len(ax)))
    if not np.any(f):
        f = np.zeros(len(ax), dtype=complex)
        f[rng.integers(len(ax))] = 1.0
    return f / np.sqrt(np.sum(np.abs(f) ** 2) * (ax[1] - ax[0]))


def estimate_operator_norm(m: MultiplierGrid, trials: int = 8, ascent_steps: int = 20, seed: int = 0,
                           x_points: int | None = None) -> NormEstimate:
    """Random search then coordinate ascent; a certified lower bound on the operator norm."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if m.d != 1:
        raise RefusalError("the engine runs with d = 1 only")
    rng = np.random.default_rng(seed)
    axes = m.axes()
    delta = m.spacing
    lo, hi = m.box
    mv = m.values.astype(complex)
    probe = TestFunctionTriple(tuple(axes), tuple(np.ones(len(a)) for a in axes))
    x = period_grid(probe, x_points)
    dx = x[1] - x[0]
    E = [np.exp(2j * np.pi * np.outer(x, a)) * delta for a in axes]

    def ratio_of(T, norms):
        if norms == 0:
            return 0.0
        return float((np.sum(np.abs(T) ** P_OUT) * dx) ** (1 / P_OUT)) / norms

    def nrm(f, i):
        return float(np.sqrt(np.sum(np.abs(f) ** 2) * delta))

    def full_value(fh):
        Z = partial_field(mv, [E[1] * fh[1], E[2] * fh[2]], 0) * E[0]
        return ratio_of(Z @ fh[0], np.prod([nrm(f, i) for i, f in enumerate(fh)]))

    best_val, best = -1.0, None
    trace = []
    if np.any(mv):
        # single-frequency triple at the peak of |m|: its ratio is exactly |m| there
        peak = np.unravel_index(np.argmax(np.abs(m.values)), m.shape)
        fh = []
        for i in range(3):
            f = np.zeros(len(axes[i]), dtype=complex)
            f[peak[i]] = delta**-0.5
            fh.append(f)
        best_val, best = full_value(fh), fh
    for _ in range(trials):
        fh = [_random_fhat(rng, axes[i], lo[i], hi[i]) for i in range(3)]
        v = full_value(fh)
        if v > best_val:
            best_val, best = v, fh
    trace.append(best_val)
    fh = [f.copy() for f in best]
    cur = best_val
    for step in range(ascent_steps):
        i = step % 3
        others = [k for k in range(3) if k != i]
        Z = partial_field(mv, [E[k] * fh[k] for k in others], i) * E[i]
        other_norm = np.prod([nrm(fh[k], k) for k in others])
        cands = []
        # best single-frequency replacement
        col = (np.sum(np.abs(Z) ** P_OUT, axis=0) * dx) ** (1 / P_OUT)
        a = int(np.argmax(col))
        spike = np.zeros(len(axes[i]), dtype=complex)
        spike[a] = 1.0
        cands.append(spike)
        # matched filter at the current peak, then random perturbations
        cands.append(np.conj(Z[np.argmax(np.abs(Z @ fh[i]))]))
        for _ in range(4):
            g = _random_fhat(rng, axes[i], lo[i], hi[i])
            cands.append(fh[i] + rng.uniform(0.1, 1.0) * nrm(fh[i], i) * g)
            cands.append(g)
        for g in cands:
            if not np.any(g):
                continue
            g = g / nrm(g, i)
            v = ratio_of(Z @ g, other_norm)
            if v > cur:
                cur, fh[i] = v, g
        trace.append(cur)
    witness = TestFunctionTriple(tuple(axes), tuple(fh))
    est = NormEstimate(0.0, witness, trials, trace, x)
    est.lower_bound = est.recompute(m)
    return est


def normalized_family(rng: np.random.Generator, size: int, q: float, lo=-1.0, hi=1.0, spacing=1 / 8,
                      width_range=(0.2, 0.45), max_terms: int = 3) -> list[tuple[MultiplierGrid, GaussianMixture]]:
    """Random Gaussian mixtures with derivative bound through order M_q scaled to 1."""
    order = required_smoothness(q, 1)
    out = []
    for _ in range(size):
        g = random_gaussian_mixture(rng, 3, span=0.5 * (hi - lo) / 2, width_range=width_range, max_terms=max_terms)
        g = g.scaled(1.0 / g.derivative_bound(order))
        out.append((sample(g, 1, lo, hi, spacing), g))
    return out


def sufficiency_sweep(family, q: float, trials: int = 6, ascent_steps: int = 12, seed: int = 0,
                      c0=None) -> BoundReport:
    """Norm lower bounds against ||m||_q^{q/3}; fits the log-log slope and the constant A."""
    rep = BoundReport("sufficiency")
    for idx, m in enumerate(family):
        est = estimate_operator_norm(m, trials, ascent_steps, seed + idx)
        nq = m.lq_norm(q)
        rhs = nq ** (q / 3)
        c = 1.0 if c0 is None else c0[idx]
        env = c ** (1 - q / 3) * rhs
        rep.rows.append({"member": idx, "estimate": est.lower_bound, "lq_norm": nq, "rhs": rhs,
                         "envelope": env, "ratio": est.lower_bound / env if env > 0 else 0.0})
    pos = [r for r in rep.rows if r["estimate"] > 0 and r["envelope"] > 0]
    rep.constants["q"] = q
    rep.constants["A"] = max((r["ratio"] for r in pos), default=0.0)
    rep.constants["slope"] = (float(np.polyfit(np.log([r["envelope"] for r in pos]),
                                               np.log([r["estimate"] for r in pos]), 1)[0])
                              if len(pos) >= 2 and np.ptp([r["envelope"] for r in pos]) > 0 else float("nan"))
    rep.flags["all_below_A"] = all(r["estimate"] <= rep.constants["A"] * r["envelope"] * (1 + 1e-12) for r in rep.rows)
    return rep
