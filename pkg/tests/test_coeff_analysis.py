from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trimult.coeff_analysis import (
    CoeffTensor, analyze, coefficient, decay_slope, dilation_covariance_check, frame_norm_lq,
    from_entries, lq_coeff_bound_check, reconstruct,
)
from trimult.errors import RefusalError
from trimult.multipliers import GaussianMixture, cone, radial_bump, sample, zero
from trimult.wavelet_frame import FrameIndex, sample_factor


def _wavelet_grid(sys_, idx, lo, hi, spacing):
    """Sampled tensor wavelet, built axis by axis so dyadic grids read exact tables."""
    like = zero(1, lo, hi, spacing)
    vals = np.ones(())
    for r, ax in enumerate(like.axes()):
        vals = np.multiply.outer(vals, sample_factor(sys_, idx.G[r], idx.j, idx.n[r], ax))
    return like.with_values(vals)


@pytest.fixture(scope="module")
def bump_grid():
    return sample(radial_bump((0.1, -0.1, 0.0), 0.9), 1, -1, 1, 1 / 64)


def test_zero_multiplier_gives_empty_tensor(db2):
    c = analyze(zero(1, -1, 1, 1 / 16), db2, j_max=2)
    assert len(c) == 0
    assert c.energy() == 0.0
    assert frame_norm_lq(c, 2) == 0.0


def test_single_wavelet_is_recovered(db2):
    idx = FrameIndex(1, "MFM", (0, -1, 1))
    m = _wavelet_grid(db2, idx, -1.0, 2.5, 1 / 16)
    c = analyze(m, db2, j_max=2)
    assert c.get(idx) == pytest.approx(1.0, abs=1e-5)
    others = [abs(v) for k, v in c.items() if k != idx]
    assert max(others, default=0.0) <= 1e-5
    assert coefficient(m, db2, idx) == pytest.approx(1.0, abs=1e-5)


def test_parseval_bump(db2, bump_grid):
    c = analyze(bump_grid, db2, j_max=4)
    l2sq = bump_grid.lq_norm(2) ** 2
    assert abs(c.energy() / l2sq - 1) < 0.01
    assert c.energy() <= l2sq * (1 + 1e-3)


def test_parseval_increases_with_jmax(db2, bump_grid):
    energies = [analyze(bump_grid, db2, j_max=J).energy() for J in (1, 2, 3, 4)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


def test_mallat_agrees_with_matrix_quadrature(db2):
    m = sample(GaussianMixture((1.0,), ((0.1, 0.0, -0.2),), ((0.3, 0.35, 0.3),)), 1, -1, 1, 1 / 16)
    a = analyze(m, db2, j_max=2)
    b = analyze(m, db2, j_max=2, method="matrix")
    keys = set(a.entries()) | set(b.entries())
    err = max(abs(a.get(k) - b.get(k)) for k in keys)
    assert err < 1e-10 * max(abs(v) for _, v in a.items())


def test_round_trip_band_limited(db2, rng):
    entries = {}
    for j in (0, 1, 2):
        for _ in range(6):
            G = "MMF" if j else "FFF"
            entries[FrameIndex(j, G, tuple(rng.integers(-1, 2, 3)))] = float(rng.normal())
    c = from_entries(entries, 3, j_max=2)
    like = zero(1, -2, 5, 1 / 16)
    m = reconstruct(c, db2, like)
    back = reconstruct(analyze(m, db2, j_max=2), db2, like)
    rel = np.linalg.norm(back.values - m.values) / np.linalg.norm(m.values)
    assert rel < 1e-4
    for k, v in entries.items():
        assert analyze(m, db2, j_max=2).get(k) == pytest.approx(v, abs=1e-8)


def test_single_entry_reconstruct_is_scaled_wavelet(db2):
    idx = FrameIndex(1, "FMM", (0, 0, 1))
    c = from_entries({idx: 2.5}, 3, j_max=1)
    like = zero(1, -0.5, 2.5, 1 / 16)
    got = reconstruct(c, db2, like)
    ref = _wavelet_grid(db2, idx, -0.5, 2.5, 1 / 16).values * 2.5
    assert np.allclose(got.values, ref, atol=1e-12)


def test_reconstruct_linearity(db2):
    f1 = GaussianMixture((1.0,), ((0.0, 0.0, 0.0),), ((0.3, 0.3, 0.3),))
    f2 = GaussianMixture((-0.7,), ((0.2, -0.1, 0.1),), ((0.4, 0.3, 0.35),))
    m1, m2 = sample(f1, 1, -1, 1, 1 / 16), sample(f2, 1, -1, 1, 1 / 16)
    r = lambda m: reconstruct(analyze(m, db2, j_max=2), db2, m).values
    assert np.allclose(r(m1) + r(m2), r(m1 + m2), atol=1e-10)


def test_reconstruct_empty_refused(db2):
    with pytest.raises(RefusalError):
        reconstruct(CoeffTensor(3, 1), db2, zero(1, 0, 1, 1 / 8))


@lru_cache(maxsize=1)
def _linearity_inputs():
    from trimult.wavelet_frame import build_wavelet_system

    sys_ = build_wavelet_system(2, 8)
    f1 = GaussianMixture((1.0,), ((0.0, 0.1, 0.0),), ((0.3, 0.3, 0.3),))
    m1 = sample(f1, 1, -1, 1, 1 / 16)
    m2 = sample(cone((0.1, 0.0, -0.1), 0.7), 1, -1, 1, 1 / 16)
    return sys_, m1, m2, analyze(m1, sys_, j_max=2), analyze(m2, sys_, j_max=2)


@settings(max_examples=12)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_analyze_linearity_property(alpha, beta):
    sys_, m1, m2, c1, c2 = _linearity_inputs()
    c = analyze(m1.scaled(alpha) + m2.scaled(beta), sys_, j_max=2).entries()
    e1, e2 = c1.entries(), c2.entries()
    for k in set(e1) | set(e2):
        assert abs(c.get(k, 0.0) - alpha * e1.get(k, 0.0) - beta * e2.get(k, 0.0)) < 1e-10


def test_coarse_resolution_refused(db2):
    m = sample(radial_bump((0, 0, 0), 0.5), 1, -1, 1, 1 / 8)
    with pytest.raises(RefusalError):
        analyze(m, db2, j_max=2)
    with pytest.raises(RefusalError):
        analyze(sample(radial_bump((0, 0, 0), 0.5), 1, -1, 1, 0.1), db2, j_max=0)


@pytest.mark.parametrize("j,q", [(0, 2.0), (1, 2.0), (2, 1.5), (3, 2 / 3 + 1)])
def test_frame_norm_single_entry(j, q):
    G = "FFF" if j == 0 else "MFM"
    b = -0.37
    c = from_entries({FrameIndex(j, G, (3, -1, 2)): b}, 3)
    expected = abs(b) * 2 ** (1.5 * j) * 2 ** ((1 - j) * 3 / q)
    assert frame_norm_lq(c, q) == pytest.approx(expected, rel=1e-12)


def test_frame_norm_overlapping_cubes():
    # two same-scale neighbours share half of each cube; square function adds on the overlap
    c = from_entries({FrameIndex(1, "MMM", (0, 0, 0)): 1.0, FrameIndex(1, "MMM", (1, 0, 0)): 1.0}, 3)
    w = 2.0**3
    vol_single, vol_double = 0.5, 0.5
    expected = (2 * vol_single * w + vol_double * (2 * w)) ** 0.5
    # the q = 2 square function is additive: each entry contributes |b|^2 2^{3j} |Q|
    assert frame_norm_lq(c, 2) == pytest.approx(expected, rel=1e-12)
    q = 1.0
    exp_q = 2 * vol_single * w**0.5 + vol_double * (2 * w) ** 0.5
    assert frame_norm_lq(c, q) == pytest.approx(exp_q, rel=1e-12)


def test_frame_norm_q2_is_parseval(db2, bump_grid):
    c = analyze(bump_grid, db2, j_max=4)
    # |Q_jn| 2^{3j} = 8, so the q = 2 frame norm squared is 8 sum |b|^2
    assert frame_norm_lq(c, 2) ** 2 / 8 == pytest.approx(bump_grid.lq_norm(2) ** 2, rel=0.02)


def test_frame_norm_refuses_bad_q():
    with pytest.raises(ValueError):
        frame_norm_lq(CoeffTensor(3, 1), 0.5)


def test_coeff_bound_zero_tensor():
    rep = lq_coeff_bound_check(CoeffTensor(3, 2), 2.0, 1.0)
    assert rep["max_ratio"] == 0.0 and rep["rows"] == []


def test_coeff_bound_single_wavelet(db2):
    idx = FrameIndex(1, "MMF", (0, 0, 0))
    m = _wavelet_grid(db2, idx, -0.5, 2.0, 1 / 16)
    c = analyze(m, db2, j_max=2).restrict([idx])
    for q in (1.5, 2.0):
        rep = lq_coeff_bound_check(c, q, m.lq_norm(q), limit=10.0)
        expected = 2 ** (-3 * (1 / q - 0.5)) / m.lq_norm(q)
        assert rep["max_ratio"] == pytest.approx(expected, rel=1e-5)
        assert not rep["flagged"]
    assert lq_coeff_bound_check(c, 2.0, m.lq_norm(2.0), limit=0.5)["flagged"]


def test_decay_slope_smooth(db3):
    m = sample(GaussianMixture((1.0, -0.6), ((0.0, 0.1, 0.0), (0.2, -0.1, 0.1)),
                               ((0.35, 0.3, 0.4), (0.3, 0.4, 0.35))), 1, -1.5, 1.5, 1 / 64)
    c = analyze(m, db3, j_max=4)
    worst, per = decay_slope(c, per_type=True)
    assert worst <= -3.5
    assert worst == max(per.values())


def test_decay_slope_kink_is_worse(db3):
    m = sample(cone((0.03, -0.05, 0.07), 0.8), 1, -1, 1, 1 / 64)
    assert decay_slope(analyze(m, db3, j_max=4)) > -3.5


def test_constant_kills_interior_details(db2):
    m = sample(lambda *x: np.ones_like(x[0]), 1, -2, 2, 1 / 32)
    c = analyze(m, db2, j_max=3)
    for j in (1, 2, 3):
        for G in ("MFF", "FMF", "MMM"):
            n, b = c.block(j, G)
            interior = np.all((n * 2.0**-j > -1.5) & ((n + 3) * 2.0**-j < 1.5), axis=1)
            if interior.any():
                assert np.abs(b[interior]).max() < 1e-9


def test_decay_slope_refuses_few_scales(db2):
    m = sample(radial_bump((0, 0, 0), 0.8), 1, -1, 1, 1 / 16)
    with pytest.raises(RefusalError):
        decay_slope(analyze(m, db2, j_max=2))


def test_dilation_identity(db2):
    f = GaussianMixture((1.0,), ((0.1, 0.0, -0.1),), ((0.3, 0.4, 0.35),))
    rep = dilation_covariance_check(db2, f, 1, 0, 1, -1, 1, 4)
    assert rep["max_rel_error"] == 0.0 and rep["passed"]


def test_dilation_covariance(db2):
    f = GaussianMixture((1.0, 0.5), ((0.1, 0.0, -0.1), (-0.2, 0.2, 0.1)), ((0.3, 0.4, 0.35), (0.4, 0.3, 0.3)))
    rep = dilation_covariance_check(db2, f, 1, 1, 2, -0.75, 0.75, 5)
    assert rep["passed"] and rep["max_rel_error"] < 1e-4
    assert np.allclose(rep["lhs"], rep["rhs"], atol=1e-4 * np.abs(rep["rhs"]).max())


def test_dilation_out_of_range(db2):
    with pytest.raises(RefusalError):
        dilation_covariance_check(db2, radial_bump((0, 0, 0), 0.5), 1, 3, 2, -1, 1, 4)


def test_jsonl_round_trip(db2, bump_grid):
    c = analyze(bump_grid, db2, j_max=2)
    back = CoeffTensor.from_jsonl(c.to_jsonl(), 3, 2)
    assert back.entries() == c.entries()
    assert CoeffTensor.from_jsonl("", 3, 2).entries() == {}


def test_restrict_and_scaled(db2, bump_grid):
    c = analyze(bump_grid, db2, j_max=1)
    keys = list(c.entries())[:5]
    sub = c.restrict(keys)
    assert set(sub.entries()) == set(keys)
    assert c.scaled(-2.0).energy() == pytest.approx(4 * c.energy())
    with pytest.raises(RefusalError):
        c.restrict([FrameIndex(1, "MMM", (99, 99, 99))])
