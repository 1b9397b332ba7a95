import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from trimult.errors import RefusalError
from trimult.necessity_lab import (
    EXHAUSTIVE_MAX, I_HALF, J_HALF, PLATEAU, BlockSequences, SignAssignment, VWeights,
    _mean_two_thirds, _triple_loop_sum, active_terms, assemble_mt, block_inputs, boundary_tail,
    closed_form_T, convolution_sum, growth_fit, khinchin_average, lattice_phi, lq_boundary_check,
    mt_lq_count, phi_hat, phi_l2_squared, phi_space, proxy_B, psi, stitch_signs, two_thirds_power,
)
from trimult.trilinear_engine import OutputField, apply_direct, period_grid, quasi_norm

VW = VWeights()


@pytest.mark.parametrize("N", range(2, 9))
def test_block_sequences_unit_square_sum(N):
    seqs = BlockSequences(N)
    assert seqs.square_sum() == 1.0
    assert np.sum(seqs.dense() ** 2) == pytest.approx(1.0, abs=1e-15)
    assert np.count_nonzero(seqs.dense()) == 2**N
    assert seqs.active_range() == range(3 * 2**N, 3 * (2 ** (N + 1) - 1) + 1)


def test_block_sequences_refuse_small_N():
    with pytest.raises(ValueError):
        BlockSequences(1)


def test_convolution_examples():
    seqs = BlockSequences(2)
    assert convolution_sum(seqs, 12) == pytest.approx(0.125, abs=1e-15)
    assert convolution_sum(seqs, 15) == pytest.approx(1.25, abs=1e-14)
    assert convolution_sum(seqs, 11) == 0.0
    assert convolution_sum(seqs, 22) == 0.0
    assert convolution_sum(seqs, 500) == 0.0
    with pytest.raises(ValueError):
        convolution_sum(seqs, 2)


def test_convolution_matches_enumeration():
    seqs = BlockSequences(2)
    block = range(4, 8)
    for l in range(3, 25):
        count = sum(1 for t in itertools.product(block, repeat=3) if sum(t) == l)
        assert convolution_sum(seqs, l) == pytest.approx(count / 8, abs=1e-14)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_convolution_three_orders_agree(N):
    seqs = BlockSequences(N)
    for l in range(3 * 2**N - 2, 3 * 2 ** (N + 1)):
        vals = [_triple_loop_sum(seqs, l, order) for order in itertools.permutations(range(3))]
        assert max(vals) - min(vals) == 0.0
        assert convolution_sum(seqs, l) == pytest.approx(vals[0], abs=1e-12)


@pytest.mark.parametrize("N", range(2, 9))
def test_support_window(N):
    seqs = BlockSequences(N)
    ls, _ = active_terms(seqs, VW)
    assert ls.min() == 3 * 2**N and ls.max() == 3 * 2 ** (N + 1) - 3
    assert ls.min() >= 2 ** (N + 1) and ls.max() <= 2 ** (N + 3)


def test_peak_convolution_grows_like_root_block():
    Ns = np.arange(2, 9)
    peaks = [max(convolution_sum(BlockSequences(N), l) for l in BlockSequences(N).active_range()) for N in Ns]
    slope = np.polyfit(Ns, np.log2(peaks), 1)[0]
    assert slope == pytest.approx(0.5, abs=0.03)


def test_v_weights():
    ls = np.arange(3, 2000)
    v = VW(ls)
    assert np.all(v > 0)
    assert np.all(np.diff(v) < 0)
    assert VW.at(3) == pytest.approx(math.sqrt(math.log(2)) / 2)
    assert VW.at(2) == 0.0


def test_sign_assignment_validation_and_flip():
    with pytest.raises(ValueError):
        SignAssignment({3: 0})
    s = SignAssignment.constant(range(3, 6))
    assert s.flipped().signs == {3: -1, 4: -1, 5: -1}
    assert s[4] == 1


def test_rademacher_values():
    assert set(SignAssignment.rademacher(range(1, 9), 0).signs.values()) == {1}
    half = SignAssignment.rademacher(range(1, 5), Fraction(1, 2))
    assert half.signs == {1: -1, 2: 1, 3: 1, 4: 1}
    with pytest.raises(ValueError):
        SignAssignment.rademacher([1], 1)


def test_rademacher_orthonormal_on_dyadic_grid():
    """int_0^1 s_l s_m dt = delta_lm, exact on the 2^-L grid of left endpoints."""
    L = 8
    rows = np.array([[SignAssignment.rademacher(range(1, L + 1), Fraction(k, 2**L))[l] for l in range(1, L + 1)]
                     for k in range(2**L)])
    assert np.array_equal(rows.T @ rows / 2**L, np.eye(L))


@given(st.integers(0, 2**31))
def test_sampled_signs_are_signs(seed):
    s = SignAssignment.sampled(range(12, 22), np.random.default_rng(seed), seed)
    assert set(s.signs.values()) <= {-1, 1} and len(s.signs) == 10
    assert s.provenance == f"sampled({seed})"


def test_closed_form_single_term():
    seqs = BlockSequences(2)
    x = np.linspace(-40, 40, 321)
    ph = phi_space(x)
    base = SignAssignment.constant(seqs.active_range())
    other = SignAssignment({**base.signs, 12: -1})
    diff = closed_form_T(seqs, base, VW, x, ph).samples - closed_form_T(seqs, other, VW, x, ph).samples
    one = 2 * VW.at(12) * convolution_sum(seqs, 12) * ph**3 * np.exp(2j * np.pi * 12 * x)
    assert np.allclose(diff, one, atol=1e-15)
    assert np.allclose(np.abs(diff) / 2, VW.at(12) * 0.125 * np.abs(ph) ** 3, atol=1e-15)


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.integers(2, 4))
def test_closed_form_sign_flip(seed, N):
    seqs = BlockSequences(N)
    s = SignAssignment.sampled(seqs.active_range(), np.random.default_rng(seed))
    x = np.linspace(-10, 10, 101)
    a = closed_form_T(seqs, s, VW, x, phi_space).samples
    b = closed_form_T(seqs, s.flipped(), VW, x, phi_space).samples
    assert np.array_equal(a, -b)


def test_closed_form_matches_engine():
    seqs = BlockSequences(2)
    rng = np.random.default_rng(5)
    signs = SignAssignment.sampled(seqs.active_range(), rng)
    fns = block_inputs(seqs, spacing=1 / 64)
    m = assemble_mt(seqs, signs, VW, spacing=1 / 64)
    x = period_grid(fns)
    direct = apply_direct(m, fns, x)
    closed = closed_form_T(seqs, signs, VW, x, lattice_phi(1 / 64, x))
    diff = OutputField(x, direct.samples - closed.samples, direct.cell_volume)
    assert quasi_norm(diff, 2 / 3) <= 0.02 * quasi_norm(direct, 2 / 3)


def test_psi_plateau_and_support():
    t = np.linspace(-1, 1, 4001)
    p = psi(t)
    assert np.all(p[np.abs(t) <= PLATEAU * J_HALF] == 1.0)
    assert np.all(p[np.abs(t) >= J_HALF] == 0.0)
    assert np.all((p >= 0) & (p <= 1))
    # phi^ support I sits inside the plateau
    assert I_HALF < PLATEAU * J_HALF


def test_assemble_mt_plateau_and_gap():
    seqs = BlockSequences(2)
    signs = SignAssignment.sampled(seqs.active_range(), np.random.default_rng(1))
    m = assemble_mt(seqs, signs, VW, spacing=1 / 16)
    for (j0, k0, l0) in [(4, 4, 4), (5, 7, 6), (7, 7, 7)]:
        for u in (0.0, 0.1, -0.15):
            val = float(m.func(np.array([j0 + u]), np.array([k0 - u]), np.array([l0 + u / 2]))[0])
            s = j0 + k0 + l0
            assert val == pytest.approx(VW.at(s) * signs[s], abs=1e-14)
    # lattice points on plateaus agree with the evaluator
    vals = m.sample_at([np.array([5.0]), np.array([6.0]), np.array([4.0])])
    assert vals[0, 0, 0] == pytest.approx(VW.at(15) * signs[15], abs=1e-14)
    gap = m.func(np.array([4.5]), np.array([5.0]), np.array([6.0]))
    assert gap[0] == 0.0
    assert m.sample_at([np.array([4.5]), np.array([5.0]), np.array([6.0])])[0, 0, 0] == 0.0


def test_assemble_mt_refusals():
    seqs = BlockSequences(2)
    signs = SignAssignment.constant(seqs.active_range())
    with pytest.raises(RefusalError):
        assemble_mt(seqs, signs, VW, lo=4.0)
    with pytest.raises(RefusalError):
        assemble_mt(seqs, SignAssignment.constant(range(12, 15)), VW)


@pytest.mark.parametrize("q", [2.0, 3.5])
def test_mt_lq_count_matches_quadrature(q):
    seqs = BlockSequences(2)
    signs = SignAssignment.constant(seqs.active_range())
    m = assemble_mt(seqs, signs, VW, spacing=1 / 32)
    quad = m.lq_norm(q) ** q
    assert quad == pytest.approx(mt_lq_count(seqs, VW, q), rel=0.01)


def test_phi_helpers():
    assert phi_hat(np.array([0.0]))[0] == 1.0
    assert phi_hat(np.array([I_HALF]))[0] == 0.0
    x = np.linspace(-5, 5, 11)
    ph = phi_space(x)
    assert np.allclose(ph, ph[::-1])
    # phi(0) = int phi^
    assert phi_space(np.array([0.0]))[0] == pytest.approx(
        integrate.quad(lambda t: phi_hat(np.array([t]))[0].real, -I_HALF, I_HALF)[0], rel=1e-8)
    # the lattice inverse transform is the 1/spacing periodization of phi (Poisson summation)
    periodized = sum(phi_space(x + 16 * k) for k in range(-200, 201))
    assert np.allclose(lattice_phi(1 / 16, x), periodized, atol=1e-6 * abs(periodized).max())


def test_single_term_average():
    # one active term: |s_l| = 1 removes all randomness, the average is |c|^{2/3}
    c = 0.37
    vals = _mean_two_thirds(np.array([12]), np.array([c]), np.array([[1.0], [-1.0]]), 64)
    assert np.allclose(vals, c ** (2 / 3), rtol=1e-12)
    assert proxy_B.__name__ == "proxy_B"


def test_periodization_identity():
    """int |phi|^2 |P|^{2/3} dx = ||phi^||^2 int_0^1 |P|^{2/3} when supp phi^ is shorter than 1."""
    half = 0.45
    rng = np.random.default_rng(2)
    ls = np.arange(5, 11)
    coeffs = rng.standard_normal(len(ls))
    x = np.arange(-300, 300, 1 / 64)
    P = np.exp(2j * np.pi * np.outer(x, ls)) @ coeffs
    ph = phi_space(x, half=half, quad_points=2049)
    lhs = np.sum(ph**2 * np.abs(P) ** (2 / 3)) / 64
    rhs = phi_l2_squared(half) * _mean_two_thirds(ls, coeffs, np.ones((1, len(ls))), 256)[0]
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_khinchin_enumerated_and_proxy():
    seqs = BlockSequences(2)
    rep = khinchin_average(seqs, VW, num_signs=64)
    assert rep["mode"] == "enumerated" and rep["samples"] == 2**10
    ls, c = active_terms(seqs, VW)
    assert len(ls) <= EXHAUSTIVE_MAX
    assert rep["B"] == pytest.approx(np.sum(c**2) ** (1 / 3), rel=1e-14)
    assert rep["best_value"] >= rep["A"]
    with pytest.raises(ValueError):
        khinchin_average(seqs, VW, num_signs=10)


def test_khinchin_matches_field_quadrature():
    """A_N for one sign assignment equals the direct 2/3-power integral of the closed form."""
    seqs = BlockSequences(2)
    rep = khinchin_average(seqs, VW, num_signs=64)
    signs = rep["best_signs"]
    x = np.arange(-3000, 3000, 1 / 16)
    field = closed_form_T(seqs, signs, VW, x, phi_space(x, quad_points=1025))
    assert two_thirds_power(field) == pytest.approx(rep["best_value"], rel=2e-3)


def test_khinchin_ratio_stable_across_seeds():
    seqs = BlockSequences(5)
    ratios = [khinchin_average(seqs, VW, 256, seed)["ratio"] for seed in range(4)]
    assert (max(ratios) - min(ratios)) / np.mean(ratios) < 0.10


def test_growth_fit_structure():
    rep = growth_fit(range(2, 7), num_signs=128, seed=3)
    assert [r["N"] for r in rep["rows"]] == [2, 3, 4, 5, 6]
    assert rep["A_nondecreasing"]
    assert rep["slope_A"] > 0 and rep["slope_B"] > 0
    with pytest.raises(RefusalError):
        growth_fit(range(1, 4))


def test_stitched_signs_reproduce_blocks():
    best = {N: khinchin_average(BlockSequences(N), VW, 64, N)["best_signs"] for N in (2, 3, 4)}
    stitched = stitch_signs(best)
    x = np.linspace(-20, 20, 161)
    for N, sa in best.items():
        seqs = BlockSequences(N)
        a = closed_form_T(seqs, stitched, VW, x, phi_space).samples
        b = closed_form_T(seqs, sa, VW, x, phi_space).samples
        assert np.array_equal(a, b)
    seqs = BlockSequences(2)
    assert np.array_equal(assemble_mt(seqs, stitched, VW).values, assemble_mt(seqs, best[2], VW).values)


def test_boundary_q3_diverges():
    rep = lq_boundary_check(3.0, 10**6)
    assert rep.verdict == "diverging"
    assert rep.partials[10**6] / rep.partials[10**3] > 2
    assert math.isinf(rep.tail)


def test_boundary_q10_converges():
    rep = lq_boundary_check(10.0, 10**6)
    assert rep.verdict == "converged"
    assert rep.partials[10**4] == pytest.approx(rep.partials[10**6], rel=1e-3)


def test_boundary_q35_needs_longer_sum():
    assert lq_boundary_check(3.5, 10**6).verdict == "undecided"
    rep = lq_boundary_check(3.5, 10**7)
    assert rep.verdict == "converged" and rep.tail_fraction < 0.01


def test_boundary_partials_match_loop():
    q = 3.2
    rep = lq_boundary_check(q, 1000)
    direct = sum(math.log(l - 1) ** (q / 2) * (l - 1) ** (2 - q) for l in range(3, 1001))
    assert rep.P_max == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("q,L", [(5.0, 1000), (4.0, 10**5), (3.5, 10**6)])
def test_boundary_tail_closed_form(q, L):
    # after y = e^u the integrand is u^{q/2} e^{-(q-3) u}, which quad handles well
    beta = q - 3
    val = integrate.quad(lambda u: u ** (q / 2) * math.exp(-beta * u), math.log(L - 1), np.inf,
                         epsabs=0, epsrel=1e-12, limit=500)[0]
    assert boundary_tail(q, L) == pytest.approx(val, rel=1e-9)


def test_boundary_refusals():
    with pytest.raises(RefusalError):
        lq_boundary_check(0.0)
    with pytest.raises(RefusalError):
        lq_boundary_check(3.0, 999)
