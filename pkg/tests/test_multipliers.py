import math

import numpy as np
import pytest

from katolab.multipliers import (active_window, constant_symbol, dyadic_bump, heaviside, hormander_norm,
                                 hormander_report, imaginary_power, parse_symbol, partition_profile,
                                 partition_square_bracket, plateau_cutoff, plateau_profile, pw_high, pw_low,
                                 pw_norm_scaling_report, pw_symbol, smooth_step, sobolev_norm_sampled,
                                 sqf_equivalence_report, square_function, standard_cutoff, symbol_catalog,
                                 tabulated_symbol, truncated_power)
from katolab.probes import square_function_family
from katolab.propagators import time_integral_discrepancy
from katolab.spectral import spectral_projector

import oracles


def test_smooth_step_matches_reference():
    lam = np.geomspace(0.1, 10, 301)
    ref = [oracles.smooth_step_scalar(x) for x in lam]
    np.testing.assert_allclose(smooth_step(lam), ref, atol=1e-15)
    assert smooth_step(0.5) == 0.0 and smooth_step(2.0) == 1.0
    assert np.all(np.diff(smooth_step(lam)) >= 0)


def test_partition_profile_support_and_telescoping():
    lam = np.geomspace(1e-3, 1e3, 2001)
    phi = partition_profile(lam)
    assert np.all(phi[(lam < 0.5) | (lam > 4.0)] == 0)
    np.testing.assert_allclose(standard_cutoff().partition_sum(lam), 1.0, atol=1e-14)


def test_plateau_profile_is_one_on_middle_octave():
    lam = np.linspace(1.0, 2.0, 101)
    np.testing.assert_allclose(plateau_profile(lam), 1.0, atol=1e-15)
    assert plateau_profile(0.49) == 0.0 and plateau_profile(4.01) == 0.0
    assert not plateau_cutoff().partition


def test_square_bracket_matches_brute_force():
    lo, hi = partition_square_bracket()
    rlo, rhi = oracles.square_sum_bracket()
    assert lo == pytest.approx(rlo, abs=1e-6)
    assert hi == pytest.approx(rhi, abs=1e-6)
    assert 0.4 < lo < hi <= 1.0


def test_sobolev_norm_of_gaussian():
    x = np.linspace(-12, 12, 4001)
    g = np.exp(-x**2)
    dx = x[1] - x[0]
    assert sobolev_norm_sampled(g, dx, 0.0) == pytest.approx(math.sqrt(math.sqrt(math.pi / 2)), rel=1e-8)
    assert sobolev_norm_sampled(g, dx, 1.0) == pytest.approx(oracles.gaussian_h1_norm(), rel=1e-6)


def test_mihlin_constants_of_imaginary_power():
    sigma = 3.0
    hr = hormander_norm(imaginary_power(sigma), 1.6)
    np.testing.assert_allclose(hr.mihlin, [1.0, sigma, sigma * math.hypot(1.0, sigma)], rtol=1e-10)


def test_hormander_norm_classification():
    assert hormander_norm(constant_symbol(), 1.6).hormander
    assert hormander_norm(dyadic_bump(1.0), 1.6).hormander
    jump = hormander_norm(heaviside(1.0), 1.6)
    assert not jump.hormander and jump.refinement_ratio > 1.05
    with pytest.raises(ValueError):
        hormander_norm(constant_symbol(), 0.0)


def test_hormander_norm_grows_with_sigma():
    # ||phi x^{i sigma}||_{H^s} ~ sigma^s once sigma dominates the cutoff's own frequencies
    s = 1.6
    sig = np.array([16.0, 32.0, 64.0])
    m = [hormander_norm(imaginary_power(v), s).M_s for v in sig]
    slope = np.polyfit(np.log(sig), np.log(m), 1)[0]
    assert m[0] < m[1] < m[2]
    assert abs(slope - s) < 0.2


def test_hormander_norm_scale_invariant():
    a = hormander_norm(dyadic_bump(0.0), 1.6).M_s
    b = hormander_norm(dyadic_bump(1.0), 1.6).M_s
    assert b == pytest.approx(a, rel=1e-6)


def test_hormander_report_fields():
    rep = hormander_report(imaginary_power(1.0), 1.6)
    assert rep.verdict and rep.metadata["above_threshold"]
    assert len(rep.rows) == 13


def test_parse_symbol_variants(tmp_path):
    assert parse_symbol("one")(np.array([3.0]))[0] == 1.0
    assert parse_symbol("powiσ:2").label == "powi:2"
    assert parse_symbol("bump:1").compact == (1.0, 8.0)
    assert parse_symbol("powtrunc:0.5,1,16")(np.array([4.0]))[0] == pytest.approx(2.0)
    assert parse_symbol("jump:2")(np.array([1.0, 3.0])).tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        parse_symbol("spline:1")
    path = tmp_path / "m.txt"
    np.savetxt(path, np.column_stack([[0.0, 1.0, 2.0], [0.0, 1.0, 4.0]]))
    m = parse_symbol(f"file:{path}")
    assert m.tabulated and m(np.array([1.5]))[0] == pytest.approx(2.5)
    bad = tmp_path / "bad.txt"
    np.savetxt(bad, np.column_stack([[0.0, 2.0, 1.0], [0.0, 1.0, 4.0]]))
    with pytest.raises(ValueError, match="increasing"):
        tabulated_symbol(bad)


def test_catalog_symbols_finite():
    for m in symbol_catalog():
        m.check_finite()
    assert truncated_power(0.5, 1.0, 16.0).expected_hormander


def test_pw_pieces_telescope(radial_small_well):
    S = radial_small_well
    nmin, nmax = active_window(S)
    lam = S.eigenvalues[S.positive_indices]
    total = sum(pw_symbol(n)(lam) for n in range(nmin, nmax + 1))
    np.testing.assert_allclose(total, 1.0, atol=1e-14)
    n = 1
    both = pw_low(S, n) + pw_high(S, n + 1)
    np.testing.assert_allclose(both.action, spectral_projector(S).action, atol=1e-10)


def test_square_function_p2_inside_bracket(radial_small_well):
    S = radial_small_well
    rep = sqf_equivalence_report(S, square_function_family(S.grid, 4), p_list=(2.0,))
    lo, hi = partition_square_bracket()
    row = rep.rows[0]
    assert rep.verdict
    assert math.sqrt(lo) - 1e-10 <= row["min_ratio"] <= row["max_ratio"] <= 1 + 1e-10


def test_square_function_pieces_reassemble(radial_small_free):
    S = radial_small_free
    f = np.exp(-S.grid.points[:, 0] ** 2)
    res = square_function(S, f)
    np.testing.assert_allclose(res.pieces.sum(axis=0), f, atol=1e-10)
    assert np.all(res.square >= 0)


def test_square_function_rejects_endpoint(radial_small_free):
    with pytest.raises(ValueError):
        sqf_equivalence_report(radial_small_free, square_function_family(radial_small_free.grid), p_list=(1.0,))


def test_pw_low_is_partial_sum(radial_small_well):
    S = radial_small_well
    nmin, _ = active_window(S)
    lam = S.eigenvalues[S.positive_indices]
    partial = sum(pw_symbol(k)(lam) for k in range(nmin, 2))
    low = pw_low(S, 1)
    direct = S.eigenvectors[:, S.positive_indices] @ (partial[:, None] * S.eigenvectors[:, S.positive_indices].T)
    np.testing.assert_allclose(low.kernel, direct, atol=1e-10 * np.abs(direct).max())


def test_pw_uniform_on_diagonal_exponents(radial_small_well):
    for p in (1.0, math.inf):
        rep = pw_norm_scaling_report(radial_small_well, p, p)
        assert rep.verdict and rep.metadata["spread"] <= 3.0


def test_pw_one_to_inf_growth_is_dimensional(radial_small_free):
    # ||psi(2^-n sqrt(-Delta))||_{1->inf} ~ 2^{3n} in three dimensions
    rep = pw_norm_scaling_report(radial_small_free, 1.0, math.inf)
    assert rep.metadata["exact"]
    assert rep.fitted_slope == pytest.approx(rep.metadata["dimensional_exponent"], abs=0.3)


@pytest.mark.parametrize("k", [1.0, 3.0])
def test_time_integral_matches_eigendecomposition(radial_small_well, k):
    rep = time_integral_discrepancy(radial_small_well, dyadic_bump(k))
    assert rep.measured_constant <= 1e-3


def test_time_integral_requires_compact_symbol(radial_small_free):
    with pytest.raises(ValueError):
        time_integral_discrepancy(radial_small_free, imaginary_power(1.0))
