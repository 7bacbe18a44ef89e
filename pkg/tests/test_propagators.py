import math

import numpy as np
import pytest

from katolab.grid import lp_norm, radial_grid
from katolab.probes import smooth_family, wave_data_pairs
from katolab.propagators import (AdmissibilityError, PropagatorFamily, PropagatorKind, admissibility,
                                 check_admissible, cosine_window, dispersive_report, finite_speed_check,
                                 free_closed_forms, fund_integrals, lp_decay_report, midpoint_quadrature,
                                 mixed_norm, modified_cosine_gradient_bounds, peral_region_ok, peral_report,
                                 propagator_kernel, reflection_free_horizon, sobolev_norm, strichartz_ratios,
                                 strichartz_report, wave_energy, wave_solve)
from katolab.spectral import SpectralGapError, apply_function, assemble_hamiltonian, diagonalize
from katolab.probes import gaussian_probes, geometric_scales

import oracles


def test_free_closed_forms_against_reference():
    for t, rho in [(1.0, 2.0), (2.0, 1.0), (3.0, 3.5)]:
        cf = free_closed_forms(t, [0, 0, 0], [0, 0, rho])
        ref = oracles.free_wave_kernels(t, rho)
        assert cf.C0t == pytest.approx(ref["C0"])
        assert cf.S1_0t == pytest.approx(ref["S1"])
        assert cf.gradC0t_singular_mass == pytest.approx(1 / (4 * math.pi * rho))
    with pytest.raises(ValueError):
        free_closed_forms(1.0, [0, 0, 0], [0, 0, 0])


def test_quadrature_rules():
    q = midpoint_quadrature(2.0, 0.1)
    assert q.weights.sum() == pytest.approx(2.0)
    assert q.nodes[0] == pytest.approx(0.05)
    r = midpoint_quadrature(2.0, 0.1, refine_levels=3)
    assert r.weights.sum() == pytest.approx(2.0)
    assert r.nodes[0] < q.nodes[0] / 4
    assert cosine_window(radial_grid(10.0, 100)) == pytest.approx(6.4)
    assert reflection_free_horizon(radial_grid(10.0, 100), 2.0) == pytest.approx(6.4)


def test_propagator_kernels_match_functional_calculus(radial_small_well):
    S = radial_small_well
    f = np.exp(-S.grid.points[:, 0] ** 2)
    t = 1.3
    for kind, sym in [(PropagatorKind.SINE, lambda lam: np.sin(t * np.sqrt(lam)) / np.sqrt(lam)),
                      (PropagatorKind.COSINE, lambda lam: np.cos(t * np.sqrt(lam)) / lam)]:
        K = propagator_kernel(S, kind, t).kernel
        np.testing.assert_allclose(K.apply(f), apply_function(S, sym, f), atol=1e-10)
    with pytest.raises(ValueError):
        propagator_kernel(S, PropagatorKind.SINE, -1.0)


def test_zone_symbol_is_time_integral(radial_small_free):
    fam = PropagatorFamily(radial_small_free, PropagatorKind.MODIFIED_COSINE)
    q = midpoint_quadrature(1.0, 1e-3)
    num = sum(w * fam.symbol(t) for t, w in zip(q.nodes, q.weights))
    np.testing.assert_allclose(fam.zone_symbol(0.0, 1.0), num, atol=1e-5)


def test_free_wave_matches_dalembert(radial_small_free):
    # radial free wave: r u(r, t) = ((r - t) f(r - t) + (r + t) f(r + t)) / 2 with f extended evenly
    S = radial_small_free
    r = S.grid.points[:, 0]
    f = lambda x: np.exp(-(x**2))
    ts = [0.5, 1.5, 3.0]
    u = wave_solve(S, f(r), np.zeros_like(r), ts)
    for t, row in zip(ts, u):
        ref = ((r - t) * f(r - t) + (r + t) * f(r + t)) / (2 * r)
        assert np.max(np.abs(row - ref)) < 1e-3


def test_wave_energy_conserved(radial_small_well):
    S = radial_small_well
    u0, u1 = wave_data_pairs(S.grid)[0]
    ts = [0.0, 1.0, 2.0]
    u = wave_solve(S, u0, u1, ts)
    dt = 1e-5
    up = wave_solve(S, u0, u1, [t + dt for t in ts])
    um = wave_solve(S, u0, u1, [max(t - dt, 0.0) if t else -dt for t in ts])
    E = [wave_energy(S, u[i], (up[i] - um[i]) / (2 * dt)) for i in range(len(ts))]
    np.testing.assert_allclose(E, E[0], rtol=1e-6)


def test_duhamel_constant_forcing(radial_small_well):
    S = radial_small_well
    g = np.exp(-S.grid.points[:, 0] ** 2)
    q = midpoint_quadrature(2.0, 0.01)
    t = 2.0
    z = np.zeros_like(g)
    u = wave_solve(S, z, z, [t], forcing=lambda s: g, quad=q, include_point=False)[0]
    ref = apply_function(S, lambda lam: (1 - np.cos(t * np.sqrt(lam))) / lam, g)
    np.testing.assert_allclose(u, ref, atol=1e-10 * np.abs(ref).max())
    with pytest.raises(ValueError):
        wave_solve(S, z, z, [t], forcing=lambda s: g)


def test_wave_solve_refuses_zero_band():
    g = radial_grid(5.0, 50)
    S = diagonalize(assemble_hamiltonian(g, np.zeros(g.size)), zero_threshold=1e6)
    with pytest.raises(SpectralGapError):
        wave_solve(S, np.ones(g.size), np.zeros(g.size), [1.0])


def test_free_dispersive_constant(radial1000_free):
    rep = dispersive_report(radial1000_free, [1.0, 2.0, 4.0])
    consts = np.array(rep.metadata["constant_times_t"]) * 4 * math.pi
    np.testing.assert_allclose(consts, 1.0, rtol=0.05)
    assert rep.fitted_slope == pytest.approx(-1.0, abs=0.15)


def test_free_gradient_integrals(radial1000_free):
    rep = modified_cosine_gradient_bounds(radial1000_free, (1.0, 2.0, 4.0))
    assert rep.verdict
    for row in rep.rows:
        assert row["integral"] * 2 * math.pi * row["separation"] == pytest.approx(1.0, rel=0.1)
        assert row["weighted"] == pytest.approx(3 / (8 * math.pi), rel=0.1)


def test_free_fund_integrals(radial1000_free):
    # free S_t(x, y) is delta(t - |x-y|) / (4 pi |x-y|); lumping the discrete front overshoots slightly
    rep = fund_integrals(radial1000_free)
    assert rep.verdict
    for row in rep.rows:
        assert row["funda_ratio"] == pytest.approx(1 / (4 * math.pi), rel=0.25)
        assert row["t_weighted"] == pytest.approx(1 / (4 * math.pi), rel=0.25)


@pytest.mark.parametrize("which", ["free", "well"])
def test_finite_speed(which, radial_small_free, radial_small_well):
    S = radial_small_free if which == "free" else radial_small_well
    assert finite_speed_check(S, 2.0).verdict


def test_lp_decay_unitary_bound(radial_small_well):
    probes = gaussian_probes(radial_small_well.grid, geometric_scales(0.1, 4.0, 6))
    rep = lp_decay_report(radial_small_well, [2.0], [0.5, 1.0, 3.0], probes)[0]
    assert rep.verdict and rep.measured_constant <= 1 + 1e-8
    with pytest.raises(ValueError):
        lp_decay_report(radial_small_well, [3.0], [1.0], probes)


def test_admissibility_arithmetic():
    for s, p, q in [(1, math.inf, 6), (0.5, 4, 4), (0, math.inf, 2)]:
        a = admissibility(s, p, q)
        assert a["condition1"] and a["condition2"] and not a["forbidden_endpoint"]
        check_admissible(s, p, q)
    a = admissibility(1.0, 2, math.inf)
    assert a["condition1"] and a["condition2"] and a["forbidden_endpoint"]
    with pytest.raises(AdmissibilityError, match="endpoint"):
        check_admissible(1.0, 2, math.inf)
    a = admissibility(1.0, 4, 4)
    assert not a["condition1"] and a["condition1_lhs"] == 1.0 and a["condition1_rhs"] == 0.5
    with pytest.raises(AdmissibilityError, match="condition1"):
        check_admissible(1.0, 4, 4)
    # scaling holds but the wave condition fails: 2/p + 2/q = 7/6 > 1
    a = admissibility(0.25, 4, 3)
    assert a["condition1"] and not a["condition2"]
    with pytest.raises(AdmissibilityError, match="condition2"):
        check_admissible(0.25, 4, 3)


def test_mixed_norm_and_sobolev(radial_small_free):
    g = radial_small_free.grid
    f = np.exp(-g.points[:, 0] ** 2)
    q = midpoint_quadrature(2.0, 0.1)
    u = np.tile(f, (q.nodes.size, 1))
    assert mixed_norm(g, u, q, 2.0, 3.0) == pytest.approx(math.sqrt(2.0) * lp_norm(g, f, 3.0))
    assert mixed_norm(g, u, q, math.inf, 3.0) == pytest.approx(lp_norm(g, f, 3.0))
    assert sobolev_norm(radial_small_free, f, 0.0) == pytest.approx(lp_norm(g, f, 2.0), rel=1e-10)


def test_strichartz_ratios_finite(radial_small_well):
    probes = wave_data_pairs(radial_small_well.grid)
    for s, p, q in [(1, math.inf, 6), (0.5, 4, 4), (0, math.inf, 2)]:
        r = strichartz_ratios(radial_small_well, s, p, q, probes)
        assert all(math.isfinite(v) and v > 0 for v in r)


def test_strichartz_energy_triple_bounded_by_one(radial_small_free):
    # (0, inf, 2) free: sup_t ||u||_2 <= ||u0||_2 + ||u1||_{H^-1}
    r = strichartz_ratios(radial_small_free, 0, math.inf, 2, wave_data_pairs(radial_small_free.grid))
    assert max(r) <= 1 + 1e-10


def test_strichartz_report_rejects(radial_small_free):
    rep = strichartz_report(radial_small_free, [(1.0, 2, math.inf)], wave_data_pairs(radial_small_free.grid))
    assert rep.status == "rejected" and not rep.rows and not rep.verdict


def test_peral_region():
    assert peral_region_ok(1.0, 2.0) and peral_region_ok(0.0, 1.0)
    assert not peral_region_ok(1.0, 1.0) and not peral_region_ok(0.6, 4.0)
    assert peral_region_ok(0.5, 4.0)
    with pytest.raises(ValueError):
        peral_report(None, 1.0, 1.0, [1.0])


@pytest.mark.parametrize("which", ["free", "well"])
def test_peral_energy_identity(which, radial_small_free, radial_small_well):
    S = radial_small_free if which == "free" else radial_small_well
    rep = peral_report(S, 2.0, 1.0, [0.5, 1.0, 2.0, 4.0], twisted=(which == "well"))
    assert rep.verdict and rep.measured_constant <= 1 + 1e-8
    assert rep.measured_constant > 0.99


def test_peral_l1_growth(radial1000_well):
    ts = np.geomspace(0.5, 5.0, 6)
    rep = peral_report(radial1000_well, 1.0, 0.0, ts, smooth_family(radial1000_well.grid))
    assert rep.fitted_slope == pytest.approx(1.0, abs=0.2)
