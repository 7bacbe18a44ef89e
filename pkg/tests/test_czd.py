import logging

import numpy as np
import pytest

from katolab.czd import (AtomPattern, CZError, DyadicCube, bad_stack, cancellation_modulus, cancellation_report,
                         cubes_at_level, cz_decompose, hardy_atom, plain_mean_ratio, root_cube, tilde_transform,
                         weak11_report, weak_family)
from katolab.grid import box_grid, identity_operator, radial_grid
from katolab.maxprinciple import compute_weight
from katolab.multipliers import heaviside, imaginary_power


def _field(grid, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(grid.size) * np.exp(-grid.radius**2)


def _avg(f, mu, idx):
    return np.sum(np.abs(f[idx]) * mu[idx]) / np.sum(mu[idx])


def test_root_cube_requirements(box8):
    assert root_cube(box8).side == 8
    with pytest.raises(CZError):
        root_cube(radial_grid(1.0, 8))
    with pytest.raises(CZError, match="power of two"):
        root_cube(box_grid(1.0, 12))


def test_dyadic_levels_partition_grid(box8):
    for level in (1, 2, 3):
        cubes = cubes_at_level(box8, level)
        assert len(cubes) == 8**level
        idx = np.concatenate([c.indices() for c in cubes])
        assert np.array_equal(np.sort(idx), np.arange(box8.size))
    q = root_cube(box8)
    assert all(q.contains(c) for c in q.children())
    assert not q.children()[0].contains(q)
    assert DyadicCube(3, (0, 0, 0), 1, 8).children() == []


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("level", [0.5, 1.0, 2.0])
def test_cz_properties(box8, seed, level):
    f = _field(box8, seed)
    w = np.random.default_rng(seed + 10).uniform(0.5, 2.0, box8.size)
    mu_t = w * box8.weights
    alpha = level * np.sum(np.abs(f) * mu_t) / np.sum(mu_t)
    D = cz_decompose(box8, f, alpha, w)
    v = D.verify(box8)
    assert v["reconstruction_error"] <= 1e-12
    assert v["max_weighted_mean"] <= 1e-12
    assert v["support_ok"] and v["disjoint"]
    assert v["C_g"] <= 8 * w.max() / w.min()
    assert v["C_sigma"] <= 1.0 + 1e-12


def test_cz_cubes_are_maximal(box8):
    # stopping-time oracle: selected cubes exceed alpha, their parents do not, unselected cells stay below
    f = _field(box8, 4)
    mu = box8.weights
    alpha = 1.5 * np.sum(np.abs(f) * mu) / mu.sum()
    D = cz_decompose(box8, f, alpha)
    covered = np.zeros(box8.size, dtype=bool)
    for c in D.cubes:
        assert _avg(f, mu, c.indices()) > alpha
        covered[c.indices()] = True
        parents = [p for lev in range(c.level) for p in cubes_at_level(box8, lev) if p.contains(c)]
        assert all(_avg(f, mu, p.indices()) <= alpha for p in parents)
    assert np.all(np.abs(f[~covered]) <= alpha)


def test_cz_root_selected(box8, caplog):
    f = _field(box8, 5)
    with caplog.at_level(logging.WARNING, logger="katolab"):
        D = cz_decompose(box8, f, 1e-12)
    assert D.root_selected and len(D.cubes) == 1
    assert "root selected" in caplog.text
    assert np.allclose(D.g, D.g[0])


def test_cz_rejects_bad_inputs(box8):
    f = _field(box8, 0)
    with pytest.raises(CZError):
        cz_decompose(box8, f, 0.0)
    with pytest.raises(CZError):
        cz_decompose(box8, f, 1.0, np.zeros(box8.size))


def test_cz_export(box8):
    D = cz_decompose(box8, _field(box8, 1), 0.1)
    text = D.export(box8)
    assert len(text.strip().splitlines()) == 2 + len(D.cubes)


def test_tilde_cancellation_free(box8_free):
    g = box8_free.grid
    D = cz_decompose(g, _field(g, 2), 0.05)
    B = bad_stack(D)
    assert B.shape[1] > 0
    bt = tilde_transform(box8_free, B, np.ones(g.size))
    assert np.max(plain_mean_ratio(g, bt)) <= 1e-8
    single = tilde_transform(box8_free, B[:, 0], np.ones(g.size))
    np.testing.assert_allclose(single, bt[:, 0])


def test_tilde_cancellation_weighted(box16_well):
    g = box16_well.grid
    w = compute_weight(box16_well).w
    D = cz_decompose(g, _field(g, 3), 0.05, w)
    B = bad_stack(D)
    bt = tilde_transform(box16_well, B, w)
    assert np.max(plain_mean_ratio(g, bt)) <= 1e-8
    # without the weighted mean zero, the cancellation fails and the transform refuses
    with pytest.raises(CZError):
        tilde_transform(box16_well, np.abs(B[:, 0]), w)


@pytest.mark.parametrize("pattern", list(AtomPattern))
def test_hardy_atoms(box8, pattern):
    for cube in cubes_at_level(box8, 2)[:5]:
        atom = hardy_atom(box8, cube, pattern, np.random.default_rng(3))
        c = atom.check(box8)
        assert c["support_ok"] and c["sup_ok"]
        assert abs(c["mean"]) <= 1e-12
        assert 0 < c["l1"] <= 1 + 1e-12
    with pytest.raises(CZError):
        hardy_atom(box8, cubes_at_level(box8, 3)[0])


def test_weak_family_doubling_extends(box8):
    a, b = weak_family(box8, 4, seed=1), weak_family(box8, 8, seed=1)
    assert len(a.spikes) == 4 and len(b.spikes) == 8
    for x, y in zip(a.spikes, b.spikes):
        np.testing.assert_array_equal(x, y)


def test_weak11_refuses_non_hormander(box8_free):
    with pytest.raises(CZError, match="not Hormander"):
        weak11_report(box8_free, heaviside(1.0))


def test_weak11_finite(box8_free):
    rep = weak11_report(box8_free, imaginary_power(1.0), count=4)
    assert np.isfinite(rep.measured_constant) and rep.measured_constant > 0
    assert np.isfinite(rep.metadata["kernel_columns"])
    assert rep.metadata["M_s"] > 0


def test_cancellation_modulus_of_identity_vanishes(radial_small_free, box8):
    for g in (radial_small_free.grid, box8):
        rows = cancellation_modulus(identity_operator(g), [0.5, 1.0])
        assert all(r["modulus"] == 0.0 for r in rows)


def test_cancellation_report_stable(radial_small_well):
    rep = cancellation_report(radial_small_well, imaginary_power(1.0), np.geomspace(0.1, 1.0, 4))
    assert rep.verdict
    assert rep.metadata["modified_spread"] <= 2.0
