"""Fisher information, channel bounds, closed forms and ray diagnostics."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from chext import (
    FisherMatrix,
    IllConditionedFisherError,
    PathParameters,
    PathSet,
    PilotGrid,
    build_planar_array,
    channel_crlb,
    crlb_matrix,
    extrapolation_range,
    fisher_matrix,
    jacobian,
    mean_squared_bandwidth,
    merge_close_paths,
    separation_diagnostics,
    simplified_crlb,
)
from conftest import (
    C0,
    CARRIER,
    fd_fisher,
    fd_jacobian,
    fisher_rel_error,
    offblock_ratios,
    orthogonal_two_path,
    random_path_set,
)


def test_fisher_gain_block_anchor(default_array, default_grid):
    # d mu / d Re(alpha) has unit modulus everywhere: the diagonal is 2 M E_T / sigma^2
    paths = PathSet([PathParameters(0.7 - 0.4j, 1.1e-6, 0.3, 1.4)])
    noise = 0.1
    fisher = fisher_matrix(paths, default_array, default_grid, noise)
    expected = 2.0 / noise * 16 * 51
    assert math.isclose(fisher.entries[3, 3], expected, rel_tol=1e-12)
    assert math.isclose(fisher.entries[4, 4], expected, rel_tol=1e-12)
    assert abs(fisher.entries[3, 4]) < 1e-9 * expected


def test_fisher_delay_gain_decoupling_on_symmetric_grid(default_array, default_grid):
    # sum_k f_k |s_k|^2 = 0 kills the delay/gain cross terms for one path
    paths = PathSet([PathParameters(0.9 + 0.2j, 0.7e-6, -0.8, 1.1)])
    entries = fisher_matrix(paths, default_array, default_grid, 0.1).entries
    scale = math.sqrt(entries[0, 0] * entries[3, 3])
    assert abs(entries[0, 3]) < 1e-10 * scale
    assert abs(entries[0, 4]) < 1e-10 * scale


def test_fisher_matches_finite_difference(default_grid):
    rng = np.random.default_rng(210)
    worst = 0.0
    for rows, cols, num_paths in ((4, 4, 1), (2, 2, 2), (2, 4, 3)):
        array = build_planar_array(rows, cols, 0.5 * C0 / CARRIER, CARRIER)
        paths = random_path_set(rng, num_paths)
        analytic = fisher_matrix(paths, array, default_grid, 0.25).entries
        reference = fd_fisher(paths, array, default_grid, 0.25)
        worst = max(worst, fisher_rel_error(analytic, reference))
    print(f"[check] Fisher FD max rel error {worst:.3e} (tol 1e-4)")
    assert worst < 1e-4


def test_jacobian_matches_finite_difference(default_array):
    rng = np.random.default_rng(211)
    paths = random_path_set(rng, 3)
    for f in (60e6, -130e6):
        analytic = jacobian(paths, default_array, f)
        reference = fd_jacobian(paths, default_array, f)
        norms = np.linalg.norm(analytic, axis=1)
        floor = 1e-9 * norms.max()
        rel = np.max(np.abs(analytic - reference), axis=1) / np.maximum(norms, floor)
        assert np.max(rel) < 1e-4


def test_jacobian_delay_rows_vanish_at_zero_frequency(default_array):
    rng = np.random.default_rng(212)
    paths = random_path_set(rng, 3)
    jac = jacobian(paths, default_array, 0.0)
    assert jac.shape == (15, 16)
    assert np.all(jac[0::5] == 0.0)


def test_jacobian_gain_rows_unit_path():
    array = build_planar_array(1, 3, 0.4 * C0 / CARRIER, CARRIER)
    tau, f = 0.9e-6, 47e6
    paths = PathSet([PathParameters(0.3 + 0.8j, tau, 1.1, 0.7)])
    jac = jacobian(paths, array, f)
    phase = np.exp(-2j * np.pi * f * tau)
    # center element: unit pattern, so the gain rows are the bare delay phase
    assert abs(jac[3, 1] - phase) < 1e-12
    assert abs(jac[4, 1] - 1j * phase) < 1e-12


def test_fisher_symmetric_psd(default_grid):
    rng = np.random.default_rng(213)
    for _ in range(30):
        rows, cols = rng.choice([1, 2, 4]), rng.choice([2, 4])
        array = build_planar_array(rows, cols, 0.5 * C0 / CARRIER, CARRIER)
        paths = random_path_set(rng, int(rng.integers(1, 5)))
        entries = fisher_matrix(paths, array, default_grid, 0.5).entries
        assert np.allclose(entries, entries.T, rtol=1e-12, atol=0.0)
        eig = np.linalg.eigvalsh(entries)
        assert eig.min() > -1e-9 * max(eig.max(), 1.0)


def test_crlb_bound_hermitian_psd(default_array, default_grid):
    rng = np.random.default_rng(214)
    computed = 0
    for _ in range(30):
        paths = random_path_set(rng, int(rng.integers(1, 4)))
        fisher = fisher_matrix(paths, default_array, default_grid, 0.1)
        try:
            result = crlb_matrix(fisher, jacobian(paths, default_array, 80e6), 80e6)
        except IllConditionedFisherError:
            continue
        computed += 1
        bound = result.bound_matrix
        assert np.allclose(bound, bound.conj().T, atol=1e-12 * np.abs(bound).max())
        eig = np.linalg.eigvalsh(bound)
        assert eig.min() > -1e-9 * eig.max()
        assert math.isclose(
            result.mean_bound, float(np.real(np.trace(bound))) / 16, rel_tol=1e-12
        )
    assert computed >= 20


def test_single_path_frozen_pattern_matches_simplified(default_array, default_grid):
    rng = np.random.default_rng(215)
    noise = 0.1
    sigma_f = math.sqrt(default_grid.mean_squared_bandwidth)
    for _ in range(5):
        paths = random_path_set(rng, 1)
        for f in (-180e6, -40e6, 0.0, 90e6, 200e6):
            result = channel_crlb(
                paths, default_array, default_grid, noise, f, freeze_pattern=True
            )
            closed = simplified_crlb(1, 16, default_grid.total_energy, sigma_f, noise, f)
            assert result.simplified_bound == closed
            assert abs(result.mean_bound - closed) < 1e-9 * closed


def test_beam_squint_shifts_single_path_bound(default_array, default_grid):
    # with the true pattern the bound deviates from the frozen closed form,
    # but only at the squint scale f/f_c
    paths = PathSet([PathParameters(0.8, 1.3e-6, 0.4, 1.1)])
    f = 200e6
    frozen = channel_crlb(paths, default_array, default_grid, 0.1, f, freeze_pattern=True)
    true = channel_crlb(paths, default_array, default_grid, 0.1, f)
    rel = abs(true.mean_bound - frozen.mean_bound) / frozen.mean_bound
    assert 1e-7 < rel < 1e-2


def test_bound_grows_with_frequency(default_array, default_grid):
    paths = PathSet([PathParameters(1.0, 0.9e-6, -0.5, 1.3)])
    fisher = fisher_matrix(paths, default_array, default_grid, 0.1)
    bounds = [
        crlb_matrix(fisher, jacobian(paths, default_array, f), f).mean_bound
        for f in (0.0, 25e6, 50e6, 100e6, 200e6)
    ]
    assert all(b2 > b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_duplicate_paths_raise_with_diagnostic(default_array, default_grid):
    dup = PathParameters(0.5, 1.0e-6, 0.2, 1.5)
    paths = PathSet([dup, PathParameters(0.5, 1.0e-6, 0.2, 1.5), PathParameters(0.4, 2.0e-6, -1.0, 0.9)])
    fisher = fisher_matrix(paths, default_array, default_grid, 0.1)
    with pytest.raises(IllConditionedFisherError) as info:
        crlb_matrix(fisher, jacobian(paths, default_array, 10e6), 10e6)
    assert info.value.condition_number >= 1e12
    assert info.value.closest_pair == (0, 1)


def test_simplified_crlb_values():
    got = simplified_crlb(10, 16, 51.0, 5.9e6, 0.1, 0.0)
    assert math.isclose(got, 0.1 / 51 * 10 / 16 * 2, rel_tol=1e-12)
    assert got == pytest.approx(2.451e-3, rel=1e-3)
    sigma_f = 5.9e6
    at_2sf = simplified_crlb(10, 16, 51.0, sigma_f, 0.1, 2 * sigma_f)
    assert math.isclose(at_2sf, 2 * got, rel_tol=1e-12)
    assert math.isclose(
        simplified_crlb(10, 32, 51.0, sigma_f, 0.1, 0.0), got / 2, rel_tol=1e-12
    )
    with pytest.raises(ValueError):
        simplified_crlb(0, 16, 51.0, sigma_f, 0.1, 0.0)
    with pytest.raises(ValueError):
        simplified_crlb(10, 16, 0.0, sigma_f, 0.1, 0.0)
    with pytest.raises(ValueError):
        simplified_crlb(10, 16, 51.0, -1.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        simplified_crlb(10, 16, 51.0, sigma_f, 0.0, 0.0)


def test_mean_squared_bandwidth(default_grid):
    freqs = default_grid.frequencies
    w = np.abs(default_grid.symbols) ** 2
    assert math.isclose(
        mean_squared_bandwidth(default_grid),
        float(np.sum(freqs**2 * w) / np.sum(w)),
        rel_tol=1e-14,
    )
    dead = PilotGrid([0.0, 1e6], [0.0, 0.0], 20e6)
    with pytest.raises(ValueError, match="no energy"):
        mean_squared_bandwidth(dead)


def test_extrapolation_range_closed_form(default_grid):
    sigma_f = math.sqrt(default_grid.mean_squared_bandwidth)
    got = extrapolation_range(1.0, 16, 51, 10, sigma_f)
    assert math.isclose(got, 74289523.7118487, rel_tol=1e-12)

    def mse_gap(f, noise, gamma, m, k, paths):
        # total energy k at unit symbols makes the per-pilot energy 1
        return simplified_crlb(paths, m, float(k), sigma_f, noise, f) - gamma * noise

    for noise in (0.1, 3.7):
        root = brentq(mse_gap, 0.0, 1e10, args=(noise, 1.0, 16, 51, 10), xtol=1e-3)
        assert abs(root - got) < 1e-6 * got


def test_extrapolation_range_random_tuples():
    rng = np.random.default_rng(216)
    sigma_f = 5.9e6
    checked = 0
    while checked < 5:
        gamma = float(rng.uniform(0.3, 4.0))
        m = int(rng.integers(2, 129))
        k = int(rng.integers(3, 101))
        paths = int(rng.integers(1, 21))
        if m * k * gamma / (2 * paths) < 1.05:
            continue
        closed = extrapolation_range(gamma, m, k, paths, sigma_f)

        def gap(f):
            return simplified_crlb(paths, m, float(k), sigma_f, 0.1, f) - gamma * 0.1

        root = brentq(gap, 0.0, 10 * closed + sigma_f, xtol=1e-3)
        assert abs(root - closed) < 1e-6 * max(closed, 1.0)
        checked += 1


def test_extrapolation_range_edges():
    assert extrapolation_range(0.5, 4, 5, 5, 1e6) == 0.0
    with pytest.raises(ValueError, match="no extrapolation range"):
        extrapolation_range(0.5, 4, 4, 5, 1e6)
    with pytest.raises(ValueError):
        extrapolation_range(-1.0, 4, 5, 5, 1e6)
    with pytest.raises(ValueError):
        extrapolation_range(1.0, 4, 5, 5, 0.0)
    with pytest.raises(ValueError):
        extrapolation_range(1.0, 0, 5, 5, 1e6)
    assert extrapolation_range(2.0, 16, 51, 10, 1e6) > extrapolation_range(
        1.0, 16, 51, 10, 1e6
    )
    assert extrapolation_range(1.0, 32, 51, 10, 1e6) > extrapolation_range(
        1.0, 16, 51, 10, 1e6
    )


def test_fisher_validation(default_array, default_grid):
    paths = PathSet([PathParameters(1.0, 1e-6, 0.0, 1.5)])
    with pytest.raises(ValueError):
        fisher_matrix(paths, default_array, default_grid, 0.0)
    with pytest.raises(ValueError, match="square"):
        FisherMatrix(np.ones((5, 4)))
    with pytest.raises(ValueError, match="multiple of 5"):
        FisherMatrix(np.eye(4))
    with pytest.raises(ValueError, match="finite"):
        FisherMatrix(np.full((5, 5), np.nan))
    fisher = fisher_matrix(paths, default_array, default_grid, 0.1)
    with pytest.raises(ValueError, match="Jacobian shape"):
        crlb_matrix(fisher, np.ones((4, 16)), 0.0)


def test_orthogonal_construction_kills_cross_blocks(default_array):
    paths, pilots = orthogonal_two_path(
        17, 0.4e6, 0.5e-6, 0.7, 1.2, (0.9, 0.5 * np.exp(1.1j))
    )
    entries = fisher_matrix(paths, default_array, pilots, 0.1).entries
    raw, unitfree = offblock_ratios(entries, 2)
    print(f"[check] cross-block ratios raw {raw:.3e} unit-free {unitfree:.3e}")
    assert raw < 1e-10
    assert unitfree < 1e-10


def test_separation_diagnostics_on_orthogonal_pair(default_array):
    paths, pilots = orthogonal_two_path(
        17, 0.4e6, 0.5e-6, 0.7, 1.2, (0.9, 0.5 * np.exp(1.1j))
    )
    report = separation_diagnostics(paths, default_array, pilots)
    assert report.fisher_block_diagonal
    assert report.fisher_block_ratio < 1e-10
    pair = report.pairs[0]
    assert (pair.path_a, pair.path_b) == (0, 1)
    assert pair.as3_satisfied
    assert max(pair.delay_products.values()) < 1e-10
    # equal angles: the angular products are all order one
    assert pair.angle_products["a_a"] == pytest.approx(1.0, abs=1e-12)
    for sym in report.per_path:
        assert sym.as4_satisfied
        assert sym.frequency_symmetry < 1e-12
        assert sym.azimuth_centering < 1e-12
        assert sym.elevation_centering < 1e-12


def test_separation_diagnostics_flags_coincident_pair(default_array, default_grid):
    paths = PathSet(
        [
            PathParameters(0.8, 1.00e-6, 0.3, 1.4),
            PathParameters(0.6, 1.00001e-6, 0.3001, 1.4001),
        ]
    )
    report = separation_diagnostics(paths, default_array, default_grid)
    pair = report.pairs[0]
    assert not pair.as3_satisfied
    assert pair.delay_products["s_s"] > 0.99
    assert pair.angle_products["a_a"] > 0.99
    assert not report.fisher_block_diagonal
    assert report.fisher_block_ratio > 0.1


def test_merge_close_paths():
    paths = PathSet(
        [
            PathParameters(0.5, 1.0e-6, 0.300, 1.40),
            PathParameters(0.8j, 1.0e-6 + 4e-10, 0.3005, 1.4005),
            PathParameters(0.4, 2.0e-6, -1.2, 0.9),
        ]
    )
    merged = merge_close_paths(paths, 100e6)
    assert len(merged) == 2
    # summed gain, strongest member's geometry
    assert merged.paths[0].gain == pytest.approx(0.5 + 0.8j)
    assert merged.paths[0].delay == pytest.approx(1.0e-6 + 4e-10)
    assert merged.paths[0].azimuth == pytest.approx(0.3005)
    assert merged.paths[1].gain == 0.4
    with pytest.raises(ValueError, match="delay_threshold"):
        merge_close_paths(paths, 0.0)
    # wide angle gap blocks the merge even at equal delay
    apart = PathSet(
        [
            PathParameters(0.5, 1.0e-6, 0.3, 1.4),
            PathParameters(0.8, 1.0e-6, 0.9, 1.4),
        ]
    )
    assert len(merge_close_paths(apart, 100e6)) == 2
