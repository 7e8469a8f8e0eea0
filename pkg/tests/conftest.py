"""Shared fixtures and independent numerical oracles for the test suite.

The finite-difference helpers here rebuild Fisher/Jacobian quantities from
the forward model alone, so they stay independent of the analytic gradient
code they are used to check.
"""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from chext import (
    PathParameters,
    PathSet,
    PilotGrid,
    SageConfig,
    build_planar_array,
    channel_matrix,
    crlb_matrix,
    fisher_matrix,
    hr_extrapolate,
    jacobian,
    sage_estimate,
    simulate_pilots,
    uniform_pilot_grid,
    wrap_azimuth,
)

C0 = 299_792_458.0
CARRIER = 3.5e9

# central-difference steps per parameter slot (delay, az, el, Re gain, Im gain)
FD_STEPS = (1e-13, 1e-7, 1e-7, 1e-7, 1e-7)


@pytest.fixture(scope="session")
def default_array():
    return build_planar_array(4, 4, 0.5 * C0 / CARRIER, CARRIER)


@pytest.fixture(scope="session")
def default_grid():
    # 20 MHz band with a 2.5 us delay horizon: 51 pilots spaced 0.4 MHz
    return uniform_pilot_grid(20e6, 2.5e-6)


def equilibrated_inverse_diag(matrix):
    """Diagonal of matrix^-1 via a unit-diagonal rescaled inverse.

    The raw Fisher matrix mixes seconds, radians and linear gains, so a
    direct inverse loses digits to unit scaling; rescaling to a unit
    diagonal first keeps the per-parameter variances accurate.
    """
    scale = 1.0 / np.sqrt(np.diag(matrix))
    balanced = matrix * scale[:, None] * scale[None, :]
    return np.diag(np.linalg.inv(balanced)) * scale**2


def _shifted(vector, index, delta):
    bumped = np.array(vector, dtype=float)
    bumped[index] += delta
    return PathSet.from_parameter_vector(bumped)


def fd_derivative_stack(paths, array, frequencies, symbols):
    """Central differences of mu_m(f_k) = h_m(f_k) s_k per real parameter.

    Returns shape (5L, M, K). Only evaluates the forward channel model.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    syms = np.broadcast_to(np.asarray(symbols, dtype=complex), freqs.shape)
    base = paths.parameter_vector()
    rows = []
    for u in range(base.size):
        delta = FD_STEPS[u % 5]
        plus = channel_matrix(_shifted(base, u, +delta), array, freqs) * syms
        minus = channel_matrix(_shifted(base, u, -delta), array, freqs) * syms
        rows.append((plus - minus) / (2.0 * delta))
    return np.asarray(rows)


def fd_fisher(paths, array, pilots, noise_variance):
    rows = fd_derivative_stack(paths, array, pilots.frequencies, pilots.symbols)
    flat = rows.reshape(rows.shape[0], -1)
    return (2.0 / noise_variance) * np.real(np.conj(flat) @ flat.T)


def fd_jacobian(paths, array, frequency):
    rows = fd_derivative_stack(paths, array, [float(frequency)], np.ones(1))
    return rows[:, :, 0]


def fisher_rel_error(analytic, reference):
    """Max entrywise deviation after rescaling both to a unit diagonal.

    Raw Fisher entries span ~16 orders of magnitude across parameter units,
    so an unscaled comparison only exercises the largest block.
    """
    scale = 1.0 / np.sqrt(np.diag(analytic))
    diff = (analytic - reference) * scale[:, None] * scale[None, :]
    return float(np.max(np.abs(diff)))


def fold_azimuth(estimate, truth):
    """Resolve the phi <-> -phi mirror of an x-z array toward the truth."""
    direct = abs(wrap_azimuth(estimate - truth))
    mirrored = abs(wrap_azimuth(-estimate - truth))
    return estimate if direct <= mirrored else wrap_azimuth(-estimate)


def random_path_set(rng, num_paths):
    """Paths away from angular poles so finite differencing stays in range."""
    paths = []
    for _ in range(num_paths):
        gain = rng.uniform(0.3, 1.2) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        paths.append(
            PathParameters(
                gain,
                rng.uniform(0.05e-6, 2.4e-6),
                rng.uniform(-2.9, 2.9),
                rng.uniform(0.25, np.pi - 0.25),
            )
        )
    return PathSet(paths)


def orthogonal_two_path(k0, spacing, base_delay, azimuth, elevation, gains,
                        bandwidth=20e6):
    """Two equal-angle rays whose Fisher cross blocks vanish identically.

    Pilot energies follow a triple box convolution, so their spectrum has a
    triple zero at delay lag 1/(k0 * spacing). Placing the second ray exactly
    one lag away zeroes the 0th, 1st and 2nd frequency moments of the shared
    energy weights, and every cross-block entry is a combination of those
    three moments (equal angles turn all angular cross sums into constants
    or, via the centered array, into zeros).
    """
    box = np.ones(k0)
    weights = np.convolve(np.convolve(box, box), box)
    count = weights.size  # 3 k0 - 2
    freqs = (np.arange(count) - (count - 1) / 2.0) * spacing
    pilots = PilotGrid(freqs, np.sqrt(weights), bandwidth)
    lag = 1.0 / (k0 * spacing)
    paths = PathSet(
        [
            PathParameters(gains[0], base_delay, azimuth, elevation),
            PathParameters(gains[1], base_delay + lag, azimuth, elevation),
        ]
    )
    return paths, pilots


def offblock_ratios(entries, num_paths):
    """(raw Frobenius ratio, equilibrated max entry) over all cross blocks."""
    scale = 1.0 / np.sqrt(np.diag(entries))
    balanced = entries * scale[:, None] * scale[None, :]
    raw = 0.0
    unitfree = 0.0
    for l in range(num_paths):
        for lp in range(l + 1, num_paths):
            block = entries[5 * l : 5 * l + 5, 5 * lp : 5 * lp + 5]
            diag_l = entries[5 * l : 5 * l + 5, 5 * l : 5 * l + 5]
            diag_lp = entries[5 * lp : 5 * lp + 5, 5 * lp : 5 * lp + 5]
            den = np.sqrt(np.linalg.norm(diag_l) * np.linalg.norm(diag_lp))
            raw = max(raw, float(np.linalg.norm(block) / den))
            unitfree = max(
                unitfree, float(np.max(np.abs(balanced[5 * l : 5 * l + 5, 5 * lp : 5 * lp + 5])))
            )
    return raw, unitfree


STUDY_SNR_DB = 30.0
STUDY_SEED = 903
STUDY_TRIALS = 200
STUDY_PATHS = PathSet(
    [
        PathParameters(0.80 * np.exp(0.40j), 0.35e-6, -0.90, 1.25),
        PathParameters(0.60 * np.exp(-1.90j), 1.30e-6, 0.60, 1.85),
        PathParameters(0.45 * np.exp(2.30j), 2.05e-6, 2.30, 0.95),
    ]
)


@pytest.fixture(scope="session")
def sage_crlb_study(default_array, default_grid):
    """200 noisy estimator runs on a fixed three-path scene at 30 dB SNR.

    Collects per-trial extrapolation squared errors on a +-100 MHz grid,
    matched per-parameter errors (azimuth folded across the mirror plane),
    and the corresponding bound values for comparison tests.
    """
    paths = STUDY_PATHS
    array, pilots = default_array, default_grid
    noise = 10.0 ** (-STUDY_SNR_DB / 10.0)
    freqs = np.linspace(-100e6, 100e6, 9)
    truth_at = channel_matrix(paths, array, freqs)

    fisher = fisher_matrix(paths, array, pilots, noise)
    crlb_mean = np.array(
        [crlb_matrix(fisher, jacobian(paths, array, f), f).mean_bound for f in freqs]
    )
    param_crlb = equilibrated_inverse_diag(fisher.entries)

    config = SageConfig(num_paths=len(paths), max_delay=2.5e-6)
    sq_errors = np.zeros((STUDY_TRIALS, freqs.size))
    param_errors = np.zeros((STUDY_TRIALS, len(paths), 5))
    for trial in range(STUDY_TRIALS):
        received = simulate_pilots(paths, array, pilots, noise, seed=(STUDY_SEED, trial))
        result = sage_estimate(received, pilots, array, config)
        for i, f in enumerate(freqs):
            err = hr_extrapolate(result, array, float(f)).values - truth_at[:, i]
            sq_errors[trial, i] = float(np.mean(np.abs(err) ** 2))
        est = result.estimated_paths
        cost = np.abs(est.delays[:, None] - paths.delays[None, :])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            e, t = est.paths[r], paths.paths[c]
            az = fold_azimuth(e.azimuth, t.azimuth)
            param_errors[trial, c] = (
                e.delay - t.delay,
                wrap_azimuth(az - t.azimuth),
                e.elevation - t.elevation,
                e.gain.real - t.gain.real,
                e.gain.imag - t.gain.imag,
            )
    return {
        "paths": paths,
        "array": array,
        "pilots": pilots,
        "noise_variance": noise,
        "frequencies": freqs,
        "crlb_mean": crlb_mean,
        "param_crlb_diag": param_crlb,
        "sq_errors": sq_errors,
        "param_errors": param_errors,
        "trials": STUDY_TRIALS,
    }
