"""Cramer-Rao bounds on extrapolated-channel error, plus assumption diagnostics.

The Fisher information is computed in the real parameter vector stacking
(delay, azimuth, elevation, Re gain, Im gain) per path, the PathSet
convention. The bound on the channel at a target baseband frequency f maps
the parameter bound through the Jacobian of h(f) w.r.t. the parameters:

    C(f) = G(f)^H I^{-1} G(f),   MSE_m(f) >= [C(f)]_{m,m}.

All pattern evaluations keep the true frequency dependence (beam squint)
unless freeze_pattern is set, which pins the pattern to its f = 0 value and
is meant only for comparisons against the separated-rays closed form (that
derivation assumes a frequency-flat pattern).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
import scipy.linalg

from .channel import (
    TWO_PI,
    ArrayGeometry,
    PathParameters,
    PathSet,
    PilotGrid,
    direction_vector,
    pattern_response_with_gradients,
)

CONDITION_LIMIT = 1e12
PARAMS = PathSet.PARAMS_PER_PATH


class IllConditionedFisherError(RuntimeError):
    """Fisher matrix too close to singular for a meaningful bound.

    Carries the condition number and the closest path pair (delay gap scaled
    by the pilot bandwidth measure, angle gap by the array beamwidth) as a
    hint at which rays are nearly collinear.
    """

    def __init__(self, message, condition_number, closest_pair=None):
        super().__init__(message)
        self.condition_number = float(condition_number)
        self.closest_pair = closest_pair


def _equilibration(entries: np.ndarray) -> np.ndarray:
    """Symmetric Jacobi scaling vector 1/sqrt(diag), 1 where the diagonal is 0."""
    diag = np.diag(entries)
    safe = np.where(diag > 0.0, diag, 1.0)
    return np.where(diag > 0.0, 1.0 / np.sqrt(safe), 1.0)


@dataclass
class FisherMatrix:
    """5L x 5L real symmetric Fisher information in PathSet ordering.

    condition_number is measured on the unit-equilibrated matrix
    D I D with D = diag(1/sqrt(diag I)): the raw matrix mixes seconds,
    radians and linear gains, so its raw condition number is dominated by
    unit scaling rather than by actual ray collinearity.
    """

    entries: np.ndarray
    paths: Optional[PathSet] = None
    pilots: Optional[PilotGrid] = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        n = self.entries.shape[0]
        if self.entries.ndim != 2 or self.entries.shape != (n, n):
            raise ValueError("Fisher matrix must be square")
        if n % PARAMS != 0 or n == 0:
            raise ValueError("Fisher dimension must be a positive multiple of 5")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("Fisher entries must be finite")

    @property
    def num_paths(self) -> int:
        return self.entries.shape[0] // PARAMS

    @property
    def condition_number(self) -> float:
        scale = _equilibration(self.entries)
        return float(np.linalg.cond(self.entries * scale[:, None] * scale[None, :]))


@dataclass
class CrlbResult:
    """Bound on the channel error at one frequency."""

    frequency: float
    bound_matrix: np.ndarray
    mean_bound: float
    simplified_bound: Optional[float]
    condition_number: float

    def __post_init__(self):
        self.frequency = float(self.frequency)
        self.bound_matrix = np.asarray(self.bound_matrix, dtype=complex)
        self.mean_bound = float(self.mean_bound)
        if self.simplified_bound is not None:
            self.simplified_bound = float(self.simplified_bound)
        self.condition_number = float(self.condition_number)


def _derivative_stack(paths: PathSet, array: ArrayGeometry, frequencies, symbols, freeze_pattern):
    """d mu / d psi for every parameter, stacked (5L, M, K).

    frequencies is the 1-D baseband grid; symbols either the pilot symbols
    (Fisher use) or ones (Jacobian use). freeze_pattern evaluates the element
    pattern and its gradients at baseband 0 while keeping the delay phases.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    syms = np.broadcast_to(np.asarray(symbols, dtype=complex), freqs.shape)
    pattern_freqs = np.zeros_like(freqs) if freeze_pattern else freqs
    pat, g_az, g_el = pattern_response_with_gradients(
        array, paths.azimuths, paths.elevations, pattern_freqs
    )  # each (L, M, K)
    delay_phase = np.exp(-1j * TWO_PI * np.outer(paths.delays, freqs))  # (L, K)
    carrier = (delay_phase * syms[None, :])[:, None, :]  # (L, 1, K)
    gains = paths.gains[:, None, None]
    base = pat * carrier
    rows = np.empty((PARAMS * len(paths), array.num_elements, freqs.size), dtype=complex)
    dtau = (-1j * TWO_PI) * freqs[None, None, :]
    rows[0::PARAMS] = gains * base * dtau
    rows[1::PARAMS] = gains * g_az * carrier
    rows[2::PARAMS] = gains * g_el * carrier
    rows[3::PARAMS] = base
    rows[4::PARAMS] = 1j * base
    return rows


def fisher_matrix(
    paths: PathSet,
    array: ArrayGeometry,
    pilots: PilotGrid,
    noise_variance: float,
    freeze_pattern: bool = False,
) -> FisherMatrix:
    """Fisher information of the pilot observation w.r.t. the path parameters.

    Entry (u, v) is (2/noise_variance) sum over antennas and pilots of
    Re(conj(d mu/d psi_u) d mu/d psi_v).
    """
    noise_variance = float(noise_variance)
    if noise_variance <= 0.0:
        raise ValueError("noise variance must be positive")
    rows = _derivative_stack(
        paths, array, pilots.frequencies, pilots.symbols, freeze_pattern
    ).reshape(PARAMS * len(paths), -1)
    gram = (2.0 / noise_variance) * np.real(np.conj(rows) @ rows.T)
    gram = 0.5 * (gram + gram.T)
    return FisherMatrix(gram, paths=paths, pilots=pilots)


def jacobian(
    paths: PathSet,
    array: ArrayGeometry,
    frequency: float,
    freeze_pattern: bool = False,
) -> np.ndarray:
    """Jacobian G(f) of h(f) w.r.t. the parameters, shape (5L, M)."""
    rows = _derivative_stack(paths, array, float(frequency), 1.0, freeze_pattern)
    return rows[:, :, 0]


def _closest_pair(paths: Optional[PathSet], pilots: Optional[PilotGrid], array_scale=None):
    if paths is None or len(paths) < 2:
        return None
    delay_scale = 1.0
    if pilots is not None:
        sigma_f = math.sqrt(pilots.mean_squared_bandwidth)
        if sigma_f > 0.0:
            delay_scale = 2.0 * sigma_f
    angle_scale = array_scale if array_scale else 1.0
    dirs = direction_vector(paths.azimuths, paths.elevations)
    best, best_pair = math.inf, None
    for l, lp in combinations(range(len(paths)), 2):
        dtau = abs(paths.delays[l] - paths.delays[lp]) * delay_scale
        cosang = float(np.clip(np.dot(dirs[l], dirs[lp]), -1.0, 1.0))
        dang = math.acos(cosang) / angle_scale
        dist = math.hypot(dtau, dang)
        if dist < best:
            best, best_pair = dist, (l, lp)
    return best_pair


def crlb_matrix(fisher: FisherMatrix, jac: np.ndarray, frequency: float) -> CrlbResult:
    """Map the Fisher information through the Jacobian: C(f) = G^H I^{-1} G.

    Raises IllConditionedFisherError when the Fisher condition number reaches
    1e12 (nearly coincident rays make the bound meaningless).
    """
    jac = np.asarray(jac, dtype=complex)
    if jac.ndim != 2 or jac.shape[0] != fisher.entries.shape[0]:
        raise ValueError("Jacobian shape does not match the Fisher matrix")
    cond = fisher.condition_number
    if not cond < CONDITION_LIMIT:
        pair = _closest_pair(fisher.paths, fisher.pilots)
        raise IllConditionedFisherError(
            f"Fisher condition number {cond:.3e} exceeds 1e12"
            + (f"; closest path pair {pair}" if pair else ""),
            cond,
            pair,
        )
    # symmetric indefinite solve on the equilibrated system (unit-free pivots)
    scale = _equilibration(fisher.entries)
    balanced = fisher.entries * scale[:, None] * scale[None, :]
    solved = scale[:, None] * scipy.linalg.solve(
        balanced, scale[:, None] * jac, assume_a="sym"
    )
    bound = jac.conj().T @ solved
    bound = 0.5 * (bound + bound.conj().T)
    mean_bound = float(np.real(np.trace(bound)) / bound.shape[0])
    return CrlbResult(float(frequency), bound, mean_bound, None, cond)


def simplified_crlb(
    num_paths: int,
    num_elements: int,
    total_energy: float,
    sigma_f: float,
    noise_variance: float,
    frequency: float,
) -> float:
    """Separated-rays closed form (sigma_w^2/E_T)(L/M)(2 + (f/sigma_F)^2/2)."""
    if num_paths < 1 or num_elements < 1:
        raise ValueError("path and antenna counts must be positive")
    if total_energy <= 0.0 or noise_variance <= 0.0:
        raise ValueError("energies must be positive")
    if sigma_f <= 0.0:
        raise ValueError("sigma_f must be positive")
    ratio = float(frequency) / float(sigma_f)
    return (
        (float(noise_variance) / float(total_energy))
        * (float(num_paths) / float(num_elements))
        * (2.0 + 0.5 * ratio * ratio)
    )


def mean_squared_bandwidth(pilots: PilotGrid) -> float:
    """Energy-weighted second moment of the pilot frequencies [Hz^2]."""
    if pilots.total_energy <= 0.0:
        raise ValueError("pilot grid carries no energy")
    return pilots.mean_squared_bandwidth


def extrapolation_range(gamma: float, num_elements: int, num_pilots: int, num_paths: int, sigma_f: float) -> float:
    """Largest |f| with simplified bound <= gamma times the per-pilot LS MSE.

    Closed form 2 sigma_F sqrt(M K gamma / (2L) - 1); independent of the SNR.
    """
    if gamma <= 0.0 or sigma_f <= 0.0:
        raise ValueError("gamma and sigma_f must be positive")
    if num_elements < 1 or num_pilots < 1 or num_paths < 1:
        raise ValueError("counts must be positive")
    arg = num_elements * num_pilots * gamma / (2.0 * num_paths)
    if arg < 1.0:
        raise ValueError(
            f"no extrapolation range exists: M K gamma / (2 L) = {arg:.6g} < 1"
        )
    return 2.0 * float(sigma_f) * math.sqrt(arg - 1.0)


def channel_crlb(
    paths: PathSet,
    array: ArrayGeometry,
    pilots: PilotGrid,
    noise_variance: float,
    frequency: float,
    freeze_pattern: bool = False,
) -> CrlbResult:
    """Full bound plus the simplified closed form in one call."""
    fisher = fisher_matrix(paths, array, pilots, noise_variance, freeze_pattern)
    jac = jacobian(paths, array, frequency, freeze_pattern)
    result = crlb_matrix(fisher, jac, frequency)
    result.simplified_bound = simplified_crlb(
        len(paths),
        array.num_elements,
        pilots.total_energy,
        math.sqrt(pilots.mean_squared_bandwidth),
        noise_variance,
        frequency,
    )
    return result


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class PairSeparation:
    """Normalized inner products between two paths' signatures."""

    path_a: int
    path_b: int
    delay_products: dict
    angle_products: dict
    as3_satisfied: bool


@dataclass
class PathSymmetry:
    """Per-path symmetry conditions (frequency and pattern centering)."""

    path: int
    frequency_symmetry: float
    azimuth_centering: float
    elevation_centering: float
    as4_satisfied: bool


@dataclass
class SeparationReport:
    pairs: list
    per_path: list
    fisher_block_ratio: float
    fisher_block_diagonal: bool


def _normalized(value: complex, norm_a: float, norm_b: float) -> float:
    den = norm_a * norm_b
    if den == 0.0:
        return math.nan
    return float(abs(value) / den)


def separation_diagnostics(paths: PathSet, array: ArrayGeometry, pilots: PilotGrid) -> SeparationReport:
    """Quantify ray separation and symmetry conditions behind the closed form.

    Pairwise: delayed-pilot inner products (plain, derivative and mixed) and
    the frozen-pattern angular products between steering vectors and their
    angle derivatives, all normalized by the factors' norms. A pair counts as
    separated when either the delay triple or the angular sextuple is below
    1e-3. Per path: the odd pilot-energy moment and the pattern/derivative
    inner products, below 1e-6 for the symmetry condition. Also reports how
    block-diagonal the actual Fisher matrix is (off-block Frobenius mass
    relative to the corresponding diagonal blocks).
    """
    freqs = pilots.frequencies
    weights = np.abs(pilots.symbols) ** 2
    total = float(np.sum(weights))
    # delayed pilots and their delay derivative
    delayed = pilots.symbols[None, :] * np.exp(-1j * TWO_PI * np.outer(paths.delays, freqs))
    d_delayed = (-1j * TWO_PI) * freqs[None, :] * delayed
    s_norm = np.linalg.norm(delayed, axis=1)
    ds_norm = np.linalg.norm(d_delayed, axis=1)
    # frozen pattern (the separation conditions drop the frequency dependence)
    pat, g_az, g_el = pattern_response_with_gradients(
        array, paths.azimuths, paths.elevations, 0.0
    )
    a = pat[:, :, 0]
    da = g_az[:, :, 0]
    de = g_el[:, :, 0]
    a_norm = np.linalg.norm(a, axis=1)
    da_norm = np.linalg.norm(da, axis=1)
    de_norm = np.linalg.norm(de, axis=1)

    pairs = []
    for l, lp in combinations(range(len(paths)), 2):
        delay_products = {
            "s_s": _normalized(np.vdot(delayed[l], delayed[lp]), s_norm[l], s_norm[lp]),
            "ds_ds": _normalized(np.vdot(d_delayed[l], d_delayed[lp]), ds_norm[l], ds_norm[lp]),
            "ds_s": _normalized(np.vdot(d_delayed[l], delayed[lp]), ds_norm[l], s_norm[lp]),
        }
        angle_products = {
            "a_a": _normalized(np.vdot(a[l], a[lp]), a_norm[l], a_norm[lp]),
            "daz_daz": _normalized(np.vdot(da[l], da[lp]), da_norm[l], da_norm[lp]),
            "del_del": _normalized(np.vdot(de[l], de[lp]), de_norm[l], de_norm[lp]),
            "daz_a": _normalized(np.vdot(da[l], a[lp]), da_norm[l], a_norm[lp]),
            "del_a": _normalized(np.vdot(de[l], a[lp]), de_norm[l], a_norm[lp]),
            "daz_del": _normalized(np.vdot(da[l], de[lp]), da_norm[l], de_norm[lp]),
        }
        delay_ok = max(delay_products.values()) < 1e-3
        angle_ok = max(angle_products.values()) < 1e-3
        pairs.append(PairSeparation(l, lp, delay_products, angle_products, delay_ok or angle_ok))

    sigma_f = math.sqrt(pilots.mean_squared_bandwidth) if total > 0 else 0.0
    freq_sym_den = sigma_f * total
    per_path = []
    for l in range(len(paths)):
        freq_sym = (
            abs(float(np.sum(freqs * weights))) / freq_sym_den if freq_sym_den > 0 else math.nan
        )
        az_c = _normalized(np.vdot(da[l], a[l]), da_norm[l], a_norm[l])
        el_c = _normalized(np.vdot(de[l], a[l]), de_norm[l], a_norm[l])
        ok = all(v == v and v < 1e-6 for v in (freq_sym, az_c, el_c))
        per_path.append(PathSymmetry(l, freq_sym, az_c, el_c, ok))

    # block-diagonality of the actual Fisher matrix (prefactor cancels)
    fisher = fisher_matrix(paths, array, pilots, 1.0).entries
    ratio = 0.0
    for l, lp in combinations(range(len(paths)), 2):
        block = fisher[PARAMS * l : PARAMS * (l + 1), PARAMS * lp : PARAMS * (lp + 1)]
        diag_l = fisher[PARAMS * l : PARAMS * (l + 1), PARAMS * l : PARAMS * (l + 1)]
        diag_lp = fisher[PARAMS * lp : PARAMS * (lp + 1), PARAMS * lp : PARAMS * (lp + 1)]
        den = math.sqrt(np.linalg.norm(diag_l) * np.linalg.norm(diag_lp))
        if den > 0:
            ratio = max(ratio, float(np.linalg.norm(block) / den))
    return SeparationReport(pairs, per_path, ratio, ratio < 1e-6)


def merge_close_paths(
    paths: PathSet,
    target_frequency: float,
    delay_threshold: Optional[float] = None,
    angle_threshold: float = math.radians(0.1),
) -> PathSet:
    """Merge nearly coincident rays into single rays with summed gains.

    Two rays merge when both their delay gap (default threshold
    1/(10 |target_frequency|)) and the angle between their directions fall
    under the thresholds. The merged ray keeps the strongest member's
    (delay, azimuth, elevation). Off by default in every pipeline; intended
    as a pre-processing step before Fisher evaluation when rays nearly
    coincide.
    """
    if delay_threshold is None:
        if target_frequency == 0.0:
            raise ValueError("delay_threshold required when target_frequency is 0")
        delay_threshold = 1.0 / (10.0 * abs(float(target_frequency)))
    dirs = direction_vector(paths.azimuths, paths.elevations)
    n = len(paths)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for l, lp in combinations(range(n), 2):
        if abs(paths.delays[l] - paths.delays[lp]) >= delay_threshold:
            continue
        cosang = float(np.clip(np.dot(dirs[l], dirs[lp]), -1.0, 1.0))
        if math.acos(cosang) < angle_threshold:
            parent[find(lp)] = find(l)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    merged = []
    for members in sorted(groups.values(), key=lambda g: g[0]):
        gain = complex(np.sum(paths.gains[members]))
        strongest = members[int(np.argmax(np.abs(paths.gains[members])))]
        p = paths.paths[strongest]
        merged.append(PathParameters(gain, p.delay, p.azimuth, p.elevation))
    return PathSet(merged)
