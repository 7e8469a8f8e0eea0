"""Specular multipath channel model over an antenna array.

Conventions used throughout the package:

- Frequencies are baseband offsets in Hz from the uplink carrier, i.e. f = 0
  is the carrier itself and downlink extrapolation targets live at f > B/2.
- A propagation path is (complex gain, delay, azimuth, elevation) with the
  direction unit vector e(az, el) = (cos az sin el, sin az sin el, cos el).
- The array is described by element positions in meters, re-centered so they
  sum to the zero vector, plus the absolute carrier frequency.
- The per-element response is a pure phase shift,
  a_m = exp(-j 2 pi ((fc + f) / c) r_m . e(az, el)),
  so the pattern keeps its frequency dependence (beam squint) by default.
- The channel at baseband frequency f is
  h_m(f) = sum_l gain_l a_m(az_l, el_l, f) exp(-j 2 pi f delay_l),
  and received pilots are r_m(f_k) = h_m(f_k) s(f_k) + w_m(f_k) with
  w ~ CN(0, noise_variance), i.i.d. across antennas and subcarriers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.constants import speed_of_light as C0

TWO_PI = 2.0 * math.pi


def derive_rng(seed, *counters) -> np.random.Generator:
    """Build a Generator from a master seed plus counter indices.

    Streams derived with distinct counters are statistically independent, so
    Monte Carlo trials can be generated in any schedule without changing the
    result for a given (seed, counters) pair.
    """
    if isinstance(seed, np.random.Generator):
        if counters:
            raise ValueError("cannot derive counters from an existing Generator")
        return seed
    if isinstance(seed, (int, np.integer)):
        entropy = [int(seed), *map(int, counters)]
    else:
        entropy = [*map(int, seed), *map(int, counters)]
    return np.random.default_rng(entropy)


# ---------------------------------------------------------------------------
# geometry


def direction_vector(azimuth, elevation) -> np.ndarray:
    """Unit direction(s) for azimuth/elevation, shape (..., 3)."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    se = np.sin(el)
    return np.stack([np.cos(az) * se, np.sin(az) * se, np.cos(el)], axis=-1)


def direction_gradients(azimuth, elevation):
    """Partial derivatives of the direction vector, each shape (..., 3)."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    d_az = np.stack(
        [-np.sin(az) * np.sin(el), np.cos(az) * np.sin(el), np.zeros_like(az)],
        axis=-1,
    )
    d_el = np.stack(
        [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), -np.sin(el) * np.ones_like(az)],
        axis=-1,
    )
    return d_az, d_el


@dataclass
class PathParameters:
    """One specular path: complex gain, delay [s], azimuth and elevation [rad]."""

    gain: complex
    delay: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        self.gain = complex(self.gain)
        self.delay = float(self.delay)
        self.azimuth = float(self.azimuth)
        self.elevation = float(self.elevation)
        if not all(
            math.isfinite(v)
            for v in (self.gain.real, self.gain.imag, self.delay, self.azimuth, self.elevation)
        ):
            raise ValueError("path parameters must be finite")
        if self.delay < 0.0:
            raise ValueError(f"delay must be nonnegative, got {self.delay!r}")
        if not (-math.pi <= self.azimuth < math.pi):
            raise ValueError(f"azimuth must lie in [-pi, pi), got {self.azimuth!r}")
        if not (0.0 <= self.elevation <= math.pi):
            raise ValueError(f"elevation must lie in [0, pi], got {self.elevation!r}")


def wrap_azimuth(value: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = math.remainder(float(value), TWO_PI)
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    if wrapped < -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass
class PathSet:
    """Ordered collection of propagation paths.

    The real parameter vector stacks (delay, azimuth, elevation, Re gain,
    Im gain) per path, in path order. That ordering is fixed package-wide
    (Fisher matrices, Jacobians and bounds all follow it).
    """

    paths: list

    PARAMS_PER_PATH = 5

    def __post_init__(self):
        self.paths = list(self.paths)
        if len(self.paths) < 1:
            raise ValueError("a PathSet needs at least one path")
        for p in self.paths:
            if not isinstance(p, PathParameters):
                raise ValueError("paths must be PathParameters instances")

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def azimuths(self) -> np.ndarray:
        return np.array([p.azimuth for p in self.paths], dtype=float)

    @property
    def elevations(self) -> np.ndarray:
        return np.array([p.elevation for p in self.paths], dtype=float)

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.gains) ** 2))

    def parameter_vector(self) -> np.ndarray:
        """Stack (delay, azimuth, elevation, Re gain, Im gain) per path."""
        out = np.empty(self.PARAMS_PER_PATH * len(self.paths))
        for i, p in enumerate(self.paths):
            out[5 * i : 5 * i + 5] = (p.delay, p.azimuth, p.elevation, p.gain.real, p.gain.imag)
        return out

    @classmethod
    def from_parameter_vector(cls, vector) -> "PathSet":
        vec = np.asarray(vector, dtype=float).ravel()
        if vec.size % cls.PARAMS_PER_PATH != 0 or vec.size == 0:
            raise ValueError("parameter vector length must be a positive multiple of 5")
        paths = []
        for i in range(vec.size // cls.PARAMS_PER_PATH):
            tau, az, el, re, im = vec[5 * i : 5 * i + 5]
            paths.append(PathParameters(complex(re, im), tau, az, el))
        return cls(paths)

    @classmethod
    def from_arrays(cls, gains, delays, azimuths, elevations) -> "PathSet":
        gains = np.asarray(gains, dtype=complex)
        delays = np.asarray(delays, dtype=float)
        azimuths = np.asarray(azimuths, dtype=float)
        elevations = np.asarray(elevations, dtype=float)
        if not gains.shape == delays.shape == azimuths.shape == elevations.shape:
            raise ValueError("path arrays must share one shape")
        return cls(
            [
                PathParameters(g, t, a, e)
                for g, t, a, e in zip(gains, delays, azimuths, elevations)
            ]
        )


@dataclass
class ArrayGeometry:
    """Antenna array: element positions (M, 3) in meters plus carrier.

    Positions must sum to the zero vector (the analytic orthogonality
    identities between the pattern and its angle derivatives rely on it) and
    be pairwise distinct. element_pattern selects the per-element response
    rule from ELEMENT_PATTERNS; only the phase-shift "isotropic" rule ships.
    """

    positions: np.ndarray
    carrier_frequency: float
    element_pattern: str = "isotropic"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.carrier_frequency = float(self.carrier_frequency)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (M, 3)")
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one element")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.carrier_frequency <= 0.0:
            raise ValueError("carrier frequency must be positive")
        scale = max(1.0, float(np.max(np.abs(self.positions), initial=0.0)))
        if np.linalg.norm(self.positions.sum(axis=0)) > 1e-9 * scale:
            raise ValueError("element positions must sum to the zero vector")
        m = self.positions.shape[0]
        if m > 1:
            diff = self.positions[:, None, :] - self.positions[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            dist[np.diag_indices(m)] = np.inf
            if np.min(dist) <= 0.0:
                raise ValueError("element positions must be pairwise distinct")
        if self.element_pattern not in ELEMENT_PATTERNS:
            raise ValueError(f"unknown element pattern {self.element_pattern!r}")

    @property
    def num_elements(self) -> int:
        return self.positions.shape[0]

    @property
    def wavelength(self) -> float:
        return C0 / self.carrier_frequency


def build_planar_array(rows: int, cols: int, spacing: float, carrier_frequency: float) -> ArrayGeometry:
    """Regular rows x cols grid in the x-z plane, centered on the origin.

    Columns advance along x (horizontal), rows along z (vertical); element
    m = row * cols + col. Centering is exact by construction.
    """
    rows = int(rows)
    cols = int(cols)
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    x = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    z = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    zz, xx = np.meshgrid(z, x, indexing="ij")
    positions = np.column_stack([xx.ravel(), np.zeros(rows * cols), zz.ravel()])
    return ArrayGeometry(positions, carrier_frequency)


# ---------------------------------------------------------------------------
# element response registry

# An entry maps (positions, azimuth[A], elevation[A], abs_frequency[K]) to the
# complex response (A, M, K); the gradient variant also returns the azimuth
# and elevation partials with the same shape. New patterns register here.


def _isotropic_response(positions, azimuth, elevation, abs_frequency):
    dots = direction_vector(azimuth, elevation) @ positions.T  # (A, M)
    phase = (-TWO_PI / C0) * dots[:, :, None] * np.asarray(abs_frequency)[None, None, :]
    return np.exp(1j * phase)


def _isotropic_response_with_gradients(positions, azimuth, elevation, abs_frequency):
    d_az, d_el = direction_gradients(azimuth, elevation)
    pattern = _isotropic_response(positions, azimuth, elevation, abs_frequency)
    scale = (-1j * TWO_PI / C0) * np.asarray(abs_frequency)[None, None, :]
    g_az = pattern * scale * (d_az @ positions.T)[:, :, None]
    g_el = pattern * scale * (d_el @ positions.T)[:, :, None]
    return pattern, g_az, g_el


ELEMENT_PATTERNS = {
    "isotropic": (_isotropic_response, _isotropic_response_with_gradients),
}


def _as_angle_freq_arrays(azimuth, elevation, frequency):
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    if az.shape != el.shape or az.ndim != 1:
        raise ValueError("azimuth and elevation must be scalars or matching 1-D arrays")
    freq = np.atleast_1d(np.asarray(frequency, dtype=float))
    return az, el, freq


def pattern_response(array: ArrayGeometry, azimuth, elevation, frequency) -> np.ndarray:
    """Element responses a_m at baseband frequency, shape (A, M, K).

    azimuth/elevation may be scalars or matching 1-D arrays (A,), frequency a
    scalar or 1-D array (K,). The absolute frequency fed to the element rule
    is carrier + baseband.
    """
    az, el, freq = _as_angle_freq_arrays(azimuth, elevation, frequency)
    eval_fn = ELEMENT_PATTERNS[array.element_pattern][0]
    return eval_fn(array.positions, az, el, array.carrier_frequency + freq)


def pattern_response_with_gradients(array: ArrayGeometry, azimuth, elevation, frequency):
    """Responses plus azimuth/elevation partials, each (A, M, K)."""
    az, el, freq = _as_angle_freq_arrays(azimuth, elevation, frequency)
    grad_fn = ELEMENT_PATTERNS[array.element_pattern][1]
    return grad_fn(array.positions, az, el, array.carrier_frequency + freq)


def steering_vector(array: ArrayGeometry, azimuth: float, elevation: float, frequency: float) -> np.ndarray:
    """Array response (M,) for one direction at one baseband frequency."""
    return pattern_response(array, azimuth, elevation, frequency)[0, :, 0]


def antenna_pattern(array: ArrayGeometry, element: int, azimuth: float, elevation: float, frequency: float) -> complex:
    """Single-element response a_m(az, el, f); |a_m| = 1 for the phase-shift rule."""
    m = int(element)
    if not 0 <= m < array.num_elements:
        raise ValueError(f"element index {m} out of range for M={array.num_elements}")
    return complex(pattern_response(array, azimuth, elevation, frequency)[0, m, 0])


def antenna_pattern_gradients(array: ArrayGeometry, element: int, azimuth: float, elevation: float, frequency: float):
    """(d a_m / d az, d a_m / d el) for a single element."""
    m = int(element)
    if not 0 <= m < array.num_elements:
        raise ValueError(f"element index {m} out of range for M={array.num_elements}")
    _, g_az, g_el = pattern_response_with_gradients(array, azimuth, elevation, frequency)
    return complex(g_az[0, m, 0]), complex(g_el[0, m, 0])


# ---------------------------------------------------------------------------
# pilot grid


@dataclass
class PilotGrid:
    """Training subcarriers: baseband frequencies, symbols and the band B.

    Frequencies must be strictly increasing and lie inside [-B/2, B/2].
    Zero symbols are representable (the LS estimator rejects them at use
    time, naming the offending subcarrier).
    """

    frequencies: np.ndarray
    symbols: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float).ravel()
        self.symbols = np.asarray(self.symbols, dtype=complex).ravel()
        self.bandwidth = float(self.bandwidth)
        if self.frequencies.size < 1:
            raise ValueError("need at least one pilot")
        if self.symbols.shape != self.frequencies.shape:
            raise ValueError("symbols and frequencies must have the same length")
        if not np.all(np.isfinite(self.frequencies)) or not np.all(np.isfinite(self.symbols)):
            raise ValueError("pilot grid entries must be finite")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if self.frequencies.size > 1 and not np.all(np.diff(self.frequencies) > 0):
            raise ValueError("pilot frequencies must be strictly increasing")
        half = self.bandwidth / 2.0
        tol = 1e-9 * self.bandwidth
        if self.frequencies[0] < -half - tol or self.frequencies[-1] > half + tol:
            raise ValueError("pilot frequencies must lie within [-B/2, B/2]")

    @property
    def num_pilots(self) -> int:
        return self.frequencies.size

    @property
    def total_energy(self) -> float:
        """E_T = sum_k |s_k|^2."""
        return float(np.sum(np.abs(self.symbols) ** 2))

    @property
    def pilot_energy(self) -> float:
        """Per-pilot energy E_s = E_T / K (meaningful for uniform-energy grids)."""
        return self.total_energy / self.num_pilots

    @property
    def mean_squared_bandwidth(self) -> float:
        """Energy-weighted second moment sum f_k^2 |s_k|^2 / sum |s_k|^2 [Hz^2]."""
        w = np.abs(self.symbols) ** 2
        return float(np.sum(self.frequencies**2 * w) / np.sum(w))

    @property
    def median_spacing(self) -> float:
        if self.num_pilots < 2:
            return self.bandwidth
        return float(np.median(np.diff(self.frequencies)))


def uniform_pilot_grid(
    bandwidth: float,
    max_delay: float,
    num_pilots: Optional[int] = None,
    energy: float = 1.0,
) -> PilotGrid:
    """Symmetric uniform-energy grid with spacing 1/max_delay.

    f_k = (k - (K-1)/2) / max_delay for k = 0..K-1. The default pilot count
    fills the band: K = B * max_delay + 1.
    """
    if bandwidth <= 0.0 or max_delay <= 0.0:
        raise ValueError("bandwidth and max_delay must be positive")
    if energy <= 0.0:
        raise ValueError("pilot energy must be positive")
    if num_pilots is None:
        num_pilots = int(round(bandwidth * max_delay)) + 1
    k = int(num_pilots)
    if k < 1:
        raise ValueError("need at least one pilot")
    if (k - 1) / max_delay > bandwidth * (1.0 + 1e-9):
        raise ValueError("pilot grid does not fit inside the band")
    freqs = (np.arange(k) - (k - 1) / 2.0) / max_delay
    symbols = np.full(k, math.sqrt(energy), dtype=complex)
    return PilotGrid(freqs, symbols, bandwidth)


# ---------------------------------------------------------------------------
# channel synthesis


@dataclass
class ChannelVector:
    """Channel h(f) across the array at one baseband frequency."""

    frequency: float
    values: np.ndarray

    def __post_init__(self):
        self.frequency = float(self.frequency)
        self.values = np.asarray(self.values, dtype=complex).ravel()
        if self.values.size < 1:
            raise ValueError("channel vector must have at least one entry")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("channel vector must be finite")


@dataclass
class ReceivedPilots:
    """Noisy pilot observations r_m(f_k), shape (M, K), plus the noise power."""

    samples: np.ndarray
    noise_variance: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        self.noise_variance = float(self.noise_variance)
        if self.samples.ndim != 2:
            raise ValueError("samples must have shape (M, K)")
        # zero variance is the noiseless diagnostic limit; negative is invalid
        if not self.noise_variance >= 0.0:
            raise ValueError("noise variance must be nonnegative")


def channel_matrix(paths: PathSet, array: ArrayGeometry, frequencies) -> np.ndarray:
    """h_m(f) for every frequency in one call, shape (M, K)."""
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    pattern = pattern_response(array, paths.azimuths, paths.elevations, freqs)  # (L, M, K)
    delay_phase = np.exp(-1j * TWO_PI * np.outer(paths.delays, freqs))  # (L, K)
    return np.einsum("l,lmk,lk->mk", paths.gains, pattern, delay_phase, optimize=True)


def channel_response(paths: PathSet, array: ArrayGeometry, frequency: float) -> ChannelVector:
    """Channel vector h(f) at one baseband frequency."""
    values = channel_matrix(paths, array, float(frequency))[:, 0]
    return ChannelVector(float(frequency), values)


def simulate_pilots(
    paths: PathSet,
    array: ArrayGeometry,
    pilots: PilotGrid,
    noise_variance: float,
    seed,
) -> ReceivedPilots:
    """Draw one noisy pilot observation r = h s + w.

    Noise is circular complex Gaussian, i.i.d. over antennas and subcarriers,
    with total variance noise_variance per sample. The draw is deterministic
    for a given seed; independent trials should pass seeds derived via
    derive_rng counters.
    """
    noise_variance = float(noise_variance)
    if noise_variance < 0.0:
        raise ValueError("noise variance must be nonnegative")
    h = channel_matrix(paths, array, pilots.frequencies)
    rng = derive_rng(seed)
    z = rng.standard_normal((2, array.num_elements, pilots.num_pilots))
    w = math.sqrt(noise_variance / 2.0) * (z[0] + 1j * z[1])
    return ReceivedPilots(h * pilots.symbols[None, :] + w, noise_variance)
