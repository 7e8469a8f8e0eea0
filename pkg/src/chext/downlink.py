"""User-side link metrics for a beamformed narrowband downlink.

The transmitter applies maximum-ratio transmission with the conjugate of a
channel estimate, g = conj(h_hat)/||h_hat||. With the true channel held
fixed (deterministic-channel convention) the received SNR factorizes into
the perfect-CSI SNR times a beamforming efficiency

    eta = |h_hat^H h|^2 / (||h_hat||^2 ||h||^2),   0 <= eta <= 1,

estimated here either by Monte Carlo over fresh pilot-noise draws or by the
second-order approximation

    eta_hat = (||h||^2 + h^H E h / ||h||^2) / (||h||^2 + tr E)

valid for an unbiased estimator with error correlation E; the data-dependent
term is a Rayleigh quotient, so it is bracketed by the extreme eigenvalues
of E and eta_hat never exceeds 1. Spectral efficiency is the Shannon rate
log2(1 + SNR); the uncoded square M-QAM symbol error rate uses the standard
erfc bound, clipped to [0, 1] because the closed form exceeds 1 at very low
SNR. Downlink pilot overhead is ignored throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import erfc

from .channel import ChannelVector, derive_rng

SKIP_WARN_FRACTION = 0.01
PSD_TOLERANCE = 1e-9


@dataclass
class DownlinkConfig:
    """Downlink symbol energy, receiver noise power, and QAM order."""

    symbol_energy: float = 10.0
    noise_variance: float = 1.0
    constellation_order: int = 256

    def __post_init__(self):
        self.symbol_energy = float(self.symbol_energy)
        self.noise_variance = float(self.noise_variance)
        self.constellation_order = int(self.constellation_order)
        if not self.symbol_energy > 0.0:
            raise ValueError("symbol_energy must be positive")
        if not self.noise_variance > 0.0:
            raise ValueError("noise_variance must be positive")
        _check_constellation(self.constellation_order)

    @property
    def snr_budget(self) -> float:
        """E_d / sigma_w^2, the perfect-CSI SNR per unit channel gain."""
        return self.symbol_energy / self.noise_variance


@dataclass
class EfficiencyReport:
    """Link metrics at one frequency.

    eta_monte_carlo is None when no Monte-Carlo run was attached; all other
    fields are always populated (snr/se/ser derive from eta_approx).
    """

    frequency: float
    eta_monte_carlo: Optional[float]
    eta_approx: float
    snr_downlink: float
    spectral_efficiency: float
    ser: float

    def __post_init__(self):
        if self.eta_monte_carlo is not None and not 0.0 <= self.eta_monte_carlo <= 1.0:
            raise ValueError("eta_monte_carlo must lie in [0, 1]")
        if not 0.0 < self.eta_approx <= 1.0:
            raise ValueError("eta_approx must lie in (0, 1]")
        if self.snr_downlink < 0.0:
            raise ValueError("snr_downlink cannot be negative")
        if self.spectral_efficiency < 0.0:
            raise ValueError("spectral_efficiency cannot be negative")
        if not 0.0 <= self.ser <= 1.0:
            raise ValueError("ser must lie in [0, 1]")


def _check_constellation(order: int):
    if order < 4 or math.isqrt(order) ** 2 != order:
        raise ValueError(f"constellation order must be a perfect square >= 4, got {order}")


def _as_values(channel: Union[ChannelVector, np.ndarray]) -> np.ndarray:
    if isinstance(channel, ChannelVector):
        return channel.values
    return np.asarray(channel, dtype=complex)


def mrt_beamformer(estimate: Union[ChannelVector, np.ndarray]) -> np.ndarray:
    """Unit-norm maximum-ratio beamformer g = conj(h_hat) / ||h_hat||."""
    values = _as_values(estimate)
    norm = float(np.linalg.norm(values))
    if norm <= 0.0:
        raise ValueError("cannot form a beamformer from an all-zero estimate")
    return values.conj() / norm


def _correlation_ratio(estimate: np.ndarray, truth: np.ndarray) -> float:
    # both vdot(x, x) terms are exactly real, so perfect estimates give 1.0
    numerator = abs(np.vdot(estimate, truth)) ** 2
    denominator = np.vdot(estimate, estimate).real * np.vdot(truth, truth).real
    return min(numerator / denominator, 1.0)


def beamforming_efficiency(
    estimate: Union[ChannelVector, np.ndarray],
    true_channel: Union[ChannelVector, np.ndarray],
) -> float:
    """Single-realization efficiency |h_hat^H h|^2 / (||h_hat||^2 ||h||^2)."""
    est = _as_values(estimate)
    truth = _as_values(true_channel)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    if not np.linalg.norm(truth) > 0.0:
        raise ValueError("true channel is all zero")
    if not np.linalg.norm(est) > 0.0:
        raise ValueError("cannot score an all-zero estimate")
    return _correlation_ratio(est, truth)


def efficiency_monte_carlo(
    true_channel: ChannelVector,
    estimator: Callable[[np.random.Generator], Union[ChannelVector, np.ndarray]],
    trials: int,
    seed,
) -> float:
    """Sample-mean beamforming efficiency over fresh noise realizations.

    `estimator` is called once per trial with a per-trial random generator
    derived from `seed` and must return the channel estimate used to beamform
    (scale does not matter). All-zero estimates cannot be normalized; such
    trials are skipped and counted, with a warning when more than 1% skip.
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    truth = true_channel.values
    if not np.linalg.norm(truth) > 0.0:
        raise ValueError("true channel is all zero")
    total = 0.0
    skipped = 0
    for trial in range(trials):
        estimate = _as_values(estimator(derive_rng(seed, trial)))
        if estimate.shape != truth.shape:
            raise ValueError(
                f"estimator returned shape {estimate.shape}, expected {truth.shape}"
            )
        if not np.linalg.norm(estimate) > 0.0:
            skipped += 1
            continue
        total += _correlation_ratio(estimate, truth)
    used = trials - skipped
    if used == 0:
        raise ValueError("every trial returned an all-zero estimate")
    if skipped > SKIP_WARN_FRACTION * trials:
        warnings.warn(
            f"{skipped} of {trials} trials returned all-zero estimates and were skipped",
            RuntimeWarning,
            stacklevel=2,
        )
    return total / used


def efficiency_approx(true_channel: ChannelVector, error_correlation: np.ndarray) -> float:
    """Second-order efficiency approximation from the error correlation matrix.

    Exact inputs: the true channel h and the Hermitian PSD correlation E of
    the (unbiased) estimation error. Returns
    (||h||^2 + h^H E h / ||h||^2) / (||h||^2 + tr E), which lies in (0, 1].
    """
    h = true_channel.values
    power = np.vdot(h, h).real
    if not power > 0.0:
        raise ValueError("true channel is all zero")
    correlation = np.asarray(error_correlation, dtype=complex)
    if correlation.shape != (h.size, h.size):
        raise ValueError(
            f"error correlation must be ({h.size}, {h.size}), got {correlation.shape}"
        )
    if not np.allclose(correlation, correlation.conj().T, rtol=1e-8, atol=1e-12):
        raise ValueError("error correlation must be Hermitian")
    eigenvalues = np.linalg.eigvalsh(correlation)
    largest = max(float(eigenvalues[-1]), 0.0)
    if eigenvalues[0] < -PSD_TOLERANCE * max(largest, 1e-300):
        raise ValueError(
            f"error correlation is not positive semidefinite "
            f"(min eigenvalue {eigenvalues[0]:.3e})"
        )
    quotient = np.vdot(h, correlation @ h).real / power
    trace = np.trace(correlation).real
    return min((power + quotient) / (power + trace), 1.0)


def downlink_snr(true_channel: ChannelVector, eta: float, config: DownlinkConfig) -> float:
    """Received SNR = (E_d ||h||^2 / sigma_w^2) * eta."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    power = np.vdot(true_channel.values, true_channel.values).real
    return config.snr_budget * power * eta


def spectral_efficiency(snr: float) -> float:
    """Shannon spectral efficiency log2(1 + SNR), bits per symbol."""
    if snr < 0.0:
        raise ValueError("snr must be nonnegative")
    return float(np.log2(1.0 + snr))


def ser_mqam(snr: float, constellation_order: int) -> float:
    """Uncoded square M-QAM symbol error rate bound, clipped to [0, 1].

    2 (sqrt(Q) - 1)/sqrt(Q) erfc(sqrt(3 snr / (2 (Q - 1)))). The closed form
    is a union bound and exceeds 1 below roughly 0 dB for large Q; clipping
    keeps the probability interpretation.
    """
    _check_constellation(int(constellation_order))
    if snr < 0.0:
        raise ValueError("snr must be nonnegative")
    order = int(constellation_order)
    side = math.isqrt(order)
    prefactor = 2.0 * (side - 1) / side
    value = prefactor * float(erfc(math.sqrt(3.0 * snr / (2.0 * (order - 1)))))
    return float(np.clip(value, 0.0, 1.0))


def link_report(
    true_channel: ChannelVector,
    error_correlation: np.ndarray,
    config: DownlinkConfig,
    eta_monte_carlo: Optional[float] = None,
) -> EfficiencyReport:
    """Bundle the full metric chain for one frequency.

    snr/se/ser always derive from eta_approx so that analytic error models
    (for example estimation bounds) translate directly into link predictions;
    an independently measured Monte-Carlo efficiency can ride along.
    """
    eta_hat = efficiency_approx(true_channel, error_correlation)
    snr = downlink_snr(true_channel, eta_hat, config)
    return EfficiencyReport(
        frequency=true_channel.frequency,
        eta_monte_carlo=eta_monte_carlo,
        eta_approx=eta_hat,
        snr_downlink=snr,
        spectral_efficiency=spectral_efficiency(snr),
        ser=ser_mqam(snr, config.constellation_order),
    )
