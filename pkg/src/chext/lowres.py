"""Per-antenna LS estimation and LMMSE frequency interpolation/extrapolation.

The LMMSE smoother uses only long-term statistics: delays i.i.d. uniform on
[0, max_delay] give the closed-form frequency autocorrelation

    C_h(df) = channel_power * exp(-j pi df max_delay) * sinc(pi df max_delay),

with sinc(x) = sin(x)/x. channel_power is the total average power P_h
(the sum over paths of E[|gain|^2]); it defaults to 1 in the scenario
harness. The same weights apply to every antenna; there is no cross-antenna
combining. Error statistics are noise-only expectations with the channel
held deterministic, so the LMMSE estimator is biased and the bias is
reported alongside the MSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelVector, PilotGrid, ReceivedPilots

CONDITION_LIMIT = 1e12


class IllConditionedError(RuntimeError):
    """A linear system's condition number exceeded the 1e12 gate."""

    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = float(condition_number)


@dataclass
class LsEstimates:
    """Per-pilot LS estimates, shape (M, K), with their pilot grid."""

    values: np.ndarray
    pilots: PilotGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 2:
            raise ValueError("LS estimates must have shape (M, K)")
        if self.values.shape[1] != self.pilots.num_pilots:
            raise ValueError("LS estimates do not match the pilot grid length")

    @property
    def num_elements(self) -> int:
        return self.values.shape[0]


@dataclass
class LmmseModel:
    """Long-term statistics driving the LMMSE weights."""

    max_delay: float
    channel_power: float = 1.0
    noise_variance: float = 0.0
    pilot_energy: float = 1.0

    def __post_init__(self):
        self.max_delay = float(self.max_delay)
        self.channel_power = float(self.channel_power)
        self.noise_variance = float(self.noise_variance)
        self.pilot_energy = float(self.pilot_energy)
        if self.max_delay <= 0.0:
            raise ValueError("max_delay must be positive")
        if self.channel_power <= 0.0:
            raise ValueError("channel_power must be positive")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be nonnegative")
        if self.pilot_energy <= 0.0:
            raise ValueError("pilot_energy must be positive")


@dataclass
class ErrorStats:
    """Noise-only error statistics of an estimator at one frequency.

    error_correlation is the M x M matrix E[(h_hat - h)(h_hat - h)^H];
    mse_per_antenna is its (real) diagonal and bias the deterministic offset
    E[h_hat] - h (zero for LS, generally nonzero for LMMSE).
    """

    frequency: float
    mse_per_antenna: np.ndarray
    error_correlation: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.frequency = float(self.frequency)
        self.mse_per_antenna = np.asarray(self.mse_per_antenna, dtype=float).ravel()
        self.error_correlation = np.asarray(self.error_correlation, dtype=complex)
        self.bias = np.asarray(self.bias, dtype=complex).ravel()
        m = self.mse_per_antenna.size
        if self.error_correlation.shape != (m, m) or self.bias.size != m:
            raise ValueError("error statistics dimensions disagree")

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse_per_antenna))


def ls_estimate(received: ReceivedPilots, pilots: PilotGrid) -> LsEstimates:
    """Divide out the pilot symbols: h_hat_m(f_k) = r_m(f_k) / s(f_k)."""
    if received.samples.shape[1] != pilots.num_pilots:
        raise ValueError("received samples do not match the pilot grid length")
    mags = np.abs(pilots.symbols)
    if np.any(mags == 0.0):
        k = int(np.argmin(mags))
        raise ZeroDivisionError(
            f"pilot symbol is zero at subcarrier {k} (f = {pilots.frequencies[k]:g} Hz)"
        )
    return LsEstimates(received.samples / pilots.symbols[None, :], pilots)


def analytic_ls_mse(noise_variance: float, pilot_energy: float) -> float:
    """Per-pilot LS MSE, noise variance over pilot energy."""
    if pilot_energy <= 0.0:
        raise ValueError("pilot energy must be positive")
    return float(noise_variance) / float(pilot_energy)


def channel_autocorrelation(model: LmmseModel, delta_f: float) -> complex:
    """C_h(df) for the uniform-delay prior; conjugate-symmetric in df."""
    x = math.pi * float(delta_f) * model.max_delay
    sinc = math.sin(x) / x if x != 0.0 else 1.0
    return model.channel_power * np.exp(-1j * x) * sinc


def _ls_sample_covariance(model: LmmseModel, pilots: PilotGrid) -> np.ndarray:
    freqs = pilots.frequencies
    diff = freqs[:, None] - freqs[None, :]
    x = math.pi * diff * model.max_delay
    sinc = np.ones_like(x)
    nz = x != 0.0
    sinc[nz] = np.sin(x[nz]) / x[nz]
    cov = model.channel_power * np.exp(-1j * x) * sinc
    cov[np.diag_indices(pilots.num_pilots)] += model.noise_variance / model.pilot_energy
    return cov


def lmmse_weights(model: LmmseModel, pilots: PilotGrid, frequency: float) -> np.ndarray:
    """Weight vector p with h_hat_m(f) = p^H h_hat_LS,m.

    Solves C_LS p = c via a Hermitian positive-definite factorization after a
    condition-number gate at 1e12.
    """
    cov = _ls_sample_covariance(model, pilots)
    cond = np.linalg.cond(cov)
    if not cond < CONDITION_LIMIT:
        raise IllConditionedError(
            f"LS sample covariance condition number {cond:.3e} exceeds 1e12", cond
        )
    cross = np.array(
        [channel_autocorrelation(model, frequency - fk) for fk in pilots.frequencies]
    )
    # row vector c^H has entries C_h(f - f_k); p solves C_LS p = conj(row)
    factor = scipy.linalg.cho_factor(cov, lower=True)
    return scipy.linalg.cho_solve(factor, np.conj(cross))


def lmmse_estimate(ls: LsEstimates, model: LmmseModel, frequency: float) -> ChannelVector:
    """LMMSE estimate at any baseband frequency, in or out of band."""
    p = lmmse_weights(model, ls.pilots, frequency)
    values = ls.values @ np.conj(p)
    return ChannelVector(frequency, values)


def lmmse_error_stats(
    model: LmmseModel,
    pilots: PilotGrid,
    true_channel_per_pilot: np.ndarray,
    true_channel_at_f: ChannelVector,
    frequency: float,
) -> ErrorStats:
    """Analytic noise-only MSE, error correlation and bias of the LMMSE estimate.

    true_channel_per_pilot holds h_m(f_k) with shape (M, K);
    true_channel_at_f holds h_m(f) at the target frequency.
    """
    h_pilot = np.asarray(true_channel_per_pilot, dtype=complex)
    h_f = true_channel_at_f.values
    if h_pilot.ndim != 2 or h_pilot.shape[1] != pilots.num_pilots:
        raise ValueError("true_channel_per_pilot must have shape (M, K)")
    if h_pilot.shape[0] != h_f.size:
        raise ValueError("antenna counts disagree between pilot and target channels")
    p = lmmse_weights(model, pilots, frequency)
    noise_scale = model.noise_variance / model.pilot_energy
    # q_m = p^H h_m over the pilot grid
    q = h_pilot @ np.conj(p)
    pp = float(np.real(np.vdot(p, p)))
    outer_qq = np.outer(q, np.conj(q))
    outer_hq = np.outer(h_f, np.conj(q))
    corr = (
        np.outer(h_f, np.conj(h_f))
        + outer_qq
        + noise_scale * pp * np.eye(h_f.size)
        - outer_hq
        - outer_hq.conj().T
    )
    mse = np.real(np.diag(corr)).copy()
    bias = q - h_f
    return ErrorStats(frequency, mse, corr, bias)
