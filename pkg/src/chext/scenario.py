"""End-to-end experiment orchestration.

A scenario bundles a multipath draw, an antenna array, and a pilot grid. The
surrogate generator stands in for a full geometry-based channel toolbox: it
draws clustered delays (uniform cluster centers, 30 ns Gaussian intra-cluster
spread), an exponential power-delay profile with decay constant max_delay/3,
Laplacian angle spreads (5 deg azimuth around uniform centers, 3 deg
elevation around centers in [60, 120] deg), uniform gain phases, and
normalizes the total path power to one. The draw is deterministic given the
seed; cluster membership is exposed so the declared distributions can be
tested directly.

`run_sweep` evaluates estimators and bounds on a frequency grid: empirical
LS/high-resolution MSE over shared noise realizations, analytic LMMSE MSE,
the full and simplified estimation bounds, Monte-Carlo and approximate
beamforming efficiency, and the derived link metrics. Numeric failures
(for example an ill-conditioned information matrix) are recorded per row
instead of aborting the sweep. With drops > 1 the sweep additionally draws
independent scenarios and collects per-drop spectral-efficiency samples into
empirical CDF tables, one per frequency.

Random streams are derived from the master seed with fixed counters: path
draws use (seed, 10, drop), pilot noise uses (seed, 20, drop, trial). The
output is therefore a pure function of (config, frequencies, trials,
estimators, drops) regardless of execution schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .channel import (
    ArrayGeometry,
    ChannelVector,
    PathParameters,
    PathSet,
    PilotGrid,
    build_planar_array,
    channel_matrix,
    derive_rng,
    simulate_pilots,
    uniform_pilot_grid,
    wrap_azimuth,
)
from .crlb import (
    IllConditionedFisherError,
    fisher_matrix,
    jacobian,
    crlb_matrix,
    mean_squared_bandwidth,
    simplified_crlb,
)
from .downlink import (
    DownlinkConfig,
    beamforming_efficiency,
    downlink_snr,
    efficiency_approx,
    ser_mqam,
    spectral_efficiency,
)
from .lowres import (
    IllConditionedError,
    LmmseModel,
    lmmse_error_stats,
    lmmse_weights,
    ls_estimate,
)
from .sage import SageConfig, hr_extrapolate, sage_estimate

GENERATORS = ("clustered-surrogate", "explicit-paths")

# stream counters under the master seed
_PATHS_STREAM = 10
_NOISE_STREAM = 20

_CLUSTER_DELAY_SPREAD = 30e-9
_AZIMUTH_SPREAD = math.radians(5.0)
_ELEVATION_SPREAD = math.radians(3.0)
_ELEVATION_CENTER_RANGE = (math.radians(60.0), math.radians(120.0))
_PATHS_PER_CLUSTER = 4

ESTIMATOR_NAMES = ("ls", "lmmse", "sage")


class ConfigError(ValueError):
    """Invalid scenario or run configuration."""


@dataclass
class ScenarioConfig:
    """Scenario knobs; defaults match the reference evaluation setup.

    pilot_snr is E_s / sigma_w^2 in dB (per-pilot); math.inf selects the
    noise-free limit. num_pilots None picks bandwidth * max_delay + 1 pilots
    uniformly spaced at 1/max_delay. element_spacing None picks half a
    carrier wavelength. explicit_paths entries are mappings with keys
    delay, azimuth, elevation, gain ([re, im]) and are required exactly when
    generator is "explicit-paths".
    """

    num_paths: int = 10
    max_delay: float = 2.5e-6
    bandwidth: float = 20e6
    num_pilots: Optional[int] = None
    carrier: float = 3.5e9
    array_rows: int = 4
    array_cols: int = 4
    element_spacing: Optional[float] = None
    pilot_snr: float = 10.0
    seed: int = 0
    generator: str = "clustered-surrogate"
    explicit_paths: Optional[Sequence] = None

    def __post_init__(self):
        self.num_paths = int(self.num_paths)
        if self.num_paths < 1:
            raise ConfigError("num_paths must be at least 1")
        if not self.max_delay > 0.0:
            raise ConfigError("max_delay must be positive")
        if not self.bandwidth > 0.0:
            raise ConfigError("bandwidth must be positive")
        if self.num_pilots is not None and int(self.num_pilots) < 2:
            raise ConfigError("num_pilots must be at least 2 when given")
        if not self.carrier > 0.0:
            raise ConfigError("carrier must be positive")
        if int(self.array_rows) < 1 or int(self.array_cols) < 1:
            raise ConfigError("array_rows and array_cols must be at least 1")
        self.array_rows = int(self.array_rows)
        self.array_cols = int(self.array_cols)
        if self.element_spacing is not None and not self.element_spacing > 0.0:
            raise ConfigError("element_spacing must be positive when given")
        if math.isnan(self.pilot_snr):
            raise ConfigError("pilot_snr must be a number (dB) or inf")
        if self.generator not in GENERATORS:
            raise ConfigError(
                f"unknown generator {self.generator!r}; expected one of {GENERATORS}"
            )
        if self.generator == "explicit-paths" and not self.explicit_paths:
            raise ConfigError("explicit-paths generator requires explicit_paths")
        if self.generator == "clustered-surrogate" and self.explicit_paths:
            raise ConfigError("explicit_paths given but generator is clustered-surrogate")

    @property
    def noise_variance(self) -> float:
        if math.isinf(self.pilot_snr):
            return 0.0
        return 10.0 ** (-self.pilot_snr / 10.0)

    def build_array(self) -> ArrayGeometry:
        spacing = self.element_spacing
        if spacing is None:
            spacing = 0.5 * 299_792_458.0 / self.carrier
        return build_planar_array(
            self.array_rows, self.array_cols, spacing, self.carrier
        )

    def build_pilots(self) -> PilotGrid:
        return uniform_pilot_grid(self.bandwidth, self.max_delay, self.num_pilots)


@dataclass
class ClusterMetadata:
    """Cluster structure of one surrogate draw, for distribution checks."""

    delay_centers: np.ndarray
    azimuth_centers: np.ndarray
    elevation_centers: np.ndarray
    assignments: np.ndarray  # cluster index per path


def draw_clustered_paths(config: ScenarioConfig, rng) -> Tuple[PathSet, ClusterMetadata]:
    """One clustered surrogate draw from an explicit random generator."""
    rng = derive_rng(rng)
    num_paths = config.num_paths
    num_clusters = math.ceil(num_paths / _PATHS_PER_CLUSTER)

    delay_centers = rng.uniform(0.0, config.max_delay, num_clusters)
    azimuth_centers = rng.uniform(-math.pi, math.pi, num_clusters)
    elevation_centers = rng.uniform(*_ELEVATION_CENTER_RANGE, num_clusters)
    assignments = np.arange(num_paths) % num_clusters

    delays = np.clip(
        delay_centers[assignments] + rng.normal(0.0, _CLUSTER_DELAY_SPREAD, num_paths),
        0.0,
        config.max_delay,
    )
    # Laplace scale = std / sqrt(2)
    azimuths = azimuth_centers[assignments] + rng.laplace(
        0.0, _AZIMUTH_SPREAD / math.sqrt(2.0), num_paths
    )
    azimuths = np.array([wrap_azimuth(a) for a in azimuths])
    elevations = np.clip(
        elevation_centers[assignments]
        + rng.laplace(0.0, _ELEVATION_SPREAD / math.sqrt(2.0), num_paths),
        0.0,
        math.pi,
    )

    powers = np.exp(-delays / (config.max_delay / 3.0))
    powers = powers / powers.sum()
    phases = rng.uniform(0.0, 2.0 * math.pi, num_paths)
    gains = np.sqrt(powers) * np.exp(1j * phases)

    paths = PathSet.from_arrays(gains, delays, azimuths, elevations)
    meta = ClusterMetadata(delay_centers, azimuth_centers, elevation_centers, assignments)
    return paths, meta


def _explicit_path_set(config: ScenarioConfig) -> PathSet:
    entries = config.explicit_paths
    if isinstance(entries, PathSet):
        return entries
    paths = []
    for index, entry in enumerate(entries):
        if isinstance(entry, PathParameters):
            paths.append(entry)
            continue
        try:
            spec = dict(entry)
            gain = spec.pop("gain")
            if isinstance(gain, (list, tuple)):
                gain = complex(float(gain[0]), float(gain[1]))
            else:
                gain = complex(gain)
            path = PathParameters(
                gain=gain,
                delay=float(spec.pop("delay")),
                azimuth=float(spec.pop("azimuth")),
                elevation=float(spec.pop("elevation")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"explicit path {index} is malformed: {exc}") from exc
        if spec:
            raise ConfigError(
                f"explicit path {index} has unknown keys {sorted(spec)}"
            )
        paths.append(path)
    return PathSet(paths)


def _scenario_paths(config: ScenarioConfig, drop: int) -> PathSet:
    if config.generator == "explicit-paths":
        return _explicit_path_set(config)
    rng = derive_rng(config.seed, _PATHS_STREAM, drop)
    paths, _ = draw_clustered_paths(config, rng)
    return paths


def generate_scenario(config: ScenarioConfig) -> Tuple[PathSet, ArrayGeometry, PilotGrid]:
    """Materialize (paths, array, pilots) for the first drop of a config."""
    return _scenario_paths(config, 0), config.build_array(), config.build_pilots()


# ---------------------------------------------------------------------------
# sweep results


@dataclass
class SweepRow:
    """Metrics at one frequency; None marks a field that was not computed."""

    frequency: float
    mse_ls: Optional[float] = None
    mse_lmmse: Optional[float] = None
    mse_sage: Optional[float] = None
    crlb_mean: Optional[float] = None
    crlb_simplified: Optional[float] = None
    eta_mc: Optional[float] = None
    eta_approx: Optional[float] = None
    se_bits: Optional[float] = None
    ser: Optional[float] = None
    error: Optional[str] = None

    def __post_init__(self):
        for name in ("mse_ls", "mse_lmmse", "mse_sage", "crlb_mean", "crlb_simplified"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ValueError(f"{name} cannot be negative, got {value}")


@dataclass
class CdfTable:
    """Empirical CDF sampled on an even value grid; exact at() evaluator."""

    values: np.ndarray
    cdf: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.cdf = np.asarray(self.cdf, dtype=float)
        self.samples = np.sort(np.asarray(self.samples, dtype=float))
        if self.values.shape != self.cdf.shape or self.values.ndim != 1:
            raise ValueError("values and cdf must be matching 1-D arrays")
        if np.any(np.diff(self.cdf) < 0.0) or np.any((self.cdf < 0.0) | (self.cdf > 1.0)):
            raise ValueError("cdf must be non-decreasing within [0, 1]")

    def at(self, query: float) -> float:
        """Exact right-continuous empirical CDF at one query point."""
        count = int(np.searchsorted(self.samples, query, side="right"))
        return count / self.samples.size


def compute_cdf(per_drop_values: Sequence[float], grid_points: int) -> CdfTable:
    """Empirical CDF of the samples on an evenly spaced value grid."""
    samples = np.asarray(list(per_drop_values), dtype=float)
    if samples.size == 0:
        raise ValueError("cannot build a CDF from an empty sample list")
    grid_points = int(grid_points)
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    ordered = np.sort(samples)
    grid = np.linspace(ordered[0], ordered[-1], grid_points)
    levels = np.searchsorted(ordered, grid, side="right") / ordered.size
    return CdfTable(values=grid, cdf=levels, samples=ordered)


@dataclass
class SweepResult:
    rows: List[SweepRow]
    cdf_tables: Dict[str, CdfTable] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([row.frequency for row in self.rows])

    @property
    def all_failed(self) -> bool:
        return all(row.error is not None for row in self.rows)


def _normalize_estimators(estimators) -> Tuple[str, ...]:
    if estimators is None:
        return ()
    if isinstance(estimators, str):
        estimators = [token for token in estimators.split(",") if token]
    names = tuple(dict.fromkeys(str(e).strip().lower() for e in estimators))
    for name in names:
        if name not in ESTIMATOR_NAMES:
            raise ConfigError(
                f"unknown estimator {name!r}; expected a subset of {ESTIMATOR_NAMES}"
            )
    return names


def _append_error(errors: List[str], message: str):
    if message not in errors:
        errors.append(message)


def _crlb_fields(paths, array, pilots, noise_variance, freqs, sigma_f, total_energy):
    """Per-frequency bound matrix / mean / simplified, with recorded errors."""
    num = len(freqs)
    matrices: List[Optional[np.ndarray]] = [None] * num
    means: List[Optional[float]] = [None] * num
    simplified: List[Optional[float]] = [None] * num
    errors: List[Optional[str]] = [None] * num
    num_elements = array.num_elements

    if noise_variance == 0.0:
        # noise-free limit: the bound collapses to zero
        for i in range(num):
            matrices[i] = np.zeros((num_elements, num_elements))
            means[i] = 0.0
            simplified[i] = 0.0
        return matrices, means, simplified, errors

    try:
        fisher = fisher_matrix(paths, array, pilots, noise_variance)
    except IllConditionedFisherError as exc:
        for i in range(num):
            errors[i] = f"fisher: {exc}"
        return matrices, means, simplified, errors

    for i, frequency in enumerate(freqs):
        simplified[i] = simplified_crlb(
            paths.num_paths, num_elements, total_energy, sigma_f,
            noise_variance, frequency,
        )
        try:
            result = crlb_matrix(fisher, jacobian(paths, array, frequency), frequency)
        except IllConditionedFisherError as exc:
            errors[i] = f"crlb: {exc}"
            continue
        matrices[i] = result.bound_matrix
        means[i] = result.mean_bound
    return matrices, means, simplified, errors


def _sweep_drop_rows(config: ScenarioConfig, paths: PathSet, array: ArrayGeometry,
                     pilots: PilotGrid, freqs: np.ndarray, trials: int,
                     estimators: Tuple[str, ...], downlink: DownlinkConfig,
                     drop: int) -> List[SweepRow]:
    noise_variance = config.noise_variance
    num_elements = array.num_elements
    num_freqs = freqs.size
    truth_at = channel_matrix(paths, array, freqs)  # (M, F)
    row_errors: List[List[str]] = [[] for _ in range(num_freqs)]

    # LS exists only where the query frequency coincides with a pilot
    pilot_tolerance = 1e-6 * pilots.median_spacing
    pilot_index: List[Optional[int]] = []
    for frequency in freqs:
        offsets = np.abs(pilots.frequencies - frequency)
        k = int(np.argmin(offsets))
        pilot_index.append(k if offsets[k] <= pilot_tolerance else None)

    sigma_f = math.sqrt(mean_squared_bandwidth(pilots))
    matrices, crlb_means, crlb_simpl, crlb_errors = _crlb_fields(
        paths, array, pilots, noise_variance, freqs, sigma_f, pilots.total_energy
    )
    for i, message in enumerate(crlb_errors):
        if message is not None:
            _append_error(row_errors[i], message)

    lmmse_model = None
    lmmse_weight_at: List[Optional[np.ndarray]] = [None] * num_freqs
    analytic_lmmse: List[Optional[float]] = [None] * num_freqs
    if "lmmse" in estimators:
        lmmse_model = LmmseModel(
            max_delay=config.max_delay,
            channel_power=paths.total_power,
            noise_variance=noise_variance,
            pilot_energy=pilots.pilot_energy,
        )
        truth_at_pilots = channel_matrix(paths, array, pilots.frequencies)
        for i, frequency in enumerate(freqs):
            try:
                lmmse_weight_at[i] = lmmse_weights(lmmse_model, pilots, frequency)
                stats = lmmse_error_stats(
                    lmmse_model, pilots, truth_at_pilots,
                    ChannelVector(float(frequency), truth_at[:, i]), frequency,
                )
                analytic_lmmse[i] = stats.mean_mse
            except IllConditionedError as exc:
                _append_error(row_errors[i], f"lmmse: {exc}")

    eta_source = "sage" if "sage" in estimators else (
        "lmmse" if "lmmse" in estimators else None
    )

    sums_ls = np.zeros(num_freqs)
    sums_sage = np.zeros(num_freqs)
    sums_eta = np.zeros(num_freqs)
    eta_counts = np.zeros(num_freqs, dtype=int)  # zero-estimate trials drop out
    sage_config = SageConfig(num_paths=paths.num_paths, max_delay=config.max_delay)

    if estimators and trials > 0:
        for trial in range(trials):
            received = simulate_pilots(
                paths, array, pilots, noise_variance,
                seed=(config.seed, _NOISE_STREAM, drop, trial),
            )
            ls = None
            if "ls" in estimators or "lmmse" in estimators:
                ls = ls_estimate(received, pilots)
            if "ls" in estimators:
                for i, k in enumerate(pilot_index):
                    if k is None:
                        continue
                    error = ls.values[:, k] - truth_at[:, i]
                    sums_ls[i] += float(np.mean(np.abs(error) ** 2))
            if "lmmse" in estimators and eta_source == "lmmse":
                for i in range(num_freqs):
                    weights = lmmse_weight_at[i]
                    if weights is None:
                        continue
                    estimate = ls.values @ weights.conj()
                    if np.linalg.norm(estimate) > 0.0:
                        sums_eta[i] += beamforming_efficiency(estimate, truth_at[:, i])
                        eta_counts[i] += 1
            if "sage" in estimators:
                result = sage_estimate(received, pilots, array, sage_config)
                for i, frequency in enumerate(freqs):
                    estimate = hr_extrapolate(result, array, frequency).values
                    sums_sage[i] += float(
                        np.mean(np.abs(estimate - truth_at[:, i]) ** 2)
                    )
                    if eta_source == "sage" and np.linalg.norm(estimate) > 0.0:
                        sums_eta[i] += beamforming_efficiency(estimate, truth_at[:, i])
                        eta_counts[i] += 1

    rows = []
    for i, frequency in enumerate(freqs):
        truth = ChannelVector(float(frequency), truth_at[:, i])
        eta_approx_value = None
        se_value = None
        ser_value = None
        if matrices[i] is not None:
            try:
                eta_approx_value = efficiency_approx(truth, matrices[i])
                snr = downlink_snr(truth, eta_approx_value, downlink)
                se_value = spectral_efficiency(snr)
                ser_value = ser_mqam(snr, downlink.constellation_order)
            except ValueError as exc:
                _append_error(row_errors[i], f"downlink: {exc}")

        mc_denominator = trials if trials > 0 else 1
        rows.append(SweepRow(
            frequency=float(frequency),
            mse_ls=(
                sums_ls[i] / mc_denominator
                if "ls" in estimators and pilot_index[i] is not None and trials > 0
                else None
            ),
            mse_lmmse=analytic_lmmse[i] if "lmmse" in estimators else None,
            mse_sage=sums_sage[i] / mc_denominator if "sage" in estimators and trials > 0 else None,
            crlb_mean=crlb_means[i],
            crlb_simplified=crlb_simpl[i],
            eta_mc=(
                sums_eta[i] / eta_counts[i]
                if eta_source is not None and eta_counts[i] > 0
                else None
            ),
            eta_approx=eta_approx_value,
            se_bits=se_value,
            ser=ser_value,
            error="; ".join(row_errors[i]) if row_errors[i] else None,
        ))
    return rows


def _drop_se_samples(config: ScenarioConfig, array: ArrayGeometry, pilots: PilotGrid,
                     freqs: np.ndarray, downlink: DownlinkConfig, drop: int,
                     sigma_f: float):
    """Bound-based spectral efficiency per frequency for one scenario drop."""
    paths = _scenario_paths(config, drop)
    truth_at = channel_matrix(paths, array, freqs)
    matrices, _, _, errors = _crlb_fields(
        paths, array, pilots, config.noise_variance, freqs, sigma_f,
        pilots.total_energy,
    )
    samples: List[Optional[float]] = [None] * freqs.size
    for i, frequency in enumerate(freqs):
        if matrices[i] is None:
            continue
        truth = ChannelVector(float(frequency), truth_at[:, i])
        try:
            eta = efficiency_approx(truth, matrices[i])
            samples[i] = spectral_efficiency(downlink_snr(truth, eta, downlink))
        except ValueError as exc:
            errors[i] = f"downlink: {exc}"
    return samples, [e for e in errors if e is not None]


def run_sweep(
    config: ScenarioConfig,
    frequencies,
    trials: int,
    estimators,
    downlink: Optional[DownlinkConfig] = None,
    drops: int = 1,
    cdf_grid_points: int = 101,
) -> SweepResult:
    """Evaluate estimators and bounds across a frequency grid.

    estimators is any subset of {"ls", "lmmse", "sage"} (list or
    comma-separated string); an empty set computes bounds and derived link
    metrics only. mse_ls appears only at frequencies that coincide with a
    pilot; mse_lmmse is the analytic error for the current draw; mse_sage is
    a Monte-Carlo average over `trials` shared noise realizations. eta_mc
    averages the realized beamforming efficiency of the best enabled
    estimator (sage if present, else lmmse). With drops > 1, per-drop
    bound-based spectral efficiency samples are aggregated into one CDF table
    per frequency, keyed "se_f{index}".
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if freqs.size == 0:
        raise ConfigError("frequency grid is empty")
    trials = int(trials)
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    drops = int(drops)
    if drops < 1:
        raise ConfigError("drops must be at least 1")
    estimators = _normalize_estimators(estimators)
    if downlink is None:
        downlink = DownlinkConfig()

    array = config.build_array()
    pilots = config.build_pilots()
    paths = _scenario_paths(config, 0)

    rows = _sweep_drop_rows(
        config, paths, array, pilots, freqs, trials, estimators, downlink, drop=0
    )

    cdf_tables: Dict[str, CdfTable] = {}
    cdf_errors: List[str] = []
    if drops > 1:
        sigma_f = math.sqrt(mean_squared_bandwidth(pilots))
        collected: List[List[float]] = [[] for _ in range(freqs.size)]
        for drop in range(drops):
            samples, errors = _drop_se_samples(
                config, array, pilots, freqs, downlink, drop, sigma_f
            )
            cdf_errors.extend(f"drop {drop}: {e}" for e in errors)
            for i, value in enumerate(samples):
                if value is not None:
                    collected[i].append(value)
        for i in range(freqs.size):
            if collected[i]:
                cdf_tables[f"se_f{i}"] = compute_cdf(collected[i], cdf_grid_points)

    metadata = {
        "seed": config.seed,
        "trials": trials,
        "drops": drops,
        "estimators": list(estimators),
        "frequencies": [float(f) for f in freqs],
        "num_paths": config.num_paths,
        "array_rows": config.array_rows,
        "array_cols": config.array_cols,
        "bandwidth": config.bandwidth,
        "max_delay": config.max_delay,
        "carrier": config.carrier,
        "pilot_snr": config.pilot_snr,
        "generator": config.generator,
        "downlink": {
            "symbol_energy": downlink.symbol_energy,
            "noise_variance": downlink.noise_variance,
            "constellation_order": downlink.constellation_order,
        },
        "cdf_frequencies": {f"se_f{i}": float(freqs[i]) for i in range(freqs.size)
                            if f"se_f{i}" in cdf_tables},
        "cdf_errors": cdf_errors,
    }
    return SweepResult(rows=rows, cdf_tables=cdf_tables, metadata=metadata)
