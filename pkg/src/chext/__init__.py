"""Uplink-to-downlink channel extrapolation toolkit.

Simulates pilot-based uplink channel estimation on a planar antenna array,
extrapolates the channel to out-of-band frequencies with low-resolution
(LS/LMMSE) and high-resolution (per-path coordinate-descent ML) estimators,
computes estimation-theoretic lower bounds on the extrapolated channel error,
and maps estimate quality to downlink beamforming and link metrics.
"""

from .channel import (
    ArrayGeometry,
    ChannelVector,
    ELEMENT_PATTERNS,
    PathParameters,
    PathSet,
    PilotGrid,
    ReceivedPilots,
    antenna_pattern,
    antenna_pattern_gradients,
    build_planar_array,
    channel_matrix,
    channel_response,
    derive_rng,
    direction_vector,
    pattern_response,
    simulate_pilots,
    steering_vector,
    uniform_pilot_grid,
    wrap_azimuth,
)
from .lowres import (
    ErrorStats,
    IllConditionedError,
    LmmseModel,
    LsEstimates,
    analytic_ls_mse,
    channel_autocorrelation,
    lmmse_error_stats,
    lmmse_estimate,
    lmmse_weights,
    ls_estimate,
)
from .sage import (
    OverParameterizedError,
    SageConfig,
    SageResult,
    hr_extrapolate,
    sage_estimate,
    sage_initialize,
    sage_refine,
)
from .crlb import (
    CrlbResult,
    FisherMatrix,
    IllConditionedFisherError,
    SeparationReport,
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
from .downlink import (
    DownlinkConfig,
    EfficiencyReport,
    beamforming_efficiency,
    downlink_snr,
    efficiency_approx,
    efficiency_monte_carlo,
    link_report,
    mrt_beamformer,
    ser_mqam,
    spectral_efficiency,
)
from .scenario import (
    CdfTable,
    ClusterMetadata,
    ConfigError,
    ScenarioConfig,
    SweepResult,
    SweepRow,
    compute_cdf,
    draw_clustered_paths,
    generate_scenario,
    run_sweep,
)
from .report import (
    CSV_HEADER,
    load_results_json,
    write_report,
    write_results_json,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
