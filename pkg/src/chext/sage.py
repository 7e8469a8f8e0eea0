"""High-resolution per-path parameter extraction by coordinate-descent ML.

The estimator works on one noisy pilot snapshot r_mk = h_m(f_k) s_k + w_mk and
fits a multipath model path by path. `sage_initialize` builds a first guess by
successive cancellation: for each path it locates the strongest delay with a
noncoherent matched filter, locks the direction with a coarse joint grid plus
alternating 1-D sweeps, re-tunes the delay coherently, fits the complex gain
in closed form, and subtracts the reconstructed contribution from the
residual. `sage_refine` then cycles over paths, re-adding one path at a time
and line-searching delay, azimuth, and elevation on successively finer local
grids (four zoom levels, ten-fold each). Every candidate is scored by the
profile objective

    J = ||X||^2 - |<U, X>|^2 / ||U||^2,

i.e. the data misfit after the optimal closed-form gain for that candidate,
where U is the unit-path signature U_mk = a_m(az, el, f_k) e^{-j2pi f_k tau}
s_k and X is the residual with the path under update re-added. The current
parameter value is always one of the candidates, so the objective is
non-increasing across every single-parameter update.

The gain update is an exact linear least-squares fit rather than separate
line searches over its real and imaginary parts; it minimises the same
objective and keeps the monotone-descent guarantee.

Delays are searched on [0, max_delay]. For a uniform pilot grid the delay is
only identifiable modulo the reciprocal grid spacing, so the default window
(one aliasing period, 1 / median spacing) covers every resolvable delay.
Azimuth candidates wrap modulo 2pi; elevation candidates clamp to [0, pi].

A planar array in a single plane cannot tell a direction from its mirror
image across that plane, so the azimuth of a recovered path may come back
sign-flipped relative to the truth. The reconstructed channel is identical
either way; parameter-level comparisons should fold the ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import (
    TWO_PI,
    ArrayGeometry,
    ChannelVector,
    PathParameters,
    PathSet,
    PilotGrid,
    ReceivedPilots,
    channel_response,
    pattern_response,
    wrap_azimuth,
)

# local line search geometry: 4 zoom levels, each 10x finer, each scanning
# +-15 steps so the window covers +-1.5 coarser-level steps
ZOOM_LEVELS = 4
ZOOM_FACTOR = 10.0
SEARCH_HALF_WIDTH = 15

MAX_ANGLE_STEP = math.pi / 90.0
# under the optional stop rule, residuals this far below the snapshot power
# count as numerical dust: further paths would fit rounding noise
RESIDUAL_FLOOR = 1e-12


class OverParameterizedError(ValueError):
    """Raised when the model has more real parameters than observations."""

    def __init__(self, num_parameters: int, num_observations: int):
        self.num_parameters = num_parameters
        self.num_observations = num_observations
        super().__init__(
            f"model has {num_parameters} real parameters but only "
            f"{num_observations} observations (M*K); reduce num_paths"
        )


@dataclass
class SageConfig:
    """Search granularity and stopping rules.

    num_paths: number of paths to extract (must be known or guessed a priori).
    delay_step: coarse delay grid step, seconds; must not exceed 1/bandwidth.
    angle_step: coarse angle grid step, radians; at most pi/90 (2 degrees).
    max_iterations: cap on full refinement cycles.
    convergence_threshold: relative objective decrease per full cycle below
        which refinement stops.
    max_delay: delay search window, seconds; None picks one aliasing period
        of the pilot grid (1 / median spacing).
    residual_stop_fraction: optional early stop for initialization; when set,
        stop adding paths once a new path lowers residual power by less than
        this fraction (the first path is always kept). Off by default.
    """

    num_paths: int
    delay_step: float = 1e-9
    angle_step: float = math.radians(1.0)
    max_iterations: int = 50
    convergence_threshold: float = 1e-6
    max_delay: Optional[float] = None
    residual_stop_fraction: Optional[float] = None

    def __post_init__(self):
        self.num_paths = int(self.num_paths)
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if not self.delay_step > 0.0:
            raise ValueError("delay_step must be positive")
        if not self.angle_step > 0.0:
            raise ValueError("angle_step must be positive")
        if self.angle_step > MAX_ANGLE_STEP * (1.0 + 1e-12):
            raise ValueError("angle_step must not exceed pi/90 rad (2 degrees)")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        self.max_iterations = int(self.max_iterations)
        if not self.convergence_threshold > 0.0:
            raise ValueError("convergence_threshold must be positive")
        if self.max_delay is not None and not self.max_delay > 0.0:
            raise ValueError("max_delay must be positive when given")
        if self.residual_stop_fraction is not None and not (
            0.0 < self.residual_stop_fraction < 1.0
        ):
            raise ValueError("residual_stop_fraction must lie in (0, 1)")

    def delay_window(self, pilots: PilotGrid) -> float:
        if self.max_delay is not None:
            return float(self.max_delay)
        return 1.0 / pilots.median_spacing


@dataclass
class SageResult:
    """Extracted paths plus convergence bookkeeping.

    residual_power traces ||residual||^2: one entry per added path during
    initialization (starting from the raw snapshot power), one entry per
    refinement cycle afterwards. objective_trace is finer grained, one entry
    per single-parameter update, and is what the monotonicity guarantee
    applies to.
    """

    estimated_paths: PathSet
    residual_power: np.ndarray
    iterations_used: int
    objective_trace: np.ndarray

    def __post_init__(self):
        self.residual_power = np.asarray(self.residual_power, dtype=float)
        self.objective_trace = np.asarray(self.objective_trace, dtype=float)
        self.iterations_used = int(self.iterations_used)
        if self.residual_power.ndim != 1 or self.residual_power.size == 0:
            raise ValueError("residual_power must be a nonempty 1-D sequence")
        if np.any(self.residual_power < 0.0):
            raise ValueError("residual power cannot be negative")
        # monotone up to floating-point fuzz in the norm recomputations
        slack = 1e-9 * max(float(self.residual_power[0]), 1e-300)
        if np.any(np.diff(self.residual_power) > slack):
            raise ValueError("residual_power must be non-increasing")


def _check_problem_size(received: ReceivedPilots, pilots: PilotGrid,
                        array: ArrayGeometry, config: SageConfig):
    samples = received.samples
    if samples.shape != (array.num_elements, pilots.num_pilots):
        raise ValueError(
            f"samples shape {samples.shape} does not match "
            f"(M, K) = ({array.num_elements}, {pilots.num_pilots})"
        )
    num_parameters = PathSet.PARAMS_PER_PATH * config.num_paths
    num_observations = samples.size
    if num_parameters > num_observations:
        raise OverParameterizedError(num_parameters, num_observations)
    if config.delay_step > (1.0 / pilots.bandwidth) * (1.0 + 1e-12):
        raise ValueError("delay_step must not exceed 1/bandwidth")


def _wrap_azimuth_array(values: np.ndarray) -> np.ndarray:
    return np.mod(values + math.pi, TWO_PI) - math.pi


def _residual_power(residual: np.ndarray) -> float:
    return float(np.sum(np.abs(residual) ** 2))


def _path_signature(array: ArrayGeometry, pilots: PilotGrid,
                    delay: float, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-gain path contribution (M, K) including the pilot symbols."""
    pattern = pattern_response(array, azimuth, elevation, pilots.frequencies)[0]
    phases = np.exp(-1j * TWO_PI * pilots.frequencies * delay)
    return pattern * (phases * pilots.symbols)[None, :]


def _gain_fit(signature: np.ndarray, residual: np.ndarray) -> complex:
    """Closed-form least-squares gain of one signature against a residual."""
    energy = float(np.sum(np.abs(signature) ** 2))
    if energy <= 0.0:
        return 0.0 + 0.0j
    return complex(np.vdot(signature, residual) / energy)


def _noncoherent_delay_search(residual: np.ndarray, pilots: PilotGrid,
                              delays: np.ndarray) -> float:
    """Delay maximizing per-antenna matched-filter power summed noncoherently."""
    weighted = residual * np.conj(pilots.symbols)[None, :]
    phases = np.exp(1j * TWO_PI * np.outer(delays, pilots.frequencies))  # (T, K)
    scores = weighted @ phases.T  # (M, T)
    power = np.sum(np.abs(scores) ** 2, axis=0)
    return float(delays[int(np.argmax(power))])


def _coherent_delay_scores(residual: np.ndarray, array: ArrayGeometry,
                           pilots: PilotGrid, delays: np.ndarray,
                           azimuth: float, elevation: float):
    """(correlations, energies, powers) over delay candidates at a fixed angle."""
    pattern = pattern_response(array, azimuth, elevation, pilots.frequencies)[0]
    base = pattern * pilots.symbols[None, :]  # signature sans delay phases
    v = np.einsum("mk,mk->k", base.conj(), residual)
    phases = np.exp(1j * TWO_PI * np.outer(delays, pilots.frequencies))  # (T, K)
    corr = phases @ v
    energy = float(np.sum(np.abs(base) ** 2))  # delay-independent
    energies = np.full(delays.shape, energy)
    with np.errstate(invalid="ignore"):
        power = np.where(energies > 0.0, np.abs(corr) ** 2 / np.maximum(energies, 1e-300), 0.0)
    return corr, energies, power


def _angle_scores(residual: np.ndarray, array: ArrayGeometry, pilots: PilotGrid,
                  azimuths: np.ndarray, elevations: np.ndarray, delay: float,
                  chunk: int = 1024):
    """(correlations, energies, powers) over direction candidates at a fixed delay."""
    weights = np.exp(-1j * TWO_PI * pilots.frequencies * delay) * pilots.symbols
    target = residual * np.conj(weights)[None, :]
    abs_w_sq = np.abs(weights) ** 2
    num = azimuths.size
    corr = np.empty(num, dtype=complex)
    energy = np.empty(num, dtype=float)
    for start in range(0, num, chunk):
        stop = min(start + chunk, num)
        pattern = pattern_response(
            array, azimuths[start:stop], elevations[start:stop], pilots.frequencies
        )
        corr[start:stop] = np.einsum("amk,mk->a", pattern.conj(), target)
        energy[start:stop] = np.einsum("amk,k->a", np.abs(pattern) ** 2, abs_w_sq).real
    with np.errstate(invalid="ignore"):
        power = np.where(energy > 0.0, np.abs(corr) ** 2 / np.maximum(energy, 1e-300), 0.0)
    return corr, energy, power


def _initial_direction(residual: np.ndarray, array: ArrayGeometry,
                       pilots: PilotGrid, delay: float, angle_step: float):
    """Coarse joint azimuth-elevation grid, then two alternating 1-D sweeps."""
    coarse = 5.0 * angle_step
    az_grid = np.arange(-math.pi, math.pi - 1e-12, coarse)
    el_grid = np.arange(0.0, math.pi + 1e-12, coarse)
    az_mesh, el_mesh = np.meshgrid(az_grid, el_grid, indexing="ij")
    _, _, power = _angle_scores(
        residual, array, pilots, az_mesh.ravel(), el_mesh.ravel(), delay
    )
    best = int(np.argmax(power))
    azimuth = float(az_mesh.ravel()[best])
    elevation = float(el_mesh.ravel()[best])

    az_line = np.arange(-math.pi, math.pi - 1e-12, angle_step)
    el_line = np.arange(0.0, math.pi + 1e-12, angle_step)
    for _ in range(2):
        _, _, power = _angle_scores(
            residual, array, pilots, az_line, np.full(az_line.shape, elevation), delay
        )
        azimuth = float(az_line[int(np.argmax(power))])
        _, _, power = _angle_scores(
            residual, array, pilots, np.full(el_line.shape, azimuth), el_line, delay
        )
        elevation = float(el_line[int(np.argmax(power))])
    return azimuth, elevation


def sage_initialize(received: ReceivedPilots, pilots: PilotGrid,
                    array: ArrayGeometry, config: SageConfig) -> SageResult:
    """First-pass path extraction by successive cancellation.

    Paths are pulled out strongest-first: noncoherent delay search over the
    full window, coarse-then-fine direction search, coherent delay re-tune,
    closed-form gain, subtract. Residual power never increases; with the
    optional residual_stop_fraction rule, extraction stops early once an
    extra path stops paying for itself.
    """
    _check_problem_size(received, pilots, array, config)
    max_delay = config.delay_window(pilots)
    delay_grid = np.arange(0.0, max_delay + 0.5 * config.delay_step, config.delay_step)
    delay_grid = np.minimum(delay_grid, max_delay)

    residual = received.samples.astype(complex, copy=True)
    trace = [_residual_power(residual)]
    paths = []
    for _ in range(config.num_paths):
        before = trace[-1]
        delay = _noncoherent_delay_search(residual, pilots, delay_grid)
        azimuth, elevation = _initial_direction(
            residual, array, pilots, delay, config.angle_step
        )
        corr, energies, power = _coherent_delay_scores(
            residual, array, pilots, delay_grid, azimuth, elevation
        )
        best = int(np.argmax(power))
        delay = float(delay_grid[best])
        signature = _path_signature(array, pilots, delay, azimuth, elevation)
        gain = _gain_fit(signature, residual)
        remaining = residual - gain * signature
        after = _residual_power(remaining)
        if (
            config.residual_stop_fraction is not None
            and paths
            and (
                before <= RESIDUAL_FLOOR * trace[0]
                or before - after < config.residual_stop_fraction * before
            )
        ):
            break
        residual = remaining
        paths.append(
            PathParameters(
                gain=gain,
                delay=delay,
                azimuth=wrap_azimuth(azimuth),
                elevation=float(np.clip(elevation, 0.0, math.pi)),
            )
        )
        trace.append(after)
    return SageResult(
        estimated_paths=PathSet(paths),
        residual_power=np.asarray(trace),
        iterations_used=len(paths),
        objective_trace=np.asarray(trace),
    )


def _line_search(kind: str, residual: np.ndarray, array: ArrayGeometry,
                 pilots: PilotGrid, delay: float, azimuth: float,
                 elevation: float, step: float, max_delay: float):
    """Multi-zoom 1-D search of one parameter; returns (value, gain, objective).

    The candidate grid always contains the current value, so the best profile
    objective cannot exceed the one at the incoming parameters.
    """
    base = _residual_power(residual)
    offsets = np.arange(-SEARCH_HALF_WIDTH, SEARCH_HALF_WIDTH + 1, dtype=float)
    value = {"delay": delay, "azimuth": azimuth, "elevation": elevation}[kind]
    best_gain = 0.0 + 0.0j
    best_power = 0.0
    # each level's grid contains the previous level's winner (offset 0), so the
    # last level's argmax is the best candidate seen overall
    for level in range(ZOOM_LEVELS):
        local = offsets * (step / ZOOM_FACTOR**level)
        if kind == "delay":
            candidates = np.clip(value + local, 0.0, max_delay)
            corr, energy, power = _coherent_delay_scores(
                residual, array, pilots, candidates, azimuth, elevation
            )
        elif kind == "azimuth":
            candidates = _wrap_azimuth_array(value + local)
            corr, energy, power = _angle_scores(
                residual, array, pilots, candidates,
                np.full(candidates.shape, elevation), delay,
            )
        else:
            candidates = np.clip(value + local, 0.0, math.pi)
            corr, energy, power = _angle_scores(
                residual, array, pilots, np.full(candidates.shape, azimuth),
                candidates, delay,
            )
        best = int(np.argmax(power))
        value = float(candidates[best])
        best_power = float(power[best])
        best_gain = (
            complex(corr[best] / energy[best]) if energy[best] > 0.0 else 0.0 + 0.0j
        )
    objective = max(base - best_power, 0.0)
    return value, best_gain, objective


def sage_refine(init: SageResult, received: ReceivedPilots, pilots: PilotGrid,
                array: ArrayGeometry, config: SageConfig) -> SageResult:
    """Cyclic per-path coordinate descent from an initial extraction.

    Each cycle visits every path: the path is re-added to the residual, its
    delay, azimuth, and elevation are line-searched in turn on four
    successively ten-fold finer local grids (window +-1.5 coarser steps), the
    gain is re-fit in closed form after every accepted move, and the path is
    subtracted back. Stops when the relative objective decrease over a full
    cycle falls below convergence_threshold or after max_iterations cycles.
    """
    _check_problem_size(received, pilots, array, config)
    max_delay = config.delay_window(pilots)

    delays = [p.delay for p in init.estimated_paths]
    azimuths = [p.azimuth for p in init.estimated_paths]
    elevations = [p.elevation for p in init.estimated_paths]
    gains = [p.gain for p in init.estimated_paths]
    num_paths = len(delays)

    contributions = [
        gains[l] * _path_signature(array, pilots, delays[l], azimuths[l], elevations[l])
        for l in range(num_paths)
    ]
    residual = received.samples.astype(complex, copy=True)
    for contribution in contributions:
        residual -= contribution

    # carry the initialization history so the trace starts at the raw
    # snapshot power; that scale also anchors the monotonicity slack, which
    # otherwise collapses when the incoming residual is already near zero
    objective = _residual_power(residual)
    trace = [*init.objective_trace]
    cycle_power = [*init.residual_power]
    cycles = 0
    for _ in range(config.max_iterations):
        previous = cycle_power[-1]
        for l in range(num_paths):
            with_path = residual + contributions[l]
            for kind in ("delay", "azimuth", "elevation"):
                value, gain, objective = _line_search(
                    kind, with_path, array, pilots,
                    delays[l], azimuths[l], elevations[l],
                    config.delay_step if kind == "delay" else config.angle_step,
                    max_delay,
                )
                if kind == "delay":
                    delays[l] = value
                elif kind == "azimuth":
                    azimuths[l] = value
                else:
                    elevations[l] = value
                gains[l] = gain
                trace.append(objective)
            contributions[l] = gains[l] * _path_signature(
                array, pilots, delays[l], azimuths[l], elevations[l]
            )
            residual = with_path - contributions[l]
        cycles += 1
        cycle_power.append(objective)
        if previous <= 0.0 or previous - objective < config.convergence_threshold * previous:
            break

    paths = [
        PathParameters(
            gain=gains[l],
            delay=delays[l],
            azimuth=wrap_azimuth(azimuths[l]),
            elevation=float(np.clip(elevations[l], 0.0, math.pi)),
        )
        for l in range(num_paths)
    ]
    return SageResult(
        estimated_paths=PathSet(paths),
        residual_power=np.asarray(cycle_power),
        iterations_used=cycles,
        objective_trace=np.asarray(trace),
    )


def sage_estimate(received: ReceivedPilots, pilots: PilotGrid,
                  array: ArrayGeometry, config: SageConfig) -> SageResult:
    """Initialization followed by refinement in one call."""
    init = sage_initialize(received, pilots, array, config)
    return sage_refine(init, received, pilots, array, config)


def hr_extrapolate(result: SageResult, array: ArrayGeometry,
                   frequency: float) -> ChannelVector:
    """Rebuild the channel from extracted paths at any baseband frequency.

    Uses the same evaluator as the forward model, so exact parameter
    estimates reproduce the channel exactly, arbitrarily far out of band.
    """
    return channel_response(result.estimated_paths, array, float(frequency))
