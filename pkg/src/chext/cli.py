"""Command-line front end.

Subcommands:
  simulate  one scenario, one frequency sweep with Monte-Carlo estimators
  crlb      bounds and derived link metrics only, no Monte Carlo
  sweep     grid of (antenna count, pilot SNR) combinations
  report    re-render CSVs and figures from a stored results.json

Every run directory receives results.csv (fixed schema), results.json (full
round-trippable state), per-frequency CDF sibling CSVs when drops > 1, and
the figure set (fig_mse/fig_efficiency/fig_link/fig_cdf PNGs).

Exit codes: 0 success, 2 invalid configuration or flags, 3 numeric failure
(every row errored), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import yaml

from .downlink import DownlinkConfig
from .plots import render_figures
from .report import load_results_json, write_report, write_results_json
from .scenario import ConfigError, ScenarioConfig, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_SCENARIO_FIELDS = {field.name for field in dataclasses.fields(ScenarioConfig)}
_DOWNLINK_FIELDS = {field.name for field in dataclasses.fields(DownlinkConfig)}

_INT_FIELDS = {"num_paths", "num_pilots", "array_rows", "array_cols", "seed",
               "constellation_order"}
_FLOAT_FIELDS = {"max_delay", "bandwidth", "carrier", "element_spacing",
                 "pilot_snr", "symbol_energy", "noise_variance"}


def _coerce(name: str, value):
    if value is None:
        return None
    try:
        if name in _INT_FIELDS:
            return int(value)
        if name in _FLOAT_FIELDS:
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r} has a non-numeric value {value!r}") from exc
    return value


def load_config_file(path) -> Tuple[ScenarioConfig, Optional[DownlinkConfig]]:
    """Parse a YAML config mirroring ScenarioConfig, plus a downlink section."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        mapping = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"config file {path} must hold a key-value mapping")
    return build_configs(mapping)


def build_configs(mapping: dict) -> Tuple[ScenarioConfig, Optional[DownlinkConfig]]:
    mapping = dict(mapping)
    downlink_section = mapping.pop("downlink", None)

    unknown = sorted(set(mapping) - _SCENARIO_FIELDS)
    if unknown:
        raise ConfigError(
            f"unknown config keys {unknown}; allowed: "
            f"{sorted(_SCENARIO_FIELDS)} plus 'downlink'"
        )
    scenario_kwargs = {name: _coerce(name, value) for name, value in mapping.items()}
    scenario = ScenarioConfig(**scenario_kwargs)

    downlink = None
    if downlink_section is not None:
        if not isinstance(downlink_section, dict):
            raise ConfigError("'downlink' section must be a key-value mapping")
        unknown = sorted(set(downlink_section) - _DOWNLINK_FIELDS)
        if unknown:
            raise ConfigError(
                f"unknown downlink keys {unknown}; allowed: {sorted(_DOWNLINK_FIELDS)}"
            )
        try:
            downlink = DownlinkConfig(
                **{name: _coerce(name, value) for name, value in downlink_section.items()}
            )
        except ValueError as exc:
            raise ConfigError(f"invalid downlink section: {exc}") from exc
    return scenario, downlink


def _parse_number_list(text: str, cast, flag: str):
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(cast(token))
        except ValueError as exc:
            raise ConfigError(f"{flag} expects comma-separated numbers, got {token!r}") from exc
    if not values:
        raise ConfigError(f"{flag} is empty")
    return values


def _add_common_flags(parser: argparse.ArgumentParser, with_mc: bool):
    parser.add_argument("--config", metavar="FILE", help="YAML scenario config")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    if with_mc:
        parser.add_argument("--trials", type=int, default=100,
                            help="Monte-Carlo noise realizations per frequency (default 100)")
        parser.add_argument("--estimators", default="ls,lmmse,sage",
                            help="comma-separated subset of ls,lmmse,sage")
    parser.add_argument("--drops", type=int, default=1,
                        help="independent scenario drops for CDF tables (default 1)")
    parser.add_argument("--freq-min", type=float, default=-100e6,
                        help="sweep start, baseband Hz (default -100e6)")
    parser.add_argument("--freq-max", type=float, default=100e6,
                        help="sweep end, baseband Hz (default 100e6)")
    parser.add_argument("--freq-steps", type=int, default=21,
                        help="number of sweep frequencies (default 21)")
    parser.add_argument("--out", default="chext-out", metavar="DIR",
                        help="output directory (default chext-out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chext",
        description="Uplink-to-downlink channel extrapolation experiments",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser(
        "simulate", help="one scenario, estimators plus bounds on a frequency sweep"
    )
    _add_common_flags(simulate, with_mc=True)

    crlb = commands.add_parser("crlb", help="bounds and link metrics only, no Monte Carlo")
    _add_common_flags(crlb, with_mc=False)

    sweep = commands.add_parser(
        "sweep", help="grid of antenna-count / pilot-SNR combinations"
    )
    _add_common_flags(sweep, with_mc=True)
    sweep.add_argument("--antennas", default="16",
                       help="comma-separated antenna counts, each a perfect square")
    sweep.add_argument("--snrs", default=None,
                       help="comma-separated pilot SNRs in dB (default: config value)")

    report = commands.add_parser("report", help="re-render outputs from results.json")
    report.add_argument("--results", required=True, metavar="FILE",
                        help="results.json from an earlier run")
    report.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: alongside the results file)")
    return parser


def _frequencies(args) -> np.ndarray:
    if args.freq_steps < 1:
        raise ConfigError("--freq-steps must be at least 1")
    if args.freq_max < args.freq_min:
        raise ConfigError("--freq-max must not be below --freq-min")
    return np.linspace(args.freq_min, args.freq_max, args.freq_steps)


def _load_scenario(args) -> Tuple[ScenarioConfig, Optional[DownlinkConfig]]:
    if args.config:
        scenario, downlink = load_config_file(args.config)
    else:
        scenario, downlink = ScenarioConfig(), None
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    return scenario, downlink


def _emit(result, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(result, out_dir / "results.csv")
    write_results_json(result, out_dir / "results.json")
    render_figures(result, out_dir)


def _run_single(args, estimators, trials: int) -> int:
    scenario, downlink = _load_scenario(args)
    result = run_sweep(
        scenario,
        _frequencies(args),
        trials=trials,
        estimators=estimators,
        downlink=downlink,
        drops=args.drops,
    )
    _emit(result, Path(args.out))
    if result.all_failed:
        print("every sweep row failed; see results.json error fields", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _run_sweep_grid(args) -> int:
    scenario, downlink = _load_scenario(args)
    antennas = _parse_number_list(args.antennas, int, "--antennas")
    snrs = (
        _parse_number_list(args.snrs, float, "--snrs")
        if args.snrs is not None
        else [scenario.pilot_snr]
    )
    freqs = _frequencies(args)
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")

    out_root = Path(args.out)
    all_failed = True
    for count in antennas:
        side = math.isqrt(count)
        if side * side != count:
            raise ConfigError(
                f"--antennas entries must be perfect squares for a square array, got {count}"
            )
        for snr in snrs:
            combo = dataclasses.replace(
                scenario, array_rows=side, array_cols=side, pilot_snr=snr
            )
            result = run_sweep(
                combo, freqs, trials=args.trials, estimators=args.estimators,
                downlink=downlink, drops=args.drops,
            )
            combo_dir = out_root / f"m{count}_snr{snr:g}"
            _emit(result, combo_dir)
            if result.all_failed:
                print(f"{combo_dir.name}: every row failed", file=sys.stderr)
            else:
                all_failed = False
    return EXIT_NUMERIC if all_failed else EXIT_OK


def _run_report(args) -> int:
    results_path = Path(args.results)
    try:
        result = load_results_json(results_path)
    except ValueError as exc:
        raise ConfigError(f"cannot load {results_path}: {exc}") from exc
    out_dir = Path(args.out) if args.out else results_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(result, out_dir / "results.csv")
    # keep the state next to the re-rendered outputs so reports chain
    write_results_json(result, out_dir / "results.json")
    render_figures(result, out_dir)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            if args.trials < 1:
                raise ConfigError("--trials must be at least 1")
            return _run_single(args, estimators=args.estimators, trials=args.trials)
        if args.command == "crlb":
            return _run_single(args, estimators=(), trials=1)
        if args.command == "sweep":
            return _run_sweep_grid(args)
        if args.command == "report":
            return _run_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
