"""Static matplotlib figures rendered next to the delimited output.

Every renderer takes sweep rows (or CDF tables) and a target file, writes a
PNG when there is anything to draw, and returns the written path or None.
The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .scenario import CdfTable, SweepResult, SweepRow

_MSE_SERIES = (
    ("mse_ls", "LS (per-pilot MC)", "o", ""),
    ("mse_lmmse", "LMMSE (analytic)", "", "-"),
    ("mse_sage", "high-res (MC)", "", "-"),
    ("crlb_mean", "bound (full)", "", "--"),
    ("crlb_simplified", "bound (simplified)", "", ":"),
)


def _series(rows: Sequence[SweepRow], name: str):
    points = [
        (row.frequency / 1e6, getattr(row, name))
        for row in rows
        if getattr(row, name) is not None
    ]
    if not points:
        return None, None
    x, y = zip(*points)
    return np.asarray(x), np.asarray(y)


def fig_mse(rows: Sequence[SweepRow], path: Union[str, Path]) -> Optional[Path]:
    """Estimation error and bounds versus frequency, log scale."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5), constrained_layout=True)
    drew = False
    for name, label, marker, style in _MSE_SERIES:
        x, y = _series(rows, name)
        if x is None or not np.any(np.asarray(y) > 0):
            continue
        ax.semilogy(x, y, linestyle=style or "none", marker=marker or None, label=label)
        drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel("frequency offset (MHz)")
    ax.set_ylabel("channel MSE per antenna")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def fig_efficiency(rows: Sequence[SweepRow], path: Union[str, Path]) -> Optional[Path]:
    """Beamforming efficiency in dB versus frequency."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5), constrained_layout=True)
    drew = False
    for name, label, style in (
        ("eta_mc", "Monte Carlo", "-"),
        ("eta_approx", "approximation", "--"),
    ):
        x, y = _series(rows, name)
        if x is None:
            continue
        y = np.asarray(y, dtype=float)
        keep = y > 0
        if not np.any(keep):
            continue
        ax.plot(x[keep], 10.0 * np.log10(y[keep]), style, label=label)
        drew = True
    if not drew:
        plt.close(fig)
        return None
    ax.set_xlabel("frequency offset (MHz)")
    ax.set_ylabel("beamforming efficiency (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def fig_link(rows: Sequence[SweepRow], path: Union[str, Path]) -> Optional[Path]:
    """Spectral efficiency and symbol error rate versus frequency."""
    se_x, se_y = _series(rows, "se_bits")
    ser_x, ser_y = _series(rows, "ser")
    if se_x is None and ser_x is None:
        return None
    fig, (ax_se, ax_ser) = plt.subplots(
        1, 2, figsize=(9.5, 4.0), constrained_layout=True
    )
    if se_x is not None:
        ax_se.plot(se_x, se_y, "-")
    ax_se.set_xlabel("frequency offset (MHz)")
    ax_se.set_ylabel("spectral efficiency (bits/symbol)")
    ax_se.grid(True, alpha=0.3)
    if ser_x is not None:
        positive = np.asarray(ser_y) > 0
        if np.any(positive):
            ax_ser.semilogy(np.asarray(ser_x)[positive], np.asarray(ser_y)[positive], "-")
        else:
            ax_ser.plot(ser_x, ser_y, "-")
    ax_ser.set_xlabel("frequency offset (MHz)")
    ax_ser.set_ylabel("symbol error rate")
    ax_ser.grid(True, which="both", alpha=0.3)
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def fig_cdf(tables: Dict[str, CdfTable], path: Union[str, Path],
            labels: Optional[Dict[str, str]] = None) -> Optional[Path]:
    """Empirical CDF curves, one per table."""
    if not tables:
        return None
    fig, ax = plt.subplots(figsize=(7.0, 4.5), constrained_layout=True)
    for key in sorted(tables):
        table = tables[key]
        label = (labels or {}).get(key, key)
        ax.step(table.values, table.cdf, where="post", label=label)
    ax.set_xlabel("spectral efficiency (bits/symbol)")
    ax.set_ylabel("CDF")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_figures(result: SweepResult, out_dir: Union[str, Path]):
    """Render the standard figure set; returns the list of written paths."""
    out_dir = Path(out_dir)
    written = []
    for renderer, target in (
        (lambda p: fig_mse(result.rows, p), out_dir / "fig_mse.png"),
        (lambda p: fig_efficiency(result.rows, p), out_dir / "fig_efficiency.png"),
        (lambda p: fig_link(result.rows, p), out_dir / "fig_link.png"),
    ):
        produced = renderer(target)
        if produced is not None:
            written.append(produced)
    if result.cdf_tables:
        freq_map = result.metadata.get("cdf_frequencies", {})
        labels = {
            key: f"f = {freq_map[key] / 1e6:+.1f} MHz" if key in freq_map else key
            for key in result.cdf_tables
        }
        produced = fig_cdf(result.cdf_tables, out_dir / "fig_cdf.png", labels)
        if produced is not None:
            written.append(produced)
    return written
