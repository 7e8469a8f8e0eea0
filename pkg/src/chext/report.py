"""Delimited and JSON serialization of sweep results.

The CSV schema is fixed: one row per frequency under the header

    frequency_hz,mse_ls,mse_lmmse,mse_sage,crlb_mean,crlb_simplified,eta_mc,eta_approx,se_bits,ser

with floats in scientific notation, '.' decimal point, '\n' newlines, UTF-8.
Fields that were not computed stay empty, never fabricated zeros. CDF tables
are written as sibling files `<stem>_cdf_<key>.csv` with header `value,cdf`.
A JSON document round-trips the full result (rows including per-row error
strings, CDF tables with raw samples, and run metadata) so reports can be
re-rendered without recomputing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .scenario import CdfTable, SweepResult, SweepRow

CSV_HEADER = (
    "frequency_hz,mse_ls,mse_lmmse,mse_sage,crlb_mean,crlb_simplified,"
    "eta_mc,eta_approx,se_bits,ser"
)
CSV_FIELDS = CSV_HEADER.split(",")
CDF_HEADER = "value,cdf"
RESULTS_FORMAT = "chext-sweep-results"
RESULTS_VERSION = 1

_FLOAT_FORMAT = "%.12e"


def _format_field(value: Optional[float]) -> str:
    if value is None:
        return ""
    return _FLOAT_FORMAT % float(value)


def _row_record(row: SweepRow) -> dict:
    return {
        "frequency_hz": row.frequency,
        "mse_ls": row.mse_ls,
        "mse_lmmse": row.mse_lmmse,
        "mse_sage": row.mse_sage,
        "crlb_mean": row.crlb_mean,
        "crlb_simplified": row.crlb_simplified,
        "eta_mc": row.eta_mc,
        "eta_approx": row.eta_approx,
        "se_bits": row.se_bits,
        "ser": row.ser,
    }


def cdf_sibling_path(path: Union[str, Path], key: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_cdf_{key}{path.suffix or '.csv'}")


def write_report(result: SweepResult, path: Union[str, Path]) -> None:
    """Write the sweep CSV plus one sibling CSV per CDF table."""
    path = Path(path)
    lines = [CSV_HEADER]
    for row in result.rows:
        record = _row_record(row)
        lines.append(",".join(_format_field(record[name]) for name in CSV_FIELDS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    for key in sorted(result.cdf_tables):
        table = result.cdf_tables[key]
        sibling = [CDF_HEADER]
        for value, level in zip(table.values, table.cdf):
            sibling.append(f"{_FLOAT_FORMAT % value},{_FLOAT_FORMAT % level}")
        cdf_sibling_path(path, key).write_text(
            "\n".join(sibling) + "\n", encoding="utf-8", newline="\n"
        )


def write_results_json(result: SweepResult, path: Union[str, Path]) -> None:
    """Serialize the full result, including raw CDF samples and row errors."""
    document = {
        "format": RESULTS_FORMAT,
        "version": RESULTS_VERSION,
        "metadata": result.metadata,
        "rows": [dict(_row_record(row), error=row.error) for row in result.rows],
        "cdf_tables": {
            key: {
                "values": table.values.tolist(),
                "cdf": table.cdf.tolist(),
                "samples": table.samples.tolist(),
            }
            for key, table in result.cdf_tables.items()
        },
    }
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_results_json(path: Union[str, Path]) -> SweepResult:
    """Rebuild a SweepResult from its JSON serialization."""
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("format") != RESULTS_FORMAT:
        raise ValueError(f"{path} is not a {RESULTS_FORMAT} document")
    if document.get("version") != RESULTS_VERSION:
        raise ValueError(f"unsupported results version {document.get('version')}")
    rows = []
    for record in document["rows"]:
        rows.append(SweepRow(
            frequency=record["frequency_hz"],
            mse_ls=record["mse_ls"],
            mse_lmmse=record["mse_lmmse"],
            mse_sage=record["mse_sage"],
            crlb_mean=record["crlb_mean"],
            crlb_simplified=record["crlb_simplified"],
            eta_mc=record["eta_mc"],
            eta_approx=record["eta_approx"],
            se_bits=record["se_bits"],
            ser=record["ser"],
            error=record.get("error"),
        ))
    tables = {
        key: CdfTable(
            values=np.asarray(entry["values"]),
            cdf=np.asarray(entry["cdf"]),
            samples=np.asarray(entry["samples"]),
        )
        for key, entry in document.get("cdf_tables", {}).items()
    }
    return SweepResult(rows=rows, cdf_tables=tables, metadata=document.get("metadata", {}))
