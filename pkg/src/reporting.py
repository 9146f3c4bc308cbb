"""Run artifacts: JSONL step metrics, NMSE CSV tables, figures and HTML reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, TextIO

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.constants import NMSE_REPORT_TEMPLATE  # noqa: E402
from src.errors import DataError  # noqa: E402
from src.models import MetricsRecord, NmseRow  # noqa: E402
from src.utils import format_nmse_cell, to_db  # noqa: E402

NMSE_CSV_COLUMNS = ("observed_count", "snr_db", "nmse", "nmse_db")


class MetricsLog:
    """Append-only line-delimited JSON log, one object per record."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._handle: TextIO | None = None

    def __enter__(self) -> MetricsLog:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("a", encoding="utf-8")
        except OSError as exc:
            logging.exception("Failed to open metrics log %s", self.path)
            raise DataError(f"cannot open metrics log {self.path}: {exc}") from exc
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def write(self, record: MetricsRecord | dict[str, Any]) -> None:
        if self._handle is None:
            raise DataError("metrics log is not open")
        payload = record.to_dict() if isinstance(record, MetricsRecord) else record
        self._handle.write(json.dumps(payload, sort_keys=True) + "\n")
        self._handle.flush()


def read_metrics(path: Path) -> list[dict[str, Any]]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read metrics log {path}: {exc}") from exc


def write_nmse_csv(path: Path, rows: list[NmseRow]) -> int:
    """Write the NMSE table and return the number of rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(NMSE_CSV_COLUMNS)
            for row in rows:
                writer.writerow([row.observed_count, repr(row.snr_db), repr(row.nmse), repr(row.nmse_db)])
    except OSError as exc:
        logging.exception("Failed to write NMSE table to %s", path)
        raise DataError(f"cannot write {path}: {exc}") from exc
    return len(rows)


def read_nmse_csv(path: Path) -> list[NmseRow]:
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != NMSE_CSV_COLUMNS:
                raise DataError(f"{path} is not an NMSE table (columns {reader.fieldnames})")
            return [
                NmseRow(
                    observed_count=int(record["observed_count"]),
                    snr_db=float(record["snr_db"]),
                    nmse=float(record["nmse"]),
                    nmse_db=float(record["nmse_db"]),
                )
                for record in reader
            ]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed NMSE table {path}: {exc}") from exc


def _axes(rows: list[NmseRow]) -> tuple[list[int], list[float]]:
    counts = sorted({row.observed_count for row in rows})
    snrs = sorted({row.snr_db for row in rows})
    return counts, snrs


def format_nmse_table(tables: dict[str, list[NmseRow]]) -> str:
    """Plain-text NMSE (dB) grid, one column per (label, SNR)."""
    all_rows = [row for rows in tables.values() for row in rows]
    counts, snrs = _axes(all_rows)
    lookup = {(label, row.observed_count, row.snr_db): row for label, rows in tables.items() for row in rows}
    header = ["observed"] + [f"{label}@{snr:g}dB" for label in tables for snr in snrs]
    lines = ["  ".join(f"{cell:>14}" for cell in header)]
    for count in counts:
        cells = [str(count)]
        for label in tables:
            for snr in snrs:
                row = lookup.get((label, count, snr))
                cells.append(format_nmse_cell(row.nmse_db) if row else "-")
        lines.append("  ".join(f"{cell:>14}" for cell in cells))
    return "\n".join(lines)


def plot_nmse(path: Path, tables: dict[str, list[NmseRow]], title: str = "NMSE vs observed ports") -> Path:
    """NMSE (dB) against observed ports, one curve per SNR and table."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    styles = ["-", "--", ":", "-."]
    markers = ["o", "s", "^", "D", "v"]
    for t_index, (label, rows) in enumerate(tables.items()):
        counts, snrs = _axes(rows)
        by_key = {(row.observed_count, row.snr_db): row for row in rows}
        for s_index, snr in enumerate(snrs):
            ys = [by_key[(c, snr)].nmse_db if (c, snr) in by_key else math.nan for c in counts]
            name = f"{label}, {snr:g} dB" if len(tables) > 1 else f"{snr:g} dB"
            ax.plot(
                counts, ys,
                linestyle=styles[t_index % len(styles)],
                marker=markers[s_index % len(markers)],
                label=name,
                linewidth=1.8,
            )
    ax.set_xlabel("Number of observed ports")
    ax.set_ylabel("NMSE (dB)")
    ax.set_title(title)
    ax.grid(True, linestyle="--", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        logging.exception("Failed to save figure %s", path)
        raise DataError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def render_html_report(
    path: Path,
    tables: dict[str, list[NmseRow]],
    *,
    title: str,
    grid: str,
    m_t: int,
    config_hash: str,
    figure: Path | None = None,
) -> Path:
    all_rows = [row for rows in tables.values() for row in rows]
    counts, snrs = _axes(all_rows)
    rendered_tables = []
    for label, rows in tables.items():
        by_key = {(row.observed_count, row.snr_db): row for row in rows}
        rendered_tables.append(
            {
                "label": label,
                "rows": [
                    {
                        "observed_count": count,
                        "cells": [
                            format_nmse_cell(by_key[(count, snr)].nmse_db) if (count, snr) in by_key else "-"
                            for snr in snrs
                        ],
                    }
                    for count in counts
                ],
            }
        )
    html = NMSE_REPORT_TEMPLATE.render(
        title=title,
        grid=grid,
        m_t=m_t,
        config_hash=config_hash,
        snrs=[f"{snr:g}" for snr in snrs],
        tables=rendered_tables,
        figure=figure.name if figure is not None else None,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_text(html, encoding="utf-8")
    except OSError as exc:
        logging.exception("Failed to write report %s", path)
        raise DataError(f"cannot write report {path}: {exc}") from exc
    return path


def make_row(observed_count: int, snr_db: float, value: float) -> NmseRow:
    return NmseRow(observed_count=observed_count, snr_db=snr_db, nmse=value, nmse_db=to_db(value))
