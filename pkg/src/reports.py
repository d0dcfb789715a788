"""
Report and summary rendering.

Produces the plain-text `key = value` reports and comma-separated tables
written next to run outputs, plus Markdown summaries shown on the console.
"""

import csv
import io
import math
from pathlib import Path

import numpy as np

from .storage import atomic_write


def format_value(value) -> str:
    """Canonical text for a report value; floats use the shortest exact repr."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return ""
    return str(value)


def key_value_text(entries: dict) -> str:
    return "".join(f"{key} = {format_value(value)}\n" for key, value in entries.items())


def write_report(path: str | Path, entries: dict):
    """Write a `key = value` report, one entry per line, in insertion order."""
    atomic_write(path, key_value_text(entries).encode("utf-8"))


def csv_text(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(col)) for col in columns])
    return buffer.getvalue()


def write_table(path: str | Path, rows: list[dict], columns: list[str] | None = None):
    atomic_write(path, csv_text(rows, columns).encode("utf-8"))


def _fmt(x: float, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return f"{x:.{digits}f}"


def create_training_summary(rows: list[dict], info: dict, title: str = "Training") -> str:
    """
    Create a Markdown summary of a training log.

    Args:
        rows: TrainingLog.to_rows() output
        info: get_model_info() output

    Returns:
        Markdown string
    """
    if not rows:
        return f"# {title}\n\nNo epochs recorded."

    first, last = rows[0], rows[-1]
    lines = [f"# {title}\n"]
    lines.append(f"**Model**: {info.get('kind')} {info.get('input_size')} -> {info.get('layer_sizes')}")
    lines.append(f"**Parameters**: {info.get('num_parameters')}")
    lines.append(f"**Epochs**: {last['epoch']}\n")
    lines.append("| | objective | reconstruction | penalty |" + (" invariance |" if "invariance" in last else ""))
    lines.append("|---|---|---|---|" + ("---|" if "invariance" in last else ""))
    for label, row in (("initial", first), ("final", last)):
        cells = [_fmt(row["objective"]), _fmt(row["reconstruction"]), _fmt(row["penalty"], 6)]
        if "invariance" in row:
            cells.append(_fmt(row["invariance"], 6))
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def create_sampling_summary(rows: list[dict]) -> str:
    """Per-mode chain summary: mean post-burn-in reconstruction error and gap."""
    lines = ["# Sampling\n", "| mode | chains | mean recon error | cross-init gap |", "|---|---|---|---|"]
    for row in rows:
        lines.append(
            f"| {row['mode']} | {row['chains']} | {_fmt(row['mean_recon_error'])} "
            f"| {_fmt(row['cross_init_gap'])} |"
        )
    return "\n".join(lines)


def create_parzen_summary(rows: list[dict]) -> str:
    """Log-likelihood table; the +/- column is a standard error."""
    lines = [
        "# Parzen log-likelihood\n",
        "| source | samples | bandwidth | mean LL | std. error |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['source']} | {row['samples']} | {_fmt(row['bandwidth'])} "
            f"| {_fmt(row['mean_ll'], 2)} | {_fmt(row['stderr'], 2)} |"
        )
    return "\n".join(lines)


def create_sensitivity_summary(rows: list[dict], reference: str) -> str:
    lines = [
        "# Normalized sensitivity\n",
        f"Differences are paired against **{reference}**.\n",
        "| model | gamma | std. error | diff vs ref | diff std. error |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['model']} | {_fmt(row['gamma_bar'])} | {_fmt(row['gamma_stderr'])} "
            f"| {_fmt(row['diff_vs_ref'])} | {_fmt(row['diff_stderr'])} |"
        )
    return "\n".join(lines)


def create_probe_summary(rows: list[dict]) -> str:
    lines = [
        "# Linear probe (frozen features)\n",
        "_Proxy for supervised fine-tuning, not a reproduction of it._\n",
        "| model | test accuracy | train accuracy |",
        "|---|---|---|",
    ]
    for row in rows:
        lines.append(f"| {row['model']} | {_fmt(row['accuracy'])} | {_fmt(row['train_accuracy'])} |")
    return "\n".join(lines)


def create_spectrum_summary(stats: dict) -> str:
    lines = ["# Jacobian spectrum\n"]
    lines.append(f"**Points**: {stats['points']}")
    lines.append(f"**Mean top-{stats['top_m']} energy fraction**: {_fmt(stats['mean_energy'])}")
    lines.append(f"**Mean s1/s{stats['ratio_index']} ratio**: {_fmt(stats['mean_ratio'], 2)}")
    return "\n".join(lines)
