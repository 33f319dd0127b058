"""File formats: per-step CSV, summary JSON, local-curve CSV, SVG plots, CSV input.

Everything written here is a pure function of its inputs, so identical runs
produce byte-identical files. Floats are written with ``repr`` (shortest
round-trip form); infinite endpoints appear as ``inf`` / ``-inf``. An empty
interval is written as ``lo=inf, hi=-inf`` with width 0.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from retroconf.errors import UsageError

ROWS_HEADER = ("t", "strategy", "controller", "alpha_t", "lo", "hi", "width", "covered", "beta_t")
CURVES_HEADER = ("t", "loc_coverage", "loc_width")
SHIFT_MARKER = 251


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _row_cells(row) -> list[str]:
    lo, hi = (math.inf, -math.inf) if row.kind == "empty" else (row.lo, row.hi)
    return [
        fmt(row.t), row.strategy, row.controller, fmt(row.alpha_t), fmt(lo), fmt(hi),
        fmt(row.width), fmt(row.covered), fmt(row.beta_t),
    ]


def write_rows(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROWS_HEADER)
        for row in rows:
            writer.writerow(_row_cells(row))


def write_curves(path, t, coverage, width) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVES_HEADER)
        for row in zip(t, coverage, width):
            writer.writerow([fmt(v) for v in row])


def read_curves(path):
    """Inverse of :func:`write_curves`: ``(t, coverage, width)`` arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CURVES_HEADER:
            raise UsageError(f"{path}: not a local-curve file (header {header})")
        data = [[float(c) for c in row] for row in reader if row]
    arr = np.array(data, dtype=float).reshape(-1, 3)
    return arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2]


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_json_safe(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def plot_curves(out_dir, series, window: int, shift_at: int | None = SHIFT_MARKER) -> list[Path]:
    """One SVG per metric. ``series`` maps a label to ``(t, coverage, width)``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "retroconf", "svg.fonttype": "none"}):
        for idx, (name, ylabel) in enumerate([("loc_coverage", "LocCov"), ("loc_width", "LocWidth")]):
            fig, ax = plt.subplots(figsize=(6.4, 3.6))
            for label, curves in series.items():
                t, values = curves[0], np.asarray(curves[idx + 1], dtype=float)
                ax.plot(t, np.where(np.isfinite(values), values, np.nan), label=label, linewidth=1.2)
            if shift_at is not None:
                ax.axvline(shift_at, color="grey", linestyle="--", linewidth=0.8)
            ax.set_xlabel("t")
            ax.set_ylabel(f"{ylabel} ({window}-step window)")
            ax.legend(loc="best", fontsize="small")
            fig.tight_layout()
            path = out_dir / f"{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths


# -- CSV input ------------------------------------------------------------------


def read_table(path, columns=None) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a headed CSV; the requested columns must parse as finite numbers.

    Errors name the missing column, or the line number and column of the
    first non-numeric cell.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise UsageError(f"{path}: empty file or missing header")
        header = [h.strip() for h in header]
        wanted = list(header) if columns is None else list(columns)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise UsageError(f"{path}: missing column(s): {', '.join(missing)}")
        index = {c: header.index(c) for c in wanted}
        values = {c: [] for c in wanted}
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            line = reader.line_num
            if len(row) != len(header):
                raise UsageError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
            for c, j in index.items():
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise UsageError(f"{path}: line {line}, column {c!r}: {cell!r} is not numeric") from None
                if not math.isfinite(v):
                    raise UsageError(f"{path}: line {line}, column {c!r}: {cell!r} is not finite")
                values[c].append(v)
    return header, {c: np.array(v, dtype=float) for c, v in values.items()}
