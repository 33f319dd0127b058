"""Per-step metrics, trailing-window curves and replication summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from retroconf.conformal import empirical_quantile
from retroconf.errors import UsageError

LOCAL_WINDOW = 250


@dataclass(frozen=True)
class MetricsRow:
    t: int
    strategy: str
    controller: str
    alpha_t: float
    lo: float
    hi: float
    width: float
    covered: int
    beta_t: float | None = None
    kind: str = "bounded"


def _trailing_mean(values: np.ndarray, window: int) -> np.ndarray:
    if window < 1:
        raise UsageError("window must be positive")
    if values.size < window:
        return np.empty(0)
    csum = np.concatenate([[0.0], np.cumsum(values, dtype=float)])
    return (csum[window:] - csum[:-window]) / window


def local_coverage(rows, window: int = LOCAL_WINDOW):
    """``(t, LocCov_t)`` for every t with a full trailing window behind it."""
    rows = list(rows)
    covered = np.array([r.covered for r in rows], dtype=np.int64)
    if covered.size < window:
        return np.empty(0, dtype=np.int64), np.empty(0)
    # integer prefix sums keep the telescoping identity exact
    csum = np.concatenate([[0], np.cumsum(covered)])
    vals = (csum[window:] - csum[:-window]) / window
    ts = np.array([r.t for r in rows[window - 1:]], dtype=np.int64)
    return ts, vals


def local_width(rows, window: int = LOCAL_WINDOW):
    """``(t, LocWidth_t)``; a window holding an infinite width yields ``inf``."""
    rows = list(rows)
    widths = np.array([r.width for r in rows], dtype=float)
    if widths.size < window:
        return np.empty(0, dtype=np.int64), np.empty(0)
    inf = ~np.isfinite(widths)
    finite = np.where(inf, 0.0, widths)
    vals = _trailing_mean(finite, window)
    n_inf = _trailing_mean(inf.astype(float), window) * window
    vals = np.where(n_inf > 0.5, math.inf, vals)
    ts = np.array([r.t for r in rows[window - 1:]], dtype=np.int64)
    return ts, vals


@dataclass
class RunSummary:
    mean_coverage: float
    mean_width: float
    n_steps: int
    n_infinite_width: int
    n_empty: int
    loc_t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)
    loc_coverage: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    loc_width: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def scalars(self) -> dict:
        out = asdict(self)
        for key in ("loc_t", "loc_coverage", "loc_width"):
            out.pop(key)
        return out


def summarize(rows, window: int = LOCAL_WINDOW) -> RunSummary:
    """Mean coverage over all rows; mean width over finite widths only."""
    rows = list(rows)
    if not rows:
        raise UsageError("no metrics rows to summarize")
    covered = np.array([r.covered for r in rows], dtype=float)
    widths = np.array([r.width for r in rows], dtype=float)
    finite = np.isfinite(widths)
    mean_width = float(widths[finite].mean()) if finite.any() else math.nan
    t, cov = local_coverage(rows, window)
    _, wid = local_width(rows, window)
    return RunSummary(
        mean_coverage=float(covered.mean()),
        mean_width=mean_width,
        n_steps=len(rows),
        n_infinite_width=int((~finite).sum()),
        n_empty=sum(1 for r in rows if r.kind == "empty"),
        loc_t=t,
        loc_coverage=cov,
        loc_width=wid,
    )


def _spread(values) -> dict:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return {"mean": math.nan, "q25": math.nan, "q75": math.nan}
    return {
        "mean": float(arr.mean()),
        "q25": empirical_quantile(arr, 0.25),
        "q75": empirical_quantile(arr, 0.75),
    }


def aggregate_replications(summaries) -> dict:
    """Across-replication mean and interquartile range of each scalar metric.

    Local curves are averaged pointwise when all replications share a time axis.
    """
    summaries = list(summaries)
    if not summaries:
        raise UsageError("need at least one run summary")
    report = {
        "n_replications": len(summaries),
        "mean_coverage": _spread([s.mean_coverage for s in summaries]),
        "mean_width": _spread([s.mean_width for s in summaries]),
        "n_infinite_width": _spread([s.n_infinite_width for s in summaries]),
        "n_empty": _spread([s.n_empty for s in summaries]),
    }
    axes = {tuple(s.loc_t.tolist()) for s in summaries}
    if len(axes) == 1 and summaries[0].loc_t.size:
        report["loc_t"] = summaries[0].loc_t
        report["loc_coverage"] = np.mean([s.loc_coverage for s in summaries], axis=0)
        report["loc_width"] = np.mean([s.loc_width for s in summaries], axis=0)
    return report
