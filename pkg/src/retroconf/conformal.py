"""Quantiles, prediction intervals and the two calibration schemes.

:class:`JackknifePlus` builds the retrospectively adjusted interval from the
leave-one-out predictions and residuals of the current window.
:class:`ForwardCalibration` is the baseline that centres the current fit on a
stored (never revised) set of absolute residuals.

Both expose ``interval(alpha)`` and ``beta(y)``; the latter is the largest
miscoverage level in ``[0, 1]`` whose interval still contains ``y``, computed
exactly against the same rank arithmetic that ``interval`` uses, so that
``interval(b).contains(y)`` holds iff ``b <= beta(y)`` for every float ``b``
in ``[0, 1]``. When no level in ``[0, 1]`` covers ``y`` (possible only for
the forward baseline, whose level-zero interval is bounded) ``beta`` is 0.

Out-of-range levels follow the self-correcting convention by default: a
negative level returns the whole real line and a level above one returns the
empty set. ``out_of_range="printed"`` swaps the two.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from retroconf.errors import UsageError

EMPTY = "empty"
BOUNDED = "bounded"
FULL = "full"

STANDARD = "standard"
PRINTED = "printed"
OUT_OF_RANGE = (STANDARD, PRINTED)

ONE_MINUS_ALPHA = "one-minus-alpha"
ONE_MINUS_HALF_ALPHA = "one-minus-half-alpha"
FW_LEVELS = (ONE_MINUS_ALPHA, ONE_MINUS_HALF_ALPHA)

# absorbs representation error in level * n so that e.g. (k/n) * n ranks as k
RANK_SLACK = 1e-9


@dataclass(frozen=True)
class PredictionInterval:
    kind: str
    lo: float = math.nan
    hi: float = math.nan

    @classmethod
    def empty(cls) -> PredictionInterval:
        return cls(EMPTY)

    @classmethod
    def full_line(cls) -> PredictionInterval:
        return cls(FULL, -math.inf, math.inf)

    @classmethod
    def bounded(cls, lo: float, hi: float) -> PredictionInterval:
        """Closed interval ``[lo, hi]``; normalizes ``lo > hi`` to empty and ``(-inf, inf)`` to the full line."""
        lo = float(lo)
        hi = float(hi)
        if lo > hi:
            return cls.empty()
        if lo == -math.inf and hi == math.inf:
            return cls.full_line()
        return cls(BOUNDED, lo, hi)

    @property
    def width(self) -> float:
        if self.kind == EMPTY:
            return 0.0
        if self.kind == FULL:
            return math.inf
        return self.hi - self.lo

    def contains(self, y: float) -> bool:
        if self.kind == EMPTY:
            return False
        if self.kind == FULL:
            return True
        return self.lo <= y <= self.hi

    def __contains__(self, y) -> bool:
        return self.contains(y)


def diam(interval: PredictionInterval) -> float:
    return interval.width


def quantile_rank(level: float, n: int) -> int:
    """Order-statistic index ``ceil(level * n)`` used by :func:`empirical_quantile`."""
    return math.ceil(level * n - RANK_SLACK)


def empirical_quantile(values, level: float) -> float:
    """The ``ceil(level*n)``-th smallest value; ``-inf`` below rank 1, ``+inf`` above rank n."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise UsageError("empirical quantile of an empty set")
    k = quantile_rank(level, arr.size)
    if k <= 0:
        return -math.inf
    if k > arr.size:
        return math.inf
    return float(np.partition(arr, k - 1)[k - 1])


_ONE_BITS = struct.unpack("<q", struct.pack("<d", 1.0))[0]


def _bits_to_float(bits: int) -> float:
    return struct.unpack("<d", struct.pack("<q", bits))[0]


def sup_covered(covered) -> float:
    """Largest float ``b`` in ``[0, 1]`` with ``covered(b)`` true.

    ``covered`` must be monotone (true on an initial segment). Bisects over
    the bit patterns of non-negative doubles, so the answer is exact.
    """
    if covered(1.0):
        return 1.0
    if not covered(0.0):
        return 0.0
    lo, hi = 0, _ONE_BITS
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if covered(_bits_to_float(mid)):
            lo = mid
        else:
            hi = mid
    return _bits_to_float(lo)


class _RankCalibration:
    """Shared logic: an interval family indexed by an integer rank."""

    n: int
    out_of_range: str

    def rank(self, alpha: float) -> int:
        raise NotImplementedError

    def interval_at_rank(self, k: int) -> PredictionInterval:
        raise NotImplementedError

    def min_covering_rank(self, y: float) -> int:
        """Smallest rank whose interval contains ``y`` (``n + 1`` means only the infinite one)."""
        raise NotImplementedError

    def _out_of_range(self, alpha: float) -> PredictionInterval | None:
        if alpha < 0:
            return PredictionInterval.full_line() if self.out_of_range == STANDARD else PredictionInterval.empty()
        if alpha > 1:
            return PredictionInterval.empty() if self.out_of_range == STANDARD else PredictionInterval.full_line()
        return None

    def interval(self, alpha: float) -> PredictionInterval:
        special = self._out_of_range(alpha)
        if special is not None:
            return special
        return self.interval_at_rank(self.rank(alpha))

    def covers(self, alpha: float, y: float) -> bool:
        return self.interval(alpha).contains(y)

    def beta(self, y: float) -> float:
        k_min = self.min_covering_rank(y)
        return sup_covered(lambda b: self.rank(b) >= k_min)


class JackknifePlus(_RankCalibration):
    """Jackknife+ interval from leave-one-out predictions at x and leave-one-out residuals."""

    def __init__(self, loo_pred, loo_resid, fhat: float = math.nan, out_of_range: str = STANDARD):
        pred = np.asarray(loo_pred, dtype=float).ravel()
        resid = np.asarray(loo_resid, dtype=float).ravel()
        if pred.size != resid.size or pred.size == 0:
            raise UsageError("need matching non-empty leave-one-out predictions and residuals")
        if out_of_range not in OUT_OF_RANGE:
            raise UsageError(f"out_of_range must be one of {OUT_OF_RANGE}")
        self.n = pred.size
        self.fhat = fhat
        self.out_of_range = out_of_range
        self.upper = np.sort(pred + resid)
        self.lower = np.sort(pred - resid)

    @classmethod
    def from_state(cls, state, x, k=None, out_of_range: str = STANDARD) -> JackknifePlus:
        if state.n < 2:
            raise UsageError("Jackknife+ needs at least two active points")
        fhat, pred, err = state.loo_terms(x, k)
        return cls(pred, np.abs(err), fhat, out_of_range)

    def rank(self, alpha: float) -> int:
        return quantile_rank((1.0 - alpha) * (1.0 + 1.0 / self.n), self.n)

    def interval_at_rank(self, k: int) -> PredictionInterval:
        if k <= 0:
            return PredictionInterval.empty()
        if k > self.n:
            return PredictionInterval.full_line()
        return PredictionInterval.bounded(self.lower[self.n - k], self.upper[k - 1])

    def min_covering_rank(self, y: float) -> int:
        ks = np.arange(1, self.n + 1)
        ok = (self.lower[self.n - ks] <= y) & (self.upper[ks - 1] >= y)
        hits = np.flatnonzero(ok)
        return int(ks[hits[0]]) if hits.size else self.n + 1


class ForwardCalibration(_RankCalibration):
    """``fhat +- quantile(residuals)``: the forward baseline with frozen residuals."""

    def __init__(self, fhat: float, abs_residuals, level: str = ONE_MINUS_ALPHA,
                 out_of_range: str = STANDARD):
        res = np.sort(np.asarray(abs_residuals, dtype=float).ravel())
        if res.size == 0:
            raise UsageError("forward calibration needs at least one residual")
        if level not in FW_LEVELS:
            raise UsageError(f"level must be one of {FW_LEVELS}")
        if out_of_range not in OUT_OF_RANGE:
            raise UsageError(f"out_of_range must be one of {OUT_OF_RANGE}")
        self.n = res.size
        self.fhat = float(fhat)
        self.residuals = res
        self.level = level
        self.out_of_range = out_of_range

    def rank(self, alpha: float) -> int:
        q = 1.0 - alpha if self.level == ONE_MINUS_ALPHA else 1.0 - alpha / 2.0
        return quantile_rank(q, self.n)

    def interval_at_rank(self, k: int) -> PredictionInterval:
        if k <= 0:
            return PredictionInterval.empty()
        if k > self.n:
            return PredictionInterval.full_line()
        r = self.residuals[k - 1]
        return PredictionInterval.bounded(self.fhat - r, self.fhat + r)

    def min_covering_rank(self, y: float) -> int:
        # same float comparisons as PredictionInterval.contains
        ok = (self.fhat - self.residuals <= y) & (y <= self.fhat + self.residuals)
        hits = np.flatnonzero(ok)
        return int(hits[0]) + 1 if hits.size else self.n + 1


def ra_interval(state, x, alpha_t: float, out_of_range: str = STANDARD) -> PredictionInterval:
    return JackknifePlus.from_state(state, x, out_of_range=out_of_range).interval(alpha_t)


def beta_t(state, x, y: float) -> float:
    return JackknifePlus.from_state(state, x).beta(y)


def fw_interval(fhat_at_x: float, abs_residuals, alpha_t: float, level: str = ONE_MINUS_ALPHA,
                out_of_range: str = STANDARD) -> PredictionInterval:
    return ForwardCalibration(fhat_at_x, abs_residuals, level, out_of_range).interval(alpha_t)
