"""Seeded synthetic streams with an abrupt shift, and lag embedding for series.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence``;
replication ``r`` of base seed ``s`` uses ``SeedSequence(s, spawn_key=(r,))``,
so streams are reproducible across runs and machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from retroconf.errors import UsageError

LINEAR = "linear"
BUMP = "bump"
SETTINGS = {1: LINEAR, 2: BUMP, LINEAR: LINEAR, BUMP: BUMP}

SHIFT_AT = 251

COEF_BEFORE = np.array([1.0, 0.8, 0.0, 0.0, 0.5, 0.0, 0.3, 0.0, 0.0, 0.2])
COEF_AFTER = np.array([0.0, -1.2, 0.7, 0.4, 0.0, 0.0, 0.9, 0.0, -0.6, 0.0])

BUMP_BEFORE = (1.0, 0.0, np.array([0.25, 0.25, 0.25]))  # scale, offset, centre
BUMP_AFTER = (-1.0, 0.4, np.array([0.3, 0.4, 0.5]))


def make_rng(seed: int, replication: int | None = None) -> np.random.Generator:
    if replication is None:
        ss = np.random.SeedSequence(int(seed))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class StreamRecord:
    t: int
    x: np.ndarray
    y: float


@dataclass
class Stream:
    """Observations in time order; ``t`` is 1-based."""

    X: np.ndarray
    y: np.ndarray
    t: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.y = np.ascontiguousarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise UsageError(f"{self.X.shape[0]} feature rows but {self.y.size} responses")
        if self.t is None:
            self.t = np.arange(1, self.y.size + 1)
        else:
            self.t = np.asarray(self.t, dtype=np.int64)
            if self.t.size != self.y.size or np.any(np.diff(self.t) <= 0):
                raise UsageError("time stamps must be strictly increasing and match the data")

    def __len__(self) -> int:
        return self.y.size

    def __iter__(self):
        for t, x, y in zip(self.t, self.X, self.y):
            yield StreamRecord(int(t), x, float(y))

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SyntheticConfig:
    setting: str = LINEAR
    T: int = 1000
    t_init: int = 250
    noise_variance: float = 0.5
    seed: int = 0
    noise_sd: float | None = None

    def __post_init__(self):
        if self.setting not in (LINEAR, BUMP):
            raise UsageError(f"unknown setting {self.setting!r}")
        if not 0 < self.t_init < self.T:
            raise UsageError("need 0 < t_init < T")
        if self.noise_variance < 0 or (self.noise_sd is not None and self.noise_sd < 0):
            raise UsageError("noise scale must be non-negative")

    @property
    def sd(self) -> float:
        return self.noise_sd if self.noise_sd is not None else math.sqrt(self.noise_variance)


def wendland_bump(x, c) -> float:
    """Compactly supported bump ``(1-r)_+^6 (35 r^2 + 18 r + 3)`` with ``r = ||x - c||``."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(c, dtype=float)))
    return max(0.0, 1.0 - r) ** 6 * (35.0 * r * r + 18.0 * r + 3.0)


def _wendland_rows(X: np.ndarray, c: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(X - c, axis=1)
    return np.clip(1.0 - r, 0.0, None) ** 6 * (35.0 * r * r + 18.0 * r + 3.0)


def linear_mean(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    before = t < SHIFT_AT
    return np.where(before, X @ COEF_BEFORE, X @ COEF_AFTER)


def bump_mean(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    a1, b1, c1 = BUMP_BEFORE
    a2, b2, c2 = BUMP_AFTER
    return np.where(t < SHIFT_AT, a1 * _wendland_rows(X, c1) + b1, a2 * _wendland_rows(X, c2) + b2)


def gen_linear_shift(config: SyntheticConfig, rng: np.random.Generator | None = None) -> Stream:
    rng = rng or make_rng(config.seed)
    t = np.arange(1, config.T + 1)
    X = rng.standard_normal((config.T, COEF_BEFORE.size))
    noise = rng.standard_normal(config.T) * config.sd
    return Stream(X, linear_mean(X, t) + noise, t)


def gen_bump_shift(config: SyntheticConfig, rng: np.random.Generator | None = None) -> Stream:
    rng = rng or make_rng(config.seed)
    t = np.arange(1, config.T + 1)
    X = rng.random((config.T, 3))
    noise = rng.standard_normal(config.T) * config.sd
    return Stream(X, bump_mean(X, t) + noise, t)


def generate(config: SyntheticConfig, rng: np.random.Generator | None = None) -> Stream:
    if config.setting == LINEAR:
        return gen_linear_shift(config, rng)
    return gen_bump_shift(config, rng)


def lag_embed(series, p: int) -> Stream:
    """Records ``X_t = (Y_{t-1}, ..., Y_{t-p})`` -> ``Y_t`` for ``t = p+1 .. len(series)``."""
    s = np.asarray(series, dtype=float).ravel()
    if p < 1:
        raise UsageError("lag order must be at least 1")
    if s.size <= p:
        raise UsageError(f"series of length {s.size} is too short for {p} lags")
    n = s.size - p
    X = np.empty((n, p))
    for j in range(p):
        X[:, j] = s[p - 1 - j : p - 1 - j + n]
    return Stream(X, s[p:], np.arange(p + 1, s.size + 1))
