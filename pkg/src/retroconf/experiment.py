"""Streaming driver: fit on the initial segment, then predict / observe / update."""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from retroconf import alpha_control
from retroconf.alpha_control import Feedback, make_controller
from retroconf.conformal import (
    FW_LEVELS,
    ONE_MINUS_ALPHA,
    OUT_OF_RANGE,
    STANDARD,
    ForwardCalibration,
    JackknifePlus,
)
from retroconf.datagen import Stream
from retroconf.errors import NumericalError, UsageError
from retroconf.evaluation import LOCAL_WINDOW, MetricsRow, RunSummary, summarize
from retroconf.kernel import KINDS, RBF, KernelSpec
from retroconf.online_krr import WindowState, loo_cv_select, median_sq_distance

log = logging.getLogger(__name__)

RETRO_ADJ = "retro_adj"
FW_KRR = "fw_krr"
STRATEGIES = (RETRO_ADJ, FW_KRR)

DEFAULT_RIDGE_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
DEFAULT_BANDWIDTH_MULTIPLIERS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass
class ExperimentConfig:
    strategy: str = RETRO_ADJ
    controller: str = "dtaci"
    kernel: str = RBF
    ridge: float | None = None
    bandwidth_sq: float | None = None
    ridge_grid: tuple = DEFAULT_RIDGE_GRID
    bandwidth_grid: tuple | None = None
    window: float = 250
    t_init: int = 250
    alpha: float = 0.1
    alpha_1: float | None = None
    gamma: float = alpha_control.DEFAULT_GAMMA
    gammas: tuple = alpha_control.DEFAULT_GAMMA_GRID
    horizon: int | None = None
    lifetime_mult: int = alpha_control.DEFAULT_LIFETIME
    saocp_sampling: bool = False
    fw_level: str = ONE_MINUS_ALPHA
    out_of_range: str = STANDARD
    refactor_every: int | None = None
    local_window: int = LOCAL_WINDOW
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UsageError(f"strategy must be one of {STRATEGIES}")
        if self.controller not in alpha_control.CONTROLLERS:
            raise UsageError(f"controller must be one of {alpha_control.CONTROLLERS}")
        if self.kernel not in KINDS:
            raise UsageError(f"kernel must be one of {KINDS}")
        if not 0 < self.alpha < 1:
            raise UsageError("alpha must lie in (0, 1)")
        if not self.window >= 2:
            raise UsageError("window must be at least 2")
        if self.t_init < 2:
            raise UsageError("t_init must be at least 2")
        if self.fw_level not in FW_LEVELS:
            raise UsageError(f"fw_level must be one of {FW_LEVELS}")
        if self.out_of_range not in OUT_OF_RANGE:
            raise UsageError(f"out_of_range must be one of {OUT_OF_RANGE}")

    def with_(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)


@dataclass
class RunResult:
    rows: list[MetricsRow]
    summary: RunSummary
    fitted: np.ndarray
    ridge: float
    kernel: KernelSpec
    step_seconds: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def resolve_kernel(config: ExperimentConfig, X0, y0) -> tuple[KernelSpec, float]:
    """Use the configured hyperparameters, filling any gaps by LOO-CV on the initial data."""
    if config.kernel == RBF:
        if config.ridge is not None and config.bandwidth_sq is not None:
            return KernelSpec.rbf(config.bandwidth_sq), float(config.ridge)
        ridges = (config.ridge,) if config.ridge is not None else config.ridge_grid
        if config.bandwidth_sq is not None:
            bws = (config.bandwidth_sq,)
        elif config.bandwidth_grid:
            bws = config.bandwidth_grid
        else:
            med = median_sq_distance(X0)
            bws = tuple(m * med for m in DEFAULT_BANDWIDTH_MULTIPLIERS)
        sel = loo_cv_select(X0, y0, RBF, ridges, bws)
        return KernelSpec.rbf(sel.bandwidth_sq), sel.ridge
    if config.ridge is not None:
        return KernelSpec.ntk(), float(config.ridge)
    sel = loo_cv_select(X0, y0, config.kernel, config.ridge_grid)
    return KernelSpec.ntk(), sel.ridge


def initial_slice(t_init: int, window: float) -> slice:
    """Active set just before the first prediction: the last ``window + 1`` initial points."""
    if math.isinf(window):
        return slice(0, t_init)
    return slice(max(0, t_init - int(window) - 1), t_init)


def run_experiment(config: ExperimentConfig, stream: Stream, *, timed: bool = False,
                   rng: np.random.Generator | None = None, kernels=None) -> RunResult:
    if len(stream) <= config.t_init:
        raise UsageError(f"stream has {len(stream)} records; need more than t_init={config.t_init}")
    X, Y = stream.X, stream.y
    init = initial_slice(config.t_init, config.window)
    spec, ridge = resolve_kernel(config, X[: config.t_init], Y[: config.t_init])
    state = WindowState.fit(X[init], Y[init], spec, ridge, config.window,
                            refactor_every=config.refactor_every, kernels=kernels)

    horizon = config.horizon or (len(stream) - config.t_init)
    if config.saocp_sampling and rng is None:
        rng = np.random.default_rng(config.seed)
    controller = make_controller(
        config.controller, config.alpha, gamma=config.gamma, gammas=config.gammas,
        horizon=horizon, lifetime_mult=config.lifetime_mult, alpha_1=config.alpha_1,
        rng=rng if config.saocp_sampling else None,
    )

    forward = config.strategy == FW_KRR
    residuals: deque | None = None
    if forward:
        # the forward calibration set starts from the initial fit's LOO residuals, then is never revised
        residuals = deque(state.loo_residuals().tolist())

    rows: list[MetricsRow] = []
    fitted = np.empty(len(stream) - config.t_init)
    seconds = np.empty(len(stream) - config.t_init) if timed else np.empty(0)
    for j, idx in enumerate(range(config.t_init, len(stream))):
        t = int(stream.t[idx])
        x, y = X[idx], float(Y[idx])
        start = time.perf_counter() if timed else 0.0
        try:
            k = state.kernel_vector(x)
            if forward:
                fhat = state.predict(x, k)
                cal = ForwardCalibration(fhat, residuals, config.fw_level, config.out_of_range)
            else:
                fhat, pred, err = state.loo_terms(x, k)
                cal = JackknifePlus(pred, np.abs(err), fhat, config.out_of_range)
            interval = controller.propose(cal.interval)
            alpha_used = controller.alpha_t
            covered = interval.contains(y)
            beta = cal.beta(y) if controller.needs_beta else None
            controller.update(Feedback(0 if covered else 1, beta, y))
            evict = state.full
            state.advance(x, y, k)
            if forward:
                residuals.append(abs(y - fhat))
                if evict:
                    residuals.popleft()
        except NumericalError as exc:
            exc.step = t
            raise
        if timed:
            seconds[j] = time.perf_counter() - start
        fitted[j] = fhat
        rows.append(MetricsRow(
            t=t, strategy=config.strategy, controller=config.controller,
            alpha_t=float(alpha_used), lo=interval.lo, hi=interval.hi,
            width=interval.width, covered=int(covered), beta_t=beta, kind=interval.kind,
        ))
    summary = summarize(rows, config.local_window)
    return RunResult(rows, summary, fitted, ridge, spec, seconds)
