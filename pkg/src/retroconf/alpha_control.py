"""Adaptive miscoverage controllers.

Every controller proposes an interval through :meth:`Controller.propose`,
given a builder ``alpha -> PredictionInterval``, and then learns from a
:class:`Feedback` via :meth:`Controller.update`.

* :class:`ACI`: fixed-step update ``a <- a + gamma * (alpha - err)``.
* :class:`SFOGD`: scale-free gradient step on the pinball loss.
* :class:`DtACI`: exponentially reweighted ACI experts with a grid of steps.
* :class:`AgACI`: ACI experts whose interval bounds are aggregated by two
  Bernstein online aggregation (BOA) learners.
* :class:`SAOCP`: SFOGD experts with geometric lifetimes, combined by
  coin-betting weights.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from retroconf.conformal import PredictionInterval
from retroconf.errors import UsageError

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.005
DEFAULT_GAMMA_GRID = (0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128)
DEFAULT_LIFETIME = 8
DEFAULT_HORIZON = 750
ETA_FLOOR = 1e-8


def pinball(theta: float, beta: float, alpha: float) -> float:
    """Pinball loss ``alpha*(beta-theta) - min(0, beta-theta)``."""
    d = beta - theta
    return alpha * d - min(0.0, d)


def pinball_subgrad(theta: float, beta: float, alpha: float) -> float:
    """Subgradient in ``theta``: ``1{beta < theta} - alpha`` (``-alpha`` at the kink)."""
    return (1.0 if beta < theta else 0.0) - alpha


@dataclass
class Feedback:
    err: int
    beta: float | None = None
    y: float | None = None


class Controller:
    name = "controller"
    needs_beta = False

    def __init__(self, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise UsageError(f"target alpha must lie in (0, 1), got {alpha}")
        self.alpha = float(alpha)

    @property
    def alpha_t(self) -> float:
        raise NotImplementedError

    def propose(self, build) -> PredictionInterval:
        return build(self.alpha_t)

    def update(self, feedback: Feedback) -> None:
        raise NotImplementedError


class ACI(Controller):
    name = "aci"

    def __init__(self, alpha: float = 0.1, gamma: float = DEFAULT_GAMMA, alpha_1: float | None = None):
        super().__init__(alpha)
        self.gamma = float(gamma)
        self.level = self.alpha if alpha_1 is None else float(alpha_1)

    @property
    def alpha_t(self) -> float:
        return self.level

    def update(self, feedback: Feedback) -> None:
        self.level += self.gamma * (self.alpha - feedback.err)


class SFOGD(Controller):
    name = "sfogd"
    needs_beta = True

    def __init__(self, alpha: float = 0.1, gamma: float = DEFAULT_GAMMA, alpha_1: float | None = None):
        super().__init__(alpha)
        self.gamma = float(gamma)
        self.level = self.alpha if alpha_1 is None else float(alpha_1)
        self.grad_sq_sum = 0.0

    @property
    def alpha_t(self) -> float:
        return self.level

    def step(self, beta: float) -> None:
        g = pinball_subgrad(self.level, beta, self.alpha)
        self.grad_sq_sum += g * g
        if self.grad_sq_sum > 0.0:
            self.level -= self.gamma * g / math.sqrt(self.grad_sq_sum)

    def update(self, feedback: Feedback) -> None:
        self.step(feedback.beta)


class DtACI(Controller):
    """Exponentially reweighted ACI experts.

    ``horizon`` plays the role of ``L``: it sets ``sigma = 1/(2L)`` and the
    trailing window of aggregate pinball losses in the ``eta`` schedule.
    Weights are renormalized every step (proposals are unchanged by this).
    """

    name = "dtaci"
    needs_beta = True

    def __init__(self, alpha: float = 0.1, gammas=DEFAULT_GAMMA_GRID, horizon: int = DEFAULT_HORIZON,
                 alpha_1: float | None = None, sigma: float | None = None, eta: float | None = None):
        super().__init__(alpha)
        self.gammas = np.asarray(gammas, dtype=float)
        if self.gammas.ndim != 1 or self.gammas.size == 0:
            raise UsageError("DtACI needs at least one step size")
        if horizon < 1:
            raise UsageError("DtACI horizon must be positive")
        k = self.gammas.size
        start = self.alpha if alpha_1 is None else float(alpha_1)
        self.horizon = int(horizon)
        self.sigma = 1.0 / (2 * self.horizon) if sigma is None else float(sigma)
        self.fixed_eta = eta
        self.levels = np.full(k, start)
        self.weights = np.full(k, 1.0 / k)
        self.losses = deque(maxlen=self.horizon)
        self._proposed = start

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def alpha_t(self) -> float:
        return float(self.levels @ self.probabilities)

    def eta(self) -> float:
        if self.fixed_eta is not None:
            return float(self.fixed_eta)
        k = self.gammas.size
        denom = max(sum(self.losses), ETA_FLOOR)
        return math.sqrt((math.log(k * self.horizon) + 2.0) / denom)

    def propose(self, build) -> PredictionInterval:
        self._proposed = self.alpha_t
        return build(self._proposed)

    def update(self, feedback: Feedback) -> None:
        beta = feedback.beta
        k = self.gammas.size
        expert_loss = np.array([pinball(a, beta, self.alpha) for a in self.levels])
        logw = np.log(self.weights) - self.eta() * expert_loss
        if not np.all(np.isfinite(logw)):
            log.warning("DtACI weights became non-finite; resetting to uniform")
            wbar = np.full(k, 1.0 / k)
        else:
            wbar = np.exp(logw - logw.max())
            wbar /= wbar.sum()
        self.weights = (1.0 - self.sigma) * wbar + self.sigma / k
        self.losses.append(pinball(self._proposed, beta, self.alpha))
        expert_err = (beta < self.levels).astype(float)
        self.levels = self.levels + self.gammas * (self.alpha - expert_err)


class BOA:
    """Bernstein online aggregation of scalar expert forecasts under pinball loss.

    Uses the linearized (gradient-trick) losses and per-expert adaptive
    learning rates ``eta_j = min(1/(2E), sqrt(log(K)/V_j))`` with ``E`` the
    running maximum absolute linearized loss and ``V_j`` its squared sum.
    Weights are ``pi_j ∝ eta_j * exp(-eta_j * L_j)`` where
    ``L_j = sum_s l_js * (1 + eta_j,s-1 * l_js)``.
    """

    def __init__(self, n_experts: int, tau: float):
        if n_experts < 1:
            raise UsageError("BOA needs at least one expert")
        self.k = n_experts
        self.tau = float(tau)
        self.cum = np.zeros(n_experts)
        self.sq = np.zeros(n_experts)
        self.eta = np.zeros(n_experts)
        self.bound = 0.0
        self.weights = np.full(n_experts, 1.0 / n_experts)

    def _renormalized(self, mask: np.ndarray) -> np.ndarray:
        w = np.where(mask, self.weights, 0.0)
        total = w.sum()
        if total > 0:
            return w / total
        return mask / mask.sum()

    def predict(self, forecasts, mask=None) -> float:
        x = np.asarray(forecasts, dtype=float)
        mask = np.isfinite(x) if mask is None else mask
        if not mask.any():
            raise UsageError("BOA needs at least one finite forecast")
        w = self._renormalized(mask)
        return float(np.where(mask, x, 0.0) @ w)

    def update(self, forecasts, y: float, mask=None) -> None:
        x = np.asarray(forecasts, dtype=float)
        mask = np.isfinite(x) if mask is None else mask
        if not mask.any():
            return
        pred = self.predict(x, mask)
        grad = (1.0 if y < pred else 0.0) - self.tau
        lin = np.where(mask, grad * (np.where(mask, x, pred) - pred), 0.0)
        self.cum += lin * (1.0 + self.eta * lin)
        self.sq += lin * lin
        self.bound = max(self.bound, float(np.max(np.abs(lin))))
        if self.bound == 0.0:
            return
        with np.errstate(divide="ignore"):
            rate = np.sqrt(math.log(self.k) / self.sq) if self.k > 1 else np.full(self.k, np.inf)
        self.eta = np.minimum(1.0 / (2.0 * self.bound), rate)
        with np.errstate(divide="ignore"):
            logw = np.log(self.eta) - self.eta * self.cum
        logw -= logw.max()
        w = np.exp(logw)
        self.weights = w / w.sum()


def _bounds(interval: PredictionInterval) -> tuple[float, float]:
    if interval.kind == "empty":
        return math.inf, -math.inf
    return interval.lo, interval.hi


class AgACI(Controller):
    """ACI experts aggregated bound-wise by two BOA learners.

    Experts whose bound is infinite (or whose interval is empty) are left out
    of that bound's aggregation for the step.
    """

    name = "agaci"

    def __init__(self, alpha: float = 0.1, gammas=DEFAULT_GAMMA_GRID, alpha_1: float | None = None):
        super().__init__(alpha)
        self.experts = [ACI(alpha, g, alpha_1) for g in gammas]
        if not self.experts:
            raise UsageError("AgACI needs at least one step size")
        k = len(self.experts)
        self.lower = BOA(k, (1.0 - self.alpha) / 2.0)
        self.upper = BOA(k, 1.0 - (1.0 - self.alpha) / 2.0)
        self._intervals: list[PredictionInterval] = []
        self._excluded = 0

    @property
    def expert_levels(self) -> np.ndarray:
        return np.array([e.level for e in self.experts])

    @property
    def alpha_t(self) -> float:
        w = 0.5 * (self.lower.weights + self.upper.weights)
        return float(self.expert_levels @ w)

    def propose(self, build) -> PredictionInterval:
        self._intervals = [build(e.level) for e in self.experts]
        return self.aggregate(self._intervals)

    def aggregate(self, intervals) -> PredictionInterval:
        lows, highs = zip(*(_bounds(iv) for iv in intervals))
        lows = np.array(lows)
        highs = np.array(highs)
        lo_mask = np.isfinite(lows)
        hi_mask = np.isfinite(highs)
        skipped = int((~lo_mask).sum() + (~hi_mask).sum())
        if skipped:
            self._excluded += skipped
            log.debug("AgACI: %d non-finite expert bounds excluded", skipped)
        lo = self.lower.predict(lows, lo_mask) if lo_mask.any() else float(np.min(lows))
        hi = self.upper.predict(highs, hi_mask) if hi_mask.any() else float(np.max(highs))
        return PredictionInterval.bounded(lo, hi)

    def update(self, feedback: Feedback) -> None:
        if feedback.y is None:
            raise UsageError("AgACI needs the observed response")
        y = float(feedback.y)
        lows, highs = zip(*(_bounds(iv) for iv in self._intervals))
        self.lower.update(lows, y)
        self.upper.update(highs, y)
        for expert, iv in zip(self.experts, self._intervals):
            expert.update(Feedback(0 if iv.contains(y) else 1))


def lifetime(i: int, g: int) -> int:
    """``g`` times the largest power of two dividing ``i``."""
    return g * (i & -i)


def saocp_prior(i: int) -> float:
    """Unnormalized prior ``i^-2 / (1 + floor(log2 i))``."""
    return 1.0 / (i * i * i.bit_length())


@dataclass
class _SaocpExpert:
    birth: int
    learner: SFOGD
    weight: float = 0.0
    grad_sum: float = 0.0
    weighted_grad_sum: float = 0.0


class SAOCP(Controller):
    """Strongly adaptive combination of SFOGD experts with lifetimes ``g * 2^v(i)``.

    The default output is the probability-weighted average of active expert
    levels. ``rng`` switches to the sampling variant: one expert is drawn
    from the same probabilities each step.
    """

    name = "saocp"
    needs_beta = True

    def __init__(self, alpha: float = 0.1, gamma: float = DEFAULT_GAMMA, lifetime_mult: int = DEFAULT_LIFETIME,
                 alpha_1: float | None = None, rng: np.random.Generator | None = None):
        super().__init__(alpha)
        if lifetime_mult < 1:
            raise UsageError("lifetime multiplier must be a positive integer")
        self.gamma = float(gamma)
        self.g = int(lifetime_mult)
        self.rng = rng
        self.t = 0
        self.prev = self.alpha if alpha_1 is None else float(alpha_1)
        self.experts: dict[int, _SaocpExpert] = {}
        self._proposed = self.prev
        self._probs: dict[int, float] = {}

    def active(self, t: int) -> list[int]:
        return sorted(i for i in self.experts if t - lifetime(i, self.g) < i <= t)

    def _begin_step(self) -> None:
        self.t += 1
        t = self.t
        self.experts[t] = _SaocpExpert(t, SFOGD(self.alpha, self.gamma, self.prev))
        for i in [i for i in self.experts if not (t - lifetime(i, self.g) < i)]:
            del self.experts[i]
        ids = self.active(t)
        prior = np.array([saocp_prior(i) for i in ids])
        prior /= prior.sum()
        raw = prior * np.array([max(0.0, self.experts[i].weight) for i in ids])
        total = raw.sum()
        probs = raw / total if total > 0 else prior
        self._probs = dict(zip(ids, probs))
        if t == 1:
            self._proposed = 0.0
        elif self.rng is not None:
            pick = ids[int(self.rng.choice(len(ids), p=probs))]
            self._proposed = self.experts[pick].learner.level
        else:
            self._proposed = float(sum(p * self.experts[i].learner.level for i, p in zip(ids, probs)))

    @property
    def alpha_t(self) -> float:
        return self._proposed

    @property
    def probabilities(self) -> dict[int, float]:
        return dict(self._probs)

    def propose(self, build) -> PredictionInterval:
        self._begin_step()
        return build(self._proposed)

    def update(self, feedback: Feedback) -> None:
        beta = feedback.beta
        t = self.t
        base = pinball(self._proposed, beta, self.alpha)
        for i in self.active(t):
            ex = self.experts[i]
            own = pinball(ex.learner.level, beta, self.alpha)
            ex.learner.step(beta)
            g = base - own
            if ex.weight <= 0:
                g = max(0.0, g)
            ex.grad_sum += g
            ex.weighted_grad_sum += ex.weight * g
            ex.weight = ex.grad_sum / (t - i + 1) * (1.0 + ex.weighted_grad_sum)
        self.prev = self._proposed


CONTROLLERS = ("aci", "agaci", "dtaci", "sfogd", "saocp")


def make_controller(name: str, alpha: float = 0.1, *, gamma: float = DEFAULT_GAMMA,
                    gammas=DEFAULT_GAMMA_GRID, horizon: int = DEFAULT_HORIZON,
                    lifetime_mult: int = DEFAULT_LIFETIME, alpha_1: float | None = None,
                    rng: np.random.Generator | None = None) -> Controller:
    if name == "aci":
        return ACI(alpha, gamma, alpha_1)
    if name == "sfogd":
        return SFOGD(alpha, gamma, alpha_1)
    if name == "dtaci":
        return DtACI(alpha, gammas, horizon, alpha_1)
    if name == "agaci":
        return AgACI(alpha, gammas, alpha_1)
    if name == "saocp":
        return SAOCP(alpha, gamma, lifetime_mult, alpha_1, rng)
    raise UsageError(f"unknown controller {name!r}; expected one of {CONTROLLERS}")
