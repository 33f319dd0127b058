"""Straight-line reference versions of the expert-based controllers.

Plain lists and loops, written directly from the algorithm listings and kept
independent of the package code. Each returns the sequence of proposed levels
for a scripted sequence of feedback.
"""

import math


def pin(theta, beta, alpha):
    d = beta - theta
    return alpha * d - min(0.0, d)


def dtaci(alpha, gammas, betas, horizon, alpha_1=None):
    K = len(gammas)
    levels = [alpha if alpha_1 is None else alpha_1] * K
    w = [1.0 / K] * K
    sigma = 1.0 / (2 * horizon)
    past = []
    out = []
    for beta in betas:
        total = sum(w)
        p = [wk / total for wk in w]
        a_t = sum(levels[k] * p[k] for k in range(K))
        out.append(a_t)
        recent = past[-horizon:]
        eta = math.sqrt((math.log(K * horizon) + 2) / max(sum(recent), 1e-8))
        losses = [pin(levels[k], beta, alpha) for k in range(K)]
        # subtracting the smallest loss rescales all weights equally and avoids underflow
        low = min(losses)
        wbar = [w[k] * math.exp(-eta * (losses[k] - low)) for k in range(K)]
        W = sum(wbar)
        w = [(1 - sigma) * wbar[k] + W * sigma / K for k in range(K)]
        past.append(pin(a_t, beta, alpha))
        for k in range(K):
            err = 1 if beta < levels[k] else 0
            levels[k] = levels[k] + gammas[k] * (alpha - err)
    return out


class RefBOA:
    def __init__(self, K, tau):
        self.K = K
        self.tau = tau
        self.cum = [0.0] * K
        self.sq = [0.0] * K
        self.eta = [0.0] * K
        self.E = 0.0
        self.w = [1.0 / K] * K

    def forecast(self, xs, fallback=min):
        live = [k for k in range(self.K) if math.isfinite(xs[k])]
        if not live:
            return fallback(xs)
        tot = sum(self.w[k] for k in live)
        if tot > 0:
            return sum(self.w[k] * xs[k] for k in live) / tot
        return sum(xs[k] for k in live) / len(live)

    def learn(self, xs, y):
        live = [k for k in range(self.K) if math.isfinite(xs[k])]
        if not live:
            return
        f = self.forecast(xs)
        g = (1.0 if y < f else 0.0) - self.tau
        for k in range(self.K):
            l = g * (xs[k] - f) if k in live else 0.0
            self.cum[k] += l * (1 + self.eta[k] * l)
            self.sq[k] += l * l
            self.E = max(self.E, abs(l))
        if self.E == 0.0:
            return
        for k in range(self.K):
            if self.K == 1 or self.sq[k] == 0.0:
                self.eta[k] = 1 / (2 * self.E)
            else:
                self.eta[k] = min(1 / (2 * self.E), math.sqrt(math.log(self.K) / self.sq[k]))
        logs = [math.log(self.eta[k]) - self.eta[k] * self.cum[k] for k in range(self.K)]
        top = max(logs)
        raw = [math.exp(v - top) for v in logs]
        s = sum(raw)
        self.w = [r / s for r in raw]


def agaci(alpha, gammas, builders, ys, alpha_1=None):
    """``builders[t]`` maps a level to ``(lo, hi)``; returns the aggregated bounds per step."""
    K = len(gammas)
    levels = [alpha if alpha_1 is None else alpha_1] * K
    lower = RefBOA(K, (1 - alpha) / 2)
    upper = RefBOA(K, 1 - (1 - alpha) / 2)
    out = []
    for build, y in zip(builders, ys):
        bounds = [build(a) for a in levels]
        los = [b[0] for b in bounds]
        his = [b[1] for b in bounds]
        out.append((lower.forecast(los, min), upper.forecast(his, max)))
        for k in range(K):
            err = 0 if los[k] <= y <= his[k] else 1
            levels[k] = levels[k] + gammas[k] * (alpha - err)
        lower.learn(los, y)
        upper.learn(his, y)
    return out


def _life(i, g):
    n = 0
    while i % (2 ** (n + 1)) == 0:
        n += 1
    return g * 2 ** n


def saocp(alpha, gamma, g, betas, alpha_1=None):
    """Returns (levels, active sets) per step."""
    start = alpha if alpha_1 is None else alpha_1
    level, gsq, w, gsum, wgsum = {}, {}, {}, {}, {}
    prev = start
    out, actives = [], []
    for t, beta in enumerate(betas, start=1):
        level[t], gsq[t], w[t], gsum[t], wgsum[t] = prev, 0.0, 0.0, 0.0, 0.0
        active = [i for i in range(1, t + 1) if t - _life(i, g) < i <= t]
        actives.append(active)
        prior = {i: 1.0 / (i ** 2 * (1 + math.floor(math.log2(i)))) for i in active}
        z = sum(prior.values())
        prior = {i: v / z for i, v in prior.items()}
        phat = {i: prior[i] * max(0.0, w[i]) for i in active}
        s = sum(phat.values())
        p = {i: v / s for i, v in phat.items()} if s > 0 else prior
        a_t = 0.0 if t == 1 else sum(p[i] * level[i] for i in active)
        out.append(a_t)
        for i in active:
            own = pin(level[i], beta, alpha)
            grad = (1.0 if beta < level[i] else 0.0) - alpha
            gsq[i] += grad * grad
            level[i] = level[i] - gamma * grad / math.sqrt(gsq[i])
            gi = pin(a_t, beta, alpha) - own
            if w[i] <= 0:
                gi = max(0.0, gi)
            gsum[i] += gi
            wgsum[i] += w[i] * gi
            w[i] = gsum[i] / (t - i + 1) * (1 + wgsum[i])
        prev = a_t
    return out, actives
