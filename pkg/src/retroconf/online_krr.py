"""Sliding-window kernel ridge regression with an incrementally maintained inverse.

:class:`WindowState` keeps the active points (oldest first), their Gram matrix
``K`` and ``Q = (K + ridge*I)^{-1}``. Points enter through a bordered rank-one
update and leave (oldest first) through a rank-one downdate, so a streaming
step costs O(n^2) and never factorizes a matrix. Leave-one-out residuals and
predictions come in closed form from ``Q``.

A window of size ``w`` holds ``w + 1`` points in steady state: the active set
at time ``t`` is ``{max(t-1-w, 1), ..., t-1}``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.linalg

from retroconf import _backend
from retroconf.errors import NumericalError, SelectionError, UsageError
from retroconf.kernel import NTK, RBF, KernelSpec, gram_matrix, gram_vector

log = logging.getLogger(__name__)

LEVERAGE_FLOOR = 1e-12
PIVOT_FLOOR = 1e-14

_factorizations = 0


def factorization_count() -> int:
    """Number of dense factorizations performed so far in this process."""
    return _factorizations


def _regularized_inverse(K: np.ndarray, ridge: float) -> np.ndarray:
    global _factorizations
    _factorizations += 1
    H = K + ridge * np.eye(K.shape[0])
    try:
        chol = scipy.linalg.cho_factor(H, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"regularized Gram matrix is not positive definite: {exc}") from exc
    Q = scipy.linalg.cho_solve(chol, np.eye(K.shape[0]))
    return 0.5 * (Q + Q.T)


@dataclass
class WindowState:
    spec: KernelSpec
    ridge: float
    window: float
    xs: np.ndarray
    ys: np.ndarray
    _K: np.ndarray | None = field(repr=False)
    Q: np.ndarray
    refactor_every: int | None = None
    kernels: object = field(default=None, repr=False)
    _norms: np.ndarray | None = field(default=None, repr=False)
    _steps: int = field(default=0, repr=False)
    _spare: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kernels is None:
            self.kernels = _backend.kernels
        if self.spec.kind == NTK and self._norms is None:
            self._norms = np.sqrt(np.einsum("ij,ij->i", self.xs, self.xs))

    # -- construction -------------------------------------------------------

    @classmethod
    def fit(cls, X, y, spec: KernelSpec, ridge: float, window=math.inf,
            refactor_every: int | None = None, kernels=None) -> WindowState:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.ascontiguousarray(y, dtype=float).ravel()
        if X.shape[0] == 0 or X.shape[0] != y.size:
            raise UsageError(f"need matching non-empty X and y, got {X.shape[0]} and {y.size} rows")
        if not ridge > 0 or not math.isfinite(ridge):
            raise UsageError(f"ridge must be positive and finite, got {ridge}")
        if not window >= 1:
            raise UsageError(f"window must be at least 1, got {window}")
        if X.shape[0] > window + 1:
            raise UsageError(f"{X.shape[0]} points exceed the window capacity {window + 1}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise UsageError("non-finite values in the initial data")
        K = gram_matrix(spec, X, kernels=kernels)
        Q = _regularized_inverse(K, ridge)
        return cls(spec, float(ridge), window, X, y, K, Q,
                   refactor_every=refactor_every, kernels=kernels)

    # -- queries --------------------------------------------------------------

    @property
    def K(self) -> np.ndarray:
        """Gram matrix of the active points, rebuilt on demand after updates."""
        if self._K is None:
            self._K = gram_matrix(self.spec, self.xs, kernels=self.kernels)
        return self._K

    @property
    def n(self) -> int:
        return self.ys.size

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    @property
    def full(self) -> bool:
        """True when the next append must first evict the oldest point."""
        return self.n >= self.window + 1

    def kernel_vector(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise UsageError(f"dimension mismatch: state has d={self.dim}, x has d={x.size}")
        return gram_vector(self.spec, self.xs, x, self._norms, kernels=self.kernels)

    def predict(self, x, k=None) -> float:
        if k is None:
            k = self.kernel_vector(x)
        return self.kernels.fitted_value(self.Q, self.ys, np.ascontiguousarray(k, dtype=float))

    def fitted(self) -> np.ndarray:
        """In-sample fitted values ``K Q y``."""
        return self.K @ (self.Q @ self.ys)

    def smoother_diag(self) -> np.ndarray:
        """Diagonal of the smoother matrix ``S = K Q``."""
        return np.einsum("ij,ji->i", self.K, self.Q)

    def _check_leverage(self):
        # 1 - S_ii equals ridge * Q_ii exactly when Q inverts K + ridge*I
        slack = self.ridge * np.diagonal(self.Q)
        if self.n < 2:
            raise UsageError("leave-one-out quantities need at least two active points")
        if not np.all(slack > LEVERAGE_FLOOR):
            i = int(np.argmin(slack))
            raise NumericalError(f"degenerate leverage at active index {i}: 1 - S_ii = {slack[i]:.3e}")

    def loo_errors(self) -> np.ndarray:
        """Signed leave-one-out errors ``Y_i - f_{-i}(X_i)``."""
        self._check_leverage()
        return self.kernels.loo_errors(self.Q, self.ys)

    def loo_residuals(self) -> np.ndarray:
        return np.abs(self.loo_errors())

    def loo_terms(self, x, k=None):
        """``(f(x), leave-one-out predictions at x, signed leave-one-out errors)``."""
        self._check_leverage()
        if k is None:
            k = self.kernel_vector(x)
        return self.kernels.loo_terms(self.Q, self.ys, k)

    def loo_predictions(self, x) -> np.ndarray:
        return self.loo_terms(x)[1]

    def inverse_error(self) -> float:
        """``max |Q (K + ridge I) - I|``; O(n^3), for invariant checks only."""
        H = self.K + self.ridge * np.eye(self.n)
        return float(np.max(np.abs(self.Q @ H - np.eye(self.n))))

    # -- mutation -------------------------------------------------------------

    def downdate_oldest(self) -> WindowState:
        if self.n < 2:
            raise UsageError("cannot evict from a window holding fewer than two points")
        q11 = self.Q[0, 0]
        if not abs(q11) > PIVOT_FLOOR:
            raise NumericalError(f"downdate pivot {q11:.3e} is too small")
        self.Q = self.kernels.downdate_first(self.Q)
        self._K = None
        self.xs = np.ascontiguousarray(self.xs[1:])
        self.ys = np.ascontiguousarray(self.ys[1:])
        if self._norms is not None:
            self._norms = np.ascontiguousarray(self._norms[1:])
        return self

    def append_observation(self, x, y: float, k=None) -> WindowState:
        """Add ``(x, y)`` as the newest point. ``k`` may carry a precomputed kernel vector."""
        x = np.ascontiguousarray(x, dtype=float).ravel()
        if k is None:
            k = self.kernel_vector(x)
        if not (np.all(np.isfinite(x)) and math.isfinite(y)):
            raise UsageError("non-finite observation")
        c = self.spec.self_value(x) + self.ridge
        Q, schur = self.kernels.append_update(self.Q, np.ascontiguousarray(k), c)
        if not (schur > 0 and math.isfinite(schur)):
            raise NumericalError(f"positive definiteness lost on append (Schur complement {schur:.3e})")
        self.Q = Q
        self._push(x, y, evict=False)
        return self

    def _push(self, x: np.ndarray, y: float, evict: bool) -> None:
        start = 1 if evict else 0
        self._K = None
        self.xs = np.vstack([self.xs[start:], x])
        self.ys = np.append(self.ys[start:], float(y))
        if self._norms is not None:
            self._norms = np.append(self._norms[start:], math.sqrt(float(x @ x)))
        self._steps += 1
        if self.refactor_every and self._steps % self.refactor_every == 0:
            self.refactorize()

    def advance(self, x, y: float, k=None) -> WindowState:
        """One streaming step: evict the oldest point if the window is full, then append.

        ``k`` is an optional kernel vector of ``x`` against the current (pre-eviction)
        window, typically left over from building this step's interval. On a full
        window the new inverse goes into a reused buffer, so an array taken from
        ``state.Q`` two steps earlier is overwritten; copy it to keep a snapshot.
        """
        if not self.full:
            return self.append_observation(x, y, k)
        x = np.ascontiguousarray(x, dtype=float).ravel()
        if k is None:
            k = self.kernel_vector(x)
        if not (np.all(np.isfinite(x)) and math.isfinite(y)):
            raise UsageError("non-finite observation")
        if not abs(self.Q[0, 0]) > PIVOT_FLOOR:
            raise NumericalError(f"downdate pivot {self.Q[0, 0]:.3e} is too small")
        # evict and append in one pass, alternating between two buffers
        out = self._spare if self._spare is not None and self._spare.shape == self.Q.shape else np.empty_like(self.Q)
        c = self.spec.self_value(x) + self.ridge
        schur = self.kernels.slide_update(self.Q, np.ascontiguousarray(k[1:], dtype=float), c, out)
        if not (schur > 0 and math.isfinite(schur)):
            raise NumericalError(f"positive definiteness lost on append (Schur complement {schur:.3e})")
        self._spare, self.Q = self.Q, out
        self._push(x, y, evict=True)
        return self

    def refactorize(self) -> WindowState:
        """Recompute ``Q`` from scratch (counts as a factorization)."""
        self.Q = _regularized_inverse(self.K, self.ridge)
        return self


def fit_initial(data, spec: KernelSpec, ridge: float, window=math.inf, **kwargs) -> WindowState:
    """Build a state from an iterable of ``(x, y)`` pairs."""
    pairs = list(data)
    if not pairs:
        raise UsageError("need at least one initial observation")
    X = np.array([np.ravel(np.asarray(x, dtype=float)) for x, _ in pairs])
    y = np.array([float(v) for _, v in pairs])
    return WindowState.fit(X, y, spec, ridge, window, **kwargs)


# -- hyperparameter selection --------------------------------------------------


@dataclass(frozen=True)
class Selection:
    ridge: float
    bandwidth_sq: float | None
    loo_sse: float
    table: tuple = ()

    def spec(self, kind: str) -> KernelSpec:
        return KernelSpec.ntk() if kind == NTK else KernelSpec.rbf(self.bandwidth_sq)


def loo_sse(K: np.ndarray, y: np.ndarray, ridges) -> list[float]:
    """Closed-form leave-one-out squared-error sums for each ridge value.

    One eigendecomposition of ``K`` serves the whole ridge grid. Degenerate
    cells come back as ``nan``.
    """
    evals, V = np.linalg.eigh(K)
    evals = np.clip(evals, 0.0, None)
    Vy = V.T @ y
    out = []
    for lam in ridges:
        inv = 1.0 / (evals + lam)
        qy = V @ (inv * Vy)
        qdiag = np.einsum("ij,j,ij->i", V, inv, V)
        if not np.all(lam * qdiag > LEVERAGE_FLOOR):
            out.append(math.nan)
            continue
        sse = float(np.sum((qy / qdiag) ** 2))
        out.append(sse if math.isfinite(sse) else math.nan)
    return out


def median_sq_distance(X) -> float:
    """Median pairwise squared distance, the anchor for the default bandwidth grid."""
    X = np.asarray(X, dtype=float)
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    iu = np.triu_indices(X.shape[0], 1)
    med = float(np.median(np.clip(D[iu], 0.0, None))) if iu[0].size else 1.0
    return med if med > 0 else 1.0


def loo_cv_select(X, y, kind: str, ridge_grid, bandwidth_grid=None) -> Selection:
    """Grid search over (ridge, bandwidth) minimizing the closed-form LOO SSE.

    Ties go to the smaller ridge, then the smaller bandwidth. For NTK the
    bandwidth grid is ignored.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    if X.shape[0] < 3:
        raise UsageError("leave-one-out selection needs at least three points")
    ridges = sorted(float(r) for r in ridge_grid)
    if not ridges or min(ridges) <= 0:
        raise UsageError("ridge grid must be non-empty and positive")
    if kind == RBF:
        bws = sorted(float(b) for b in (bandwidth_grid or ()))
        if not bws or min(bws) <= 0:
            raise UsageError("bandwidth grid must be non-empty and positive for the RBF kernel")
    elif kind == NTK:
        bws = [None]
    else:
        raise UsageError(f"unknown kernel kind {kind!r}")

    table = {}
    for bw in bws:
        spec = KernelSpec.ntk() if bw is None else KernelSpec.rbf(bw)
        for lam, sse in zip(ridges, loo_sse(gram_matrix(spec, X), y, ridges)):
            table[(lam, bw)] = sse

    best = None
    for lam, bw in product(ridges, bws):
        sse = table[(lam, bw)]
        if math.isnan(sse):
            continue
        if best is None or sse < best[0]:
            best = (sse, lam, bw)
    if best is None:
        raise SelectionError("every grid cell is numerically degenerate")
    sse, lam, bw = best
    log.info("LOO-CV selected ridge=%g bandwidth_sq=%s (sse=%.6g)", lam, bw, sse)
    rows = tuple((r, b, table[(r, b)]) for r, b in product(ridges, bws))
    return Selection(lam, bw, sse, rows)
