"""Positive-definite kernels and Gram matrix construction.

Two kernels are supported:

* ``rbf``: ``exp(-||x - y||^2 / (2 * bandwidth_sq))``
* ``ntk``: the closed-form neural tangent kernel of a two-layer ReLU network,
  ``c * (sin(theta) + (pi - theta) * c) + (pi - theta) / pi`` with ``c`` the
  cosine of the angle ``theta`` between the inputs. The cosine is clamped
  to [-1, 1] and the angle is taken from the half-angle identity
  ``theta = 2 atan2(|u - v|, |u + v|)`` on the unit vectors.

The NTK has ``k(x, x) = pi + 1`` rather than 1, so callers should use
:meth:`KernelSpec.self_value` instead of assuming a unit diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from retroconf import _backend
from retroconf.errors import KernelDomainError, UsageError

RBF = "rbf"
NTK = "ntk"
KINDS = (RBF, NTK)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = RBF
    bandwidth_sq: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == RBF and not (self.bandwidth_sq > 0 and math.isfinite(self.bandwidth_sq)):
            raise UsageError(f"RBF bandwidth_sq must be positive and finite, got {self.bandwidth_sq}")

    @classmethod
    def rbf(cls, bandwidth_sq: float) -> KernelSpec:
        return cls(RBF, float(bandwidth_sq))

    @classmethod
    def ntk(cls) -> KernelSpec:
        return cls(NTK, 1.0)

    def self_value(self, x=None) -> float:
        """``k(x, x)``; constant for both supported kernels (``x`` only checked for NTK)."""
        if self.kind == RBF:
            return 1.0
        if x is not None and not np.any(np.asarray(x, dtype=float)):
            raise KernelDomainError("NTK is undefined at the zero vector")
        return math.pi + 1.0

    def describe(self) -> str:
        if self.kind == RBF:
            return f"rbf(bandwidth_sq={self.bandwidth_sq:g})"
        return "ntk(two-layer relu)"


def _as_vector(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError(f"expected a non-empty feature vector, got shape {arr.shape}")
    return arr


def _as_points(points) -> np.ndarray:
    arr = np.ascontiguousarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise UsageError("point set must be a non-empty list of feature vectors")
    return arr


def _norms(points: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", points, points))
    if np.any(norms == 0.0):
        raise KernelDomainError("NTK is undefined at the zero vector")
    return norms


def _ntk_value(cos: float, theta: float) -> float:
    cos = min(1.0, max(-1.0, cos))
    rest = math.pi - theta
    return cos * (math.sin(theta) + rest * cos) + rest / math.pi


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = _as_vector(x)
    y = _as_vector(y)
    if x.shape != y.shape:
        raise UsageError(f"dimension mismatch: {x.size} vs {y.size}")
    if spec.kind == RBF:
        diff = x - y
        return math.exp(-float(diff @ diff) / (2.0 * spec.bandwidth_sq))
    nx = math.sqrt(float(x @ x))
    ny = math.sqrt(float(y @ y))
    if nx == 0.0 or ny == 0.0:
        raise KernelDomainError("NTK is undefined at the zero vector")
    u, v = x / nx, y / ny
    # half-angle form of the angle; arccos of the cosine loses ~1e-8 near 0 and pi
    theta = 2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))
    return _ntk_value(float(x @ y) / (nx * ny), theta)


def gram_vector(spec: KernelSpec, points, x, point_norms=None, kernels=None) -> np.ndarray:
    """Kernel values between every row of ``points`` and ``x``.

    ``point_norms`` may be passed to skip recomputing row norms (NTK only).
    """
    P = _as_points(points)
    x = _as_vector(x)
    if P.shape[1] != x.size:
        raise UsageError(f"dimension mismatch: points have d={P.shape[1]}, x has d={x.size}")
    kern = kernels or _backend.kernels
    if spec.kind == RBF:
        return kern.rbf_vector(P, x, 0.5 / spec.bandwidth_sq)
    x_norm = math.sqrt(float(x @ x))
    if x_norm == 0.0:
        raise KernelDomainError("NTK is undefined at the zero vector")
    if point_norms is None:
        point_norms = _norms(P)
    return kern.ntk_vector(P, np.ascontiguousarray(point_norms, dtype=float), x, x_norm)


def gram_matrix(spec: KernelSpec, points, kernels=None) -> np.ndarray:
    """Symmetric Gram matrix; the upper triangle is computed and mirrored."""
    P = _as_points(points)
    n = P.shape[0]
    norms = _norms(P) if spec.kind == NTK else None
    G = np.empty((n, n))
    for i in range(n):
        row = gram_vector(
            spec, P[i:], P[i], None if norms is None else norms[i:], kernels=kernels
        )
        G[i, i:] = row
        G[i:, i] = row
    return G
