"""Pure-numpy implementations of the per-step hot kernels.

Same call signatures as the compiled ``_ckernels`` module; used when the
extension is unavailable or when ``RETROCONF_BACKEND=python``.
"""

import numpy as np

NAME = "python"


def rbf_vector(points, x, inv_two_bw):
    diff = points - x
    return np.exp(-np.einsum("ij,ij->i", diff, diff) * inv_two_bw)


def ntk_vector(points, point_norms, x, x_norm):
    cos = (points @ x) / (point_norms * x_norm)
    np.clip(cos, -1.0, 1.0, out=cos)
    # half-angle form: exact at theta = 0 and pi, where arccos loses ~1e-8
    U = points / point_norms[:, None]
    u = x / x_norm
    theta = 2.0 * np.arctan2(np.linalg.norm(U - u, axis=1), np.linalg.norm(U + u, axis=1))
    rest = np.pi - theta
    return cos * (np.sin(theta) + rest * cos) + rest / np.pi


def downdate_first(Q):
    q12 = Q[1:, 0]
    out = Q[1:, 1:] - np.outer(q12, q12) / Q[0, 0]
    return 0.5 * (out + out.T)


def append_update(Q, k, c):
    """Bordered inverse after appending one point.

    Returns the new (n+1)x(n+1) inverse and the Schur complement
    ``c - k'Qk``; the caller must reject a non-positive complement.
    """
    n = Q.shape[0]
    v = Q @ k
    schur = c - k @ v
    delta = 1.0 / schur if schur != 0.0 else np.inf
    out = np.empty((n + 1, n + 1))
    block = Q + delta * np.outer(v, v)
    out[:n, :n] = 0.5 * (block + block.T)
    out[:n, n] = -delta * v
    out[n, :n] = -delta * v
    out[n, n] = delta
    return out, schur


def slide_update(Q, k, c, out):
    """Evict the oldest point and append a new one in a single pass.

    ``k`` holds the new point's kernel values against the n-1 points that
    remain; the n x n result is written into ``out``. Returns the Schur
    complement of the append.
    """
    q = Q[0, 1:]
    m = q.size
    kept = out[:m, :m]
    # built in place; outer(q, q) is symmetric bit for bit
    np.multiply.outer(q, q, out=kept)
    kept *= -1.0 / Q[0, 0]
    kept += Q[1:, 1:]
    v = kept @ k
    schur = c - k @ v
    delta = 1.0 / schur if schur != 0.0 else np.inf
    rank1 = np.multiply.outer(v, v)
    rank1 *= delta
    kept += rank1
    out[:m, m] = -delta * v
    out[m, :m] = -delta * v
    out[m, m] = delta
    return float(schur)


def loo_errors(Q, y):
    """Signed leave-one-out errors ``Y_i - f_{-i}(X_i)`` = (Qy)_i / Q_ii."""
    return (Q @ y) / np.diagonal(Q)


def fitted_value(Q, y, kx):
    """Prediction at x, accumulated exactly as in :func:`loo_terms`."""
    return float((Q @ kx) @ y)


def loo_terms(Q, y, kx):
    """Full-window prediction at x, leave-one-out predictions at x, signed LOO errors."""
    xi = Q @ kx
    fhat = float(xi @ y)
    err = loo_errors(Q, y)
    return fhat, fhat - xi * err, err
