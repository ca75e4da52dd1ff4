"""Orthonormal frames (the Stiefel manifold) and the Cayley Adam optimizer.

Cayley Adam recurrence used by :func:`cayley_adam_step`, for ``U`` of shape
``l x m`` and Euclidean gradient ``G`` (step ``t`` counts from 1)::

    M    = b1 * M + (1 - b1) * G                 # momentum, l x m
    v    = b2 * v + (1 - b2) * ||G||_F^2         # scalar second moment
    Mh   = M / (1 - b1**t);  vh = v / (1 - b2**t)
    What = Mh U^T - 1/2 U (U^T Mh U^T)           # l x l
    W    = (What - What^T) / sqrt(vh + eps)      # skew-symmetric
    a    = min(lr, 1 / (||W||_1 + eps))
    Y_0  = U - a * Mh
    Y_k  = U - (a/2) W (U + Y_{k-1}),  k = 1..n_iter
    U'   = Y_n_iter
    M    = (W U) * sqrt(vh + eps) * (1 - b1**t)  # momentum moved to the tangent space

The fixed point of the last iteration is the Cayley retraction
``(I + a/2 W)^-1 (I - a/2 W) U``. If the truncated iteration leaves an
orthonormality defect above ``tol`` the result is re-orthonormalized with QR
and ``state.qr_fixes`` is incremented.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ValidationError
from .linalg import qr_thin

DEFECT_TOL = 1e-8


def orthonormality_defect(u) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))


def random_stiefel(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Q factor of an i.i.d. standard normal ``rows x cols`` matrix."""
    if rows < cols or cols < 1:
        raise ValidationError(f"need rows >= cols >= 1, got ({rows}, {cols})")
    q, _ = qr_thin(rng.standard_normal((rows, cols)))
    return q


def project_tangent(u, g) -> np.ndarray:
    """Euclidean-metric projection of ``g`` onto the tangent space at ``u``."""
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if u.shape != g.shape:
        raise ValidationError(f"shape mismatch {u.shape} vs {g.shape}")
    ug = u.T @ g
    return g - u @ (0.5 * (ug + ug.T))


def qr_retract(u, direction) -> np.ndarray:
    """Retraction ``qf(U + direction)`` with the non-negative-diagonal QR convention."""
    q, _ = qr_thin(np.asarray(u) + np.asarray(direction))
    return q


@dataclass
class CayleyAdamState:
    momentum: np.ndarray
    v: float = 0.0
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_iter: int = 2
    qr_fixes: int = field(default=0)

    @classmethod
    def zeros(cls, shape, **kw) -> "CayleyAdamState":
        return cls(np.zeros(shape), **kw)


def cayley_adam_step(state: CayleyAdamState, u, euclid_grad, lr: float,
                     tol: float = DEFECT_TOL) -> tuple[np.ndarray, CayleyAdamState]:
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(euclid_grad, dtype=np.float64)
    if g.shape != u.shape or state.momentum.shape != u.shape:
        raise ValidationError(f"Cayley Adam: shapes {u.shape}, {g.shape}, {state.momentum.shape}")
    if not np.all(np.isfinite(g)):
        raise DivergenceError("Cayley Adam: non-finite gradient")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    m = b1 * state.momentum + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * float(np.sum(g * g))
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    denom = np.sqrt(v_hat + eps)

    mu = m_hat @ u.T
    w_hat = mu - 0.5 * u @ (u.T @ mu)
    w = (w_hat - w_hat.T) / denom
    alpha = min(lr, 1.0 / (np.max(np.sum(np.abs(w), axis=0)) + eps))
    y = u - alpha * m_hat
    for _ in range(state.n_iter):
        y = u - 0.5 * alpha * w @ (u + y)

    fixes = state.qr_fixes
    if orthonormality_defect(y) > tol:
        y = qr_thin(y)[0]
        fixes += 1
    new_m = (w @ u) * denom * (1.0 - b1 ** t)
    return y, CayleyAdamState(new_m, v, t, b1, b2, eps, state.n_iter, fixes)
