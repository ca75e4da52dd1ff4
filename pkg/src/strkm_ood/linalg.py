"""Dense linear algebra on float64 numpy arrays.

Matrices are 2-D ``float64`` arrays and vectors are 1-D ones; the helpers
``as_matrix`` / ``as_vector`` validate and coerce at module boundaries.
The two decompositions the toolkit relies on (thin Householder QR and a
cyclic Jacobi symmetric eigensolver) are implemented here directly.

Randomness: every generator is ``numpy.random.Generator(PCG64(...))``.
Sub-streams are derived from one integer seed with a counter,
``derive_rng(seed, k) = Generator(PCG64(SeedSequence([seed, k])))``, so two
parts of a run never share a stream and the whole run replays from ``seed``.
"""

from __future__ import annotations

import numpy as np

from .errors import DecompositionError, ValidationError

Matrix = np.ndarray
Vector = np.ndarray


def as_matrix(a, name: str = "matrix") -> Matrix:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> Vector:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


# --- random numbers -------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed: int, counter: int) -> np.random.Generator:
    """Independent sub-stream number ``counter`` of the run seeded by ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(counter)])
    return np.random.Generator(np.random.PCG64(ss))


# --- elementary kernels ---------------------------------------------------

def gemm(a, b) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"gemm shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def axpy(alpha: float, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y


def dot(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError(f"dot shape mismatch: {x.shape} vs {y.shape}")
    return float(x @ y)


def norm2(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(x.ravel() @ x.ravel()))


# --- decompositions -------------------------------------------------------

def qr_thin(m) -> tuple[Matrix, Matrix]:
    """Thin Householder QR of an ``l x k`` matrix with ``l >= k``.

    Returns ``Q`` (``l x k``, orthonormal columns) and upper-triangular ``R``
    (``k x k``) with a non-negative diagonal.
    """
    a = as_matrix(m, "qr input")
    rows, cols = a.shape
    if rows < cols:
        raise ValidationError(f"qr_thin needs rows >= cols, got {a.shape}")
    r = a.copy()
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, np.finfo(float).tiny)
    tol = 1e-12 * scale * max(rows, 1)
    reflectors = []
    for j in range(cols):
        x = r[j:, j]
        alpha = np.sqrt(x @ x)
        if alpha <= tol:
            raise DecompositionError(
                f"qr_thin: matrix is rank deficient at column {j}"
            )
        v = x.copy()
        v[0] += alpha if x[0] >= 0 else -alpha
        v /= np.sqrt(v @ v)
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        reflectors.append(v)
    q = np.zeros((rows, cols))
    q[:cols, :cols] = np.eye(cols)
    for j in reversed(range(cols)):
        v = reflectors[j]
        q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    r = np.triu(r[:cols, :])
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def _round_robin(n: int) -> list[list[tuple[int, int]]]:
    # Tournament schedule: n-1 rounds of disjoint pairs covering every pair once.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p >= 0 and q >= 0:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eig(c, max_sweeps: int = 60) -> tuple[Vector, Matrix]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations within a round act on disjoint index pairs, so a whole round is
    applied at once. Eigenvalues come back in descending order with the
    eigenvectors as matching columns; each eigenvector is signed so that its
    largest-magnitude entry is positive.
    """
    a = as_matrix(c, "sym_eig input")
    d = a.shape[0]
    if a.shape[1] != d:
        raise ValidationError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    if d and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValidationError("sym_eig input is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(d)
    rounds = _round_robin(d) if d > 1 else []
    fro = np.sqrt(np.sum(a * a))
    tol = 4.0 * np.finfo(float).eps * fro * max(d, 1)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum((a - np.diag(np.diag(a))) ** 2))
        if not off > tol:
            break
        for pairs in rounds:
            p = np.array([pq[0] for pq in pairs])
            q = np.array([pq[1] for pq in pairs])
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0] = 1.0
            cos = 1.0 / np.sqrt(t * t + 1.0)
            sin = t * cos
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cos * ap - sin * aq
            a[:, q] = sin * ap + cos * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = cos[:, None] * ap - sin[:, None] * aq
            a[q, :] = sin[:, None] * ap + cos[:, None] * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = cos * vp - sin * vq
            v[:, q] = sin * vp + cos * vq
    else:
        raise DecompositionError(f"sym_eig: Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    if d:
        lead = np.argmax(np.abs(v), axis=0)
        v = v * np.where(v[lead, np.arange(d)] < 0, -1.0, 1.0)
    return w, v
