"""PCA reconstruction-error detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, sym_eig


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (D, k), orthonormal columns
    explained_fractions: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[1]


def pca_fit(data, var_threshold: float = 0.02) -> PcaModel:
    """Keep every principal direction whose share of the total variance
    (trace of the 1/N covariance) is at least ``var_threshold``."""
    x = as_matrix(data, "dataset")
    if x.shape[0] < 2:
        raise ValidationError("pca_fit needs at least 2 samples")
    mean = x.mean(axis=0)
    if np.all(x == x[0]):
        # constant data: rounding in the mean would otherwise invent a direction
        return PcaModel(mean, np.zeros((x.shape[1], 0)), np.zeros(0))
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    evals, evecs = sym_eig(0.5 * (cov + cov.T))
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    if total <= 0:
        return PcaModel(mean, np.zeros((x.shape[1], 0)), np.zeros(0))
    frac = evals / total
    keep = frac >= var_threshold
    return PcaModel(mean, evecs[:, keep], frac[keep])


def pca_score(pca: PcaModel, x):
    """Squared residual of ``x - mean`` after projecting on the kept components."""
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != pca.mean.shape[0]:
        raise ValidationError(f"expected length {pca.mean.shape[0]}, got {a.shape[1]}")
    xc = a - pca.mean
    v = pca.components
    resid = xc - (xc @ v) @ v.T
    s = np.sum(resid * resid, axis=1)
    return float(s[0]) if single else s
