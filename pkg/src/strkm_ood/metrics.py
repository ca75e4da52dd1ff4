"""Detection metrics and divergences between two sets of anomaly scores.

Convention throughout: higher score = more anomalous, out-of-distribution
samples are the positive class.

* FPR95: the threshold is the 95% (type-7) quantile of the in-distribution
  scores, so 95% of in-distribution samples are accepted; the reported value
  is the fraction of OOD scores at or below it (OOD accepted as normal).
* AUROC: Mann-Whitney probability that an OOD score exceeds an
  in-distribution score, ties counted one half.
* AUPR: average precision. Thresholds run over the distinct scores from high
  to low; each step adds ``(R_k - R_{k-1}) * P_k``, with tied scores entering
  together.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .linalg import as_vector


def _pair(scores_in, scores_out):
    a = as_vector(scores_in, "scores_in")
    b = as_vector(scores_out, "scores_out")
    if a.size == 0 or b.size == 0:
        raise ValidationError("score sets must be non-empty")
    return a, b


def fpr_at_tpr(scores_in, scores_out, tpr_target: float = 0.95) -> float:
    a, b = _pair(scores_in, scores_out)
    if not 0 < tpr_target < 1:
        raise ValidationError(f"tpr_target must be in (0, 1), got {tpr_target}")
    gamma = np.quantile(a, tpr_target, method="linear")
    return float(np.mean(b <= gamma))


def auroc(scores_in, scores_out) -> float:
    a, b = _pair(scores_in, scores_out)
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def aupr(scores_in, scores_out) -> float:
    a, b = _pair(scores_in, scores_out)
    s = np.concatenate([a, b])
    y = np.concatenate([np.zeros(a.size), np.ones(b.size)])
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]  # end of each tie block
    tp = np.cumsum(y)[last]
    predicted = last + 1
    precision = tp / predicted
    recall = tp / b.size
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return float(0.9 * spread * x.size ** (-0.2))


def _kde(grid, samples, h, chunk=256):
    dens = np.zeros_like(grid)
    for s in range(0, samples.size, chunk):
        z = (grid[:, None] - samples[None, s:s + chunk]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    return dens / (samples.size * h * np.sqrt(2 * np.pi))


def overlap_coefficient(a, b, grid_points: int = 2048) -> float:
    """Integral of ``min(f_a, f_b)`` for Gaussian KDEs of the two samples.

    Each sample gets its own Silverman bandwidth. The integral is a trapezoid
    rule on ``grid_points`` uniform points over
    ``[min - 3h, max + 3h]`` of the pooled data, ``h`` the larger bandwidth.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.size < 5 or b.size < 5:
        raise ValidationError("overlap_coefficient needs at least 5 samples per set")
    ha, hb = silverman_bandwidth(a), silverman_bandwidth(b)
    if ha <= 0 or hb <= 0:
        raise ValidationError("overlap_coefficient: a sample set has zero spread")
    h = max(ha, hb)
    pooled = np.concatenate([a, b])
    grid = np.linspace(pooled.min() - 3 * h, pooled.max() + 3 * h, grid_points)
    low = np.minimum(_kde(grid, a, ha), _kde(grid, b, hb))
    return float(np.clip(np.trapezoid(low, grid), 0.0, 1.0))


def mean_abs_difference(z) -> float:
    """Mean of ``|z_i - z_j|`` over all unordered pairs ``i < j``."""
    z = np.sort(np.asarray(z, dtype=np.float64))
    n = z.size
    k = np.arange(n)
    return float(np.sum(z * (2 * k - n + 1)) / (n * (n - 1) / 2))


def mmd_rbf(a, b) -> float:
    """Biased (V-statistic) MMD with a Gaussian kernel, returned as ``sqrt(MMD^2)``.

    The kernel is ``exp(-|x - y|^2 / (2 sigma^2))`` with ``2 sigma^2`` set to the
    mean absolute difference over all distinct pairs of the pooled scores.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.size < 2 or b.size < 2:
        raise ValidationError("mmd_rbf needs at least 2 samples per set")
    two_sigma_sq = mean_abs_difference(np.concatenate([a, b]))
    if two_sigma_sq <= 0:
        raise ValidationError("mmd_rbf: all pooled scores are identical (zero bandwidth)")

    def kmean(x, y):
        total = 0.0
        for s in range(0, x.size, 1024):
            d = x[s:s + 1024, None] - y[None, :]
            total += np.exp(-(d * d) / two_sigma_sq).sum()
        return total / (x.size * y.size)

    mmd2 = kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b)
    return float(np.sqrt(max(mmd2, 0.0)))


def wasserstein1(a, b) -> float:
    """1-D empirical W1: integral of ``|F_a - F_b|`` (equivalently of the
    difference of quantile functions)."""
    a = np.sort(as_vector(a, "a"))
    b = np.sort(as_vector(b, "b"))
    if a.size == 0 or b.size == 0:
        raise ValidationError("wasserstein1 needs non-empty inputs")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    pts = np.concatenate([a, b])
    pts.sort(kind="mergesort")
    widths = np.diff(pts)
    fa = np.searchsorted(a, pts[:-1], side="right") / a.size
    fb = np.searchsorted(b, pts[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def standardize_scores(scores) -> np.ndarray:
    """Zero mean, unit (population) variance, then shifted so the minimum is 0."""
    s = as_vector(scores, "scores")
    if s.size < 2:
        raise ValidationError("need at least 2 scores")
    sd = s.std()
    if not sd > 0:
        raise ValidationError("scores have zero variance")
    z = (s - s.mean()) / sd
    return z - z.min()


@dataclass(frozen=True)
class EvalReport:
    fpr95: float
    auroc: float
    aupr: float
    overlap: float
    mmd: float
    wasserstein1: float

    def to_text(self, header: dict | None = None) -> str:
        lines = [f"{k}: {v}" for k, v in (header or {}).items()]
        lines += [f"{k}: {v:.10g}" for k, v in asdict(self).items()]
        return "\n".join(lines) + "\n"


def evaluate(scores_in, scores_out, tpr_target: float = 0.95) -> EvalReport:
    return EvalReport(
        fpr95=fpr_at_tpr(scores_in, scores_out, tpr_target),
        auroc=auroc(scores_in, scores_out),
        aupr=aupr(scores_in, scores_out),
        overlap=overlap_coefficient(scores_in, scores_out),
        mmd=mmd_rbf(scores_in, scores_out),
        wasserstein1=wasserstein1(scores_in, scores_out),
    )
