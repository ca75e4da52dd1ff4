"""Energy scores for a trained model, logit baselines and thresholding.

With ``f = phi(x) - mean`` and ``h = U^T f`` the four energies are::

    kpca    = ||h||^2 - 2 h^T U^T f + ||f||^2      (= ||(I - U U^T) f||^2)
    aeloss  = ||x - psi(U U^T f)||^2
    negcorr = -2 h^T U^T f                         (= -2 ||h||^2)
    full    = kpca + lam * aeloss

``negcorr`` is the cross term exactly as it enters ``full``, sign included.
Higher energy means more anomalous.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import as_vector
from .model import StRkmModel, _as_batch
from .nn import mlp_forward


class EnergyKind(str, enum.Enum):
    FULL = "full"
    KPCA = "kpca"
    AELOSS = "aeloss"
    NEGCORR = "negcorr"

    @classmethod
    def parse(cls, name) -> "EnergyKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValidationError(f"unknown energy {name!r} (choose from {choices})") from None


ALL_KINDS = tuple(EnergyKind)


def energy_terms(model: StRkmModel, x) -> dict:
    """All four energies (plus the three displayed pieces) for one sample or a batch."""
    a, single = _as_batch(x, model.dims[0])
    f = mlp_forward(model.encoder, a)[0] - model.feature_mean
    h = f @ model.U
    uh = h @ model.U.T
    resid = f - uh
    recon = mlp_forward(model.decoder, uh)[0]
    out = {
        "h_sq": np.sum(h * h, axis=1),
        "corr": -2.0 * np.sum(h * (f @ model.U), axis=1),
        "phi_sq": np.sum(f * f, axis=1),
        EnergyKind.KPCA: np.sum(resid * resid, axis=1),
        EnergyKind.AELOSS: np.sum((a - recon) ** 2, axis=1),
    }
    out[EnergyKind.NEGCORR] = out["corr"]
    out[EnergyKind.FULL] = out[EnergyKind.KPCA] + model.lam * out[EnergyKind.AELOSS]
    if single:
        return {k: float(v[0]) for k, v in out.items()}
    return out


def energy(model: StRkmModel, x, kind="full"):
    """Energy of kind ``kind`` for a sample (float) or a batch (array).

    ``kpca`` is evaluated as the squared residual ``||f - U h||^2``, which is
    the three displayed terms summed without the cancellation error.
    """
    return energy_terms(model, x)[EnergyKind.parse(kind)]


# --- threshold ------------------------------------------------------------

@dataclass(frozen=True)
class Threshold:
    gamma: float
    tpr_target: float = 0.95


def select_threshold(train_scores, tpr_target: float = 0.95) -> Threshold:
    """``gamma`` = linear-interpolation (type 7) ``tpr_target`` quantile of the scores."""
    s = as_vector(train_scores, "train_scores")
    if not 0 < tpr_target < 1:
        raise ValidationError(f"tpr_target must be in (0, 1), got {tpr_target}")
    if s.size < 20:
        raise ValidationError(f"need at least 20 training scores, got {s.size}")
    return Threshold(float(np.quantile(s, tpr_target, method="linear")), tpr_target)


def classify(score, t: Threshold):
    """``"out"`` when the score is strictly above ``gamma``, ``"in"`` otherwise."""
    s = np.asarray(score, dtype=np.float64)
    if s.ndim == 0:
        return "out" if s > t.gamma else "in"
    return np.where(s > t.gamma, "out", "in")


# --- logit baselines ------------------------------------------------------

def softmax_score(logits) -> float:
    """Negated maximum softmax probability."""
    z = as_vector(logits, "logits")
    if z.size < 2:
        raise ValidationError("need at least two logits")
    e = np.exp(z - z.max())
    return float(-e.max() / e.sum())


def logsumexp_energy(logits, temperature: float = 1.0) -> float:
    """``-T log sum_i exp(f_i / T)``."""
    z = as_vector(logits, "logits")
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    if z.size == 0:
        raise ValidationError("need at least one logit")
    s = z / temperature
    top = s.max()
    return float(-temperature * (top + np.log(np.sum(np.exp(s - top)))))
