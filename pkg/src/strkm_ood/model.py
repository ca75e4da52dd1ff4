"""The St-RKM model: objective, centering, covariance diagnostics and training.

For a sample ``x`` with centered feature ``f = phi(x) - mean`` the per-sample
objective is::

    ||(I - U U^T) f||^2  +  lam * ||x - psi(U U^T f)||^2
      (kpca term)                (autoencoder term)

During training ``mean`` is the minibatch mean of the encoder outputs; once
training ends the full-training-set mean is computed and frozen into the
model, so scoring a sample never depends on its batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DivergenceError, ValidationError
from .linalg import as_matrix, derive_rng
from .nn import AdamState, Mlp, adam_step, init_mlp, mlp_backward, mlp_forward
from .stiefel import (
    DEFECT_TOL,
    CayleyAdamState,
    cayley_adam_step,
    orthonormality_defect,
    project_tangent,
    qr_retract,
    random_stiefel,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StRkmModel:
    encoder: Mlp
    decoder: Mlp
    U: np.ndarray
    feature_mean: np.ndarray
    lam: float

    def __post_init__(self):
        u = np.asarray(self.U, dtype=np.float64)
        mean = np.asarray(self.feature_mean, dtype=np.float64)
        object.__setattr__(self, "U", u)
        object.__setattr__(self, "feature_mean", mean)
        d, l = self.encoder.in_dim, self.encoder.out_dim
        if u.ndim != 2 or u.shape[0] != l or u.shape[1] > l:
            raise ValidationError(f"U must be {l} x m with m <= {l}, got {u.shape}")
        if self.decoder.in_dim != l or self.decoder.out_dim != d:
            raise ValidationError(
                f"decoder maps {self.decoder.in_dim}->{self.decoder.out_dim}, expected {l}->{d}"
            )
        if mean.shape != (l,) or not np.all(np.isfinite(mean)):
            raise ValidationError(f"feature_mean must be a finite vector of length {l}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lambda must be finite and >= 0, got {self.lam}")
        if orthonormality_defect(u) > DEFECT_TOL:
            raise ValidationError("U does not have orthonormal columns")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(input dim D, feature dim l, latent dim m)."""
        return self.encoder.in_dim, self.encoder.out_dim, self.U.shape[1]


def _as_batch(x, dim: int):
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValidationError(f"expected input of length {dim}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("input contains non-finite values")
    return a, single


def _unbatch(a, single):
    return a[0] if single else a


def features(model: StRkmModel, x) -> np.ndarray:
    """Raw encoder outputs ``phi(x)`` (no centering)."""
    a, single = _as_batch(x, model.dims[0])
    return _unbatch(mlp_forward(model.encoder, a)[0], single)


def encode_centered(model: StRkmModel, x) -> np.ndarray:
    return features(model, x) - model.feature_mean


def latent(model: StRkmModel, x) -> np.ndarray:
    """Score vector ``h = U^T (phi(x) - mean)``."""
    return encode_centered(model, x) @ model.U


def reconstruct(model: StRkmModel, x) -> np.ndarray:
    a, single = _as_batch(x, model.dims[0])
    f = mlp_forward(model.encoder, a)[0] - model.feature_mean
    proj = (f @ model.U) @ model.U.T
    return _unbatch(mlp_forward(model.decoder, proj)[0], single)


class Terms(NamedTuple):
    kpca: np.ndarray
    ae: np.ndarray


def objective_terms(model: StRkmModel, x) -> Terms:
    """Per-sample kpca and autoencoder terms (floats for one sample, arrays for a batch)."""
    a, single = _as_batch(x, model.dims[0])
    f = mlp_forward(model.encoder, a)[0] - model.feature_mean
    proj = (f @ model.U) @ model.U.T
    resid = f - proj
    recon = mlp_forward(model.decoder, proj)[0]
    kpca = np.sum(resid * resid, axis=1)
    ae = np.sum((a - recon) ** 2, axis=1)
    if single:
        return Terms(float(kpca[0]), float(ae[0]))
    return Terms(kpca, ae)


def feature_covariance(model: StRkmModel, data, center: str = "model") -> np.ndarray:
    """``(1/n) sum f_i f_i^T`` over centered features.

    ``center="model"`` subtracts the model's frozen feature mean, ``"data"``
    the mean of ``data`` itself.
    """
    x = as_matrix(data, "dataset")
    if x.shape[0] == 0:
        raise ValidationError("feature_covariance needs a non-empty dataset")
    f = features(model, x)
    if center == "model":
        f = f - model.feature_mean
    elif center == "data":
        f = f - f.mean(axis=0)
    else:
        raise ValidationError(f"unknown centering {center!r}")
    c = f.T @ f / x.shape[0]
    return 0.5 * (c + c.T)


# --- objective with gradients --------------------------------------------

class LossParts(NamedTuple):
    objective: float
    kpca: float
    ae: float


class Grads(NamedTuple):
    encoder: Mlp
    decoder: Mlp
    U: np.ndarray


def loss_and_grads(encoder: Mlp, decoder: Mlp, u, x, lam: float,
                   mean=None) -> tuple[LossParts, Grads]:
    """Minibatch objective and its exact gradients.

    The objective is ``mean_i kpca_i + lam * mean_i ae_i``. Features are
    centered by the batch mean unless a fixed ``mean`` is given. The ``U``
    gradient is the Euclidean one of the expression as written, valid for any
    ``U`` (orthonormal or not), so it can be checked by finite differences.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n = x.shape[0]
    feats, enc_tape = mlp_forward(encoder, x)
    mu = feats.mean(axis=0) if mean is None else np.asarray(mean, dtype=np.float64)
    fc = feats - mu
    uut = u @ u.T
    proj = fc @ uut
    resid = fc - proj
    recon, dec_tape = mlp_forward(decoder, proj)
    err = recon - x
    kpca = float(np.sum(resid * resid)) / n
    ae = float(np.sum(err * err)) / n
    parts = LossParts(kpca + lam * ae, kpca, ae)

    dec_grads, d_proj = mlp_backward(decoder, dec_tape, (2.0 * lam / n) * err)
    d_resid = (2.0 / n) * resid
    d_proj = d_proj - d_resid
    d_fc = d_resid + d_proj @ uut
    d_u = fc.T @ (d_proj @ u) + d_proj.T @ (fc @ u)
    d_feats = d_fc - d_fc.mean(axis=0) if mean is None else d_fc
    enc_grads, _ = mlp_backward(encoder, enc_tape, d_feats)
    return parts, Grads(enc_grads, dec_grads, d_u)


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1600
    batch_size: int = 256
    lr_adam: float = 2e-4
    lr_cayley: float = 1e-4
    lam: float = 100.0
    m: int = 10
    feature_dim: int = 50
    hidden: tuple[int, ...] = (64, 32)
    seed: int = 0
    deterministic_mode: bool = False
    train_slopes: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("epochs", "batch_size", "m", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden widths must be positive")
        if self.m > self.feature_dim:
            raise ValidationError(f"m={self.m} exceeds feature_dim={self.feature_dim}")
        if not (self.lr_adam > 0 and self.lr_cayley > 0):
            raise ValidationError("learning rates must be positive")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("lambda must be finite and >= 0")


@dataclass
class TrainHistory:
    objective: list = field(default_factory=list)
    kpca: list = field(default_factory=list)
    ae: list = field(default_factory=list)
    defect: list = field(default_factory=list)
    qr_fixes: int = 0

    def rows(self):
        for i, row in enumerate(zip(self.objective, self.kpca, self.ae, self.defect)):
            yield (i + 1, *row)


def init_networks(config: TrainConfig, input_dim: int) -> tuple[Mlp, Mlp, np.ndarray]:
    hidden = list(config.hidden)
    acts = ["prelu"] * len(hidden)
    encoder = init_mlp([input_dim, *hidden, config.feature_dim], acts + ["linear"],
                       derive_rng(config.seed, 0))
    decoder = init_mlp([config.feature_dim, *hidden[::-1], input_dim], acts + ["sigmoid"],
                       derive_rng(config.seed, 1))
    u = random_stiefel(config.feature_dim, config.m, derive_rng(config.seed, 2))
    return encoder, decoder, u


def _batches(n: int, batch_size: int, order: np.ndarray):
    # a trailing batch of one sample has zero kpca term under batch centering; fold it in
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    for i, s in enumerate(starts):
        e = starts[i + 1] if i + 1 < len(starts) else n
        yield order[s:e]


def train(config: TrainConfig, data, callback=None) -> tuple[StRkmModel, TrainHistory]:
    """Alternating minimization: per minibatch one Adam step on the encoder and
    decoder, then one Cayley Adam step on ``U`` using the same backward pass.

    With ``deterministic_mode`` every epoch is a single full-batch step of plain
    gradient descent on the networks and a projected-gradient step with QR
    retraction on ``U``.
    """
    x = as_matrix(data, "training data")
    n, d = x.shape
    if n == 0:
        raise ValidationError("training data is empty")
    if n < 2:
        raise ValidationError("training needs at least 2 samples")
    if x.min() < 0 or x.max() > 1:
        raise ValidationError("training data must lie in [0, 1]")
    if not config.deterministic_mode and config.batch_size > n:
        raise ValidationError(f"batch_size {config.batch_size} exceeds dataset size {n}")

    encoder, decoder, u = init_networks(config, d)
    n_enc = 3 * len(encoder.layers)
    adam = AdamState.zeros(encoder.arrays() + decoder.arrays())
    cayley = CayleyAdamState.zeros(u.shape)
    shuffle_rng = derive_rng(config.seed, 3)
    history = TrainHistory()

    for epoch in range(config.epochs):
        if config.deterministic_mode:
            batches = [np.arange(n)]
        else:
            batches = _batches(n, config.batch_size, shuffle_rng.permutation(n))
        tot = np.zeros(3)
        for b, idx in enumerate(batches):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    parts, grads = loss_and_grads(encoder, decoder, u, x[idx], config.lam)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch + 1}, batch {b + 1}") from exc
            if not np.isfinite(parts.objective):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            g_arrays = grads.encoder.arrays() + grads.decoder.arrays()
            if not config.train_slopes:
                g_arrays = [np.zeros_like(g) if g.ndim == 0 else g for g in g_arrays]
            p_arrays = encoder.arrays() + decoder.arrays()
            if config.deterministic_mode:
                for g in g_arrays:
                    if not np.all(np.isfinite(g)):
                        raise DivergenceError(f"non-finite gradient at epoch {epoch + 1}")
                new = [p - config.lr_adam * g for p, g in zip(p_arrays, g_arrays)]
                if not np.all(np.isfinite(grads.U)):
                    raise DivergenceError(f"non-finite U gradient at epoch {epoch + 1}")
                u = qr_retract(u, -config.lr_cayley * project_tangent(u, grads.U))
            else:
                try:
                    new, adam = adam_step(adam, p_arrays, g_arrays, config.lr_adam)
                    u, cayley = cayley_adam_step(cayley, u, grads.U, config.lr_cayley)
                except DivergenceError as exc:
                    raise DivergenceError(f"{exc} at epoch {epoch + 1}, batch {b + 1}") from exc
            if not all(np.all(np.isfinite(a)) for a in new):
                raise DivergenceError(f"parameters overflowed at epoch {epoch + 1}, batch {b + 1}")
            encoder = encoder.with_arrays(new[:n_enc])
            decoder = decoder.with_arrays(new[n_enc:])
            tot += len(idx) * np.array(parts)
        tot /= n
        defect = orthonormality_defect(u)
        history.objective.append(float(tot[0]))
        history.kpca.append(float(tot[1]))
        history.ae.append(float(tot[2]))
        history.defect.append(defect)
        if callback is not None:
            callback(epoch, history)
        log.debug("epoch %d objective %.6g defect %.2e", epoch + 1, tot[0], defect)

    history.qr_fixes = cayley.qr_fixes
    mean = mlp_forward(encoder, x)[0].mean(axis=0)
    return StRkmModel(encoder, decoder, u, mean, float(config.lam)), history


def with_feature_mean(model: StRkmModel, data) -> StRkmModel:
    """Copy of ``model`` whose frozen feature mean is recomputed on ``data``."""
    x = as_matrix(data, "dataset")
    return replace(model, feature_mean=mlp_forward(model.encoder, x)[0].mean(axis=0))
