"""Energy-based out-of-distribution detection with the Stiefel-Restricted Kernel Machine."""

from .baselines import PcaModel, pca_fit, pca_score
from .energy import (
    EnergyKind,
    Threshold,
    classify,
    energy,
    logsumexp_energy,
    select_threshold,
    softmax_score,
)
from .errors import DecompositionError, DivergenceError, FormatError, StrkmError, ValidationError
from .metrics import (
    EvalReport,
    aupr,
    auroc,
    evaluate,
    fpr_at_tpr,
    mmd_rbf,
    overlap_coefficient,
    standardize_scores,
    wasserstein1,
)
from .model import (
    StRkmModel,
    TrainConfig,
    TrainHistory,
    encode_centered,
    feature_covariance,
    latent,
    objective_terms,
    reconstruct,
    train,
)

__version__ = "0.1.0"
