"""Description-length regularizers for (multi-view) representation learning.

Generalization bounds driven by the minimum description length of the
latent variables, Gaussian-mixture and Gaussians-product-mixture priors
learned along training, small numpy encoders trained with these
regularizers, a deterministic client/server simulator for the multi-view
case, synthetic data and a command-line front end.
"""

from .bounds import (
    BoundReport,
    BoundSpec,
    RiskPair,
    evaluate_bounds,
    h_b,
    h_C,
    h_D,
    h_D_inverse,
    thm1_bound,
    thm2_gen_bound,
)
from .data import SynthDataset, generate, load_csv, write_csv
from .gaussian import DiagGaussian, GaussianMixture, d_est, d_prod, d_var, kl_diag, mc_kl
from .latents import LatentBatch, MultiLatentBatch
from .nets import MDLClassifier, TrainConfig, estimate_mdl, evaluate, fit_model
from .prior_multi import ProductMixturePrior
from .prior_single import GaussianMixturePrior

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "BoundSpec",
    "RiskPair",
    "evaluate_bounds",
    "h_b",
    "h_C",
    "h_D",
    "h_D_inverse",
    "thm1_bound",
    "thm2_gen_bound",
    "SynthDataset",
    "generate",
    "load_csv",
    "write_csv",
    "DiagGaussian",
    "GaussianMixture",
    "d_est",
    "d_prod",
    "d_var",
    "kl_diag",
    "mc_kl",
    "LatentBatch",
    "MultiLatentBatch",
    "MDLClassifier",
    "TrainConfig",
    "estimate_mdl",
    "evaluate",
    "fit_model",
    "ProductMixturePrior",
    "GaussianMixturePrior",
]
