"""Single-view Gaussian mixture prior, one mixture per class label.

The prior is learned along training: each mini-batch runs one E-step, one
M-step and a moving-average update with Gaussian jitter.  Its regularizer
is the KL estimate between each sample's latent Gaussian and the mixture of
that sample's class.

Example
-------
>>> prior = GaussianMixturePrior(n_components=2, random_state=0).fit(batch)
>>> value, grad_mu, grad_sigma = prior.regularizer(batch)
>>> prior.partial_fit(batch)
"""

from __future__ import annotations

import numpy as np

from . import _engine as eng
from ._prior import UpdateHyper, _MixturePriorBase
from .gaussian import GaussianMixture
from .latents import LatentBatch, MultiLatentBatch

__all__ = [
    "GaussianMixturePrior",
    "UpdateHyper",
    "init_single",
    "e_step_single",
    "m_step_single",
    "apply_update_single",
    "regularizer_single",
    "vib_regularizer",
    "prior_log_density",
]


def _to_batch(X, y) -> LatentBatch:
    if isinstance(X, LatentBatch):
        return X
    if isinstance(X, MultiLatentBatch):
        if X.n_views != 1:
            raise ValueError("single-view prior got a multi-view batch")
        return X.view(0)
    if y is None:
        raise ValueError("labels are required when X is an array")
    return LatentBatch.from_array(X, y)


class GaussianMixturePrior(_MixturePriorBase):
    """Per-class Gaussian mixture prior for one view.

    Parameters
    ----------
    n_components : int
        Mixture size ``M`` per class.
    mode : {"lossless", "lossy"}
        Divergence between a latent Gaussian and a component.
    kl_estimate : {"avg_var_prod", "var_only"}
        ``var_only`` uses the variational bound alone; ``avg_var_prod``
        averages it with the product-of-Gaussians estimate.
    eta : tuple of 3 floats
        Moving-average rates for means, variances and weights.
    zeta0, zeta_decay : float
        Jitter variance at iteration ``t`` is ``zeta0 * zeta_decay**t``.
    eps_lossy : float
        Variance offset of the lossy divergence.
    b_min : float
        Components with less responsibility mass keep their parameters.
    prod_variant : {"tprime", "exact"}
        Product-of-Gaussians integral with the component variance only, or
        with the summed variances.
    sigma_update : {"exact", "responsibility"}
        Denominator of the lossless ``avg_var_prod`` variance update: the
        stationary-point weight mass, or the plain responsibility mass.
    normalize_means : bool or "auto"
        Rescale component means to norm ``sqrt(d)`` after each update
        (``auto``: only in lossy mode).
    n_classes : int, optional
        Defaults to ``max(label) + 1`` of the initialisation batch.
    random_state : int, optional
        Seeds initialisation and jitter.

    Attributes
    ----------
    means_, variances_ : ndarray of shape (n_classes, M, d)
    weights_ : ndarray of shape (n_classes, M)
    missing_classes_ : list of int
        Classes absent from the initialisation batch (standard-normal components).
    t_ : int
        Number of updates applied.
    """

    _format = "gpmdl.prior_single"

    def _batch(self, X, y):
        return _to_batch(X, y).as_multi()

    def _views(self):
        return [self.means_], [self.variances_]

    def _set_views(self, means, variances):
        self.means_ = np.asarray(means[0])
        self.variances_ = np.asarray(variances[0])

    def mixture(self, c: int) -> GaussianMixture:
        self._check_fitted()
        return GaussianMixture.from_arrays(self.weights_[c], self.means_[c], self.variances_[c])

    def e_step(self, X, y=None) -> np.ndarray:
        """Responsibilities, shape ``(b, M)``; rows sum to one."""
        self._check_fitted()
        gamma, _ = self._joint_gamma(self._batch(X, y))
        return gamma

    def m_step(self, X, gamma, y=None) -> eng.Candidates:
        """Candidate parameters minimising the responsibility-fixed objective."""
        self._check_fitted()
        batch = self._batch(X, y)
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (batch.size, int(self.n_components)):
            raise ValueError(f"gamma must have shape ({batch.size}, {self.n_components})")
        return self._m_step(batch, gamma)

    def regularizer(self, X, y=None):
        """``(value, grad_mu, grad_sigma)`` summed over the batch, prior held constant."""
        res = self._regularizer(self._batch(X, y))
        return res.value, res.grad_mu[0], res.grad_sigma[0]

    def regularizer_per_sample(self, X, y=None) -> np.ndarray:
        return self._regularizer(self._batch(X, y)).per_sample


def init_single(latents: LatentBatch, M: int, seed: int, **params) -> GaussianMixturePrior:
    return GaussianMixturePrior(n_components=M, random_state=seed, **params).fit(latents)


def e_step_single(bank: GaussianMixturePrior, latents: LatentBatch) -> np.ndarray:
    return bank.e_step(latents)


def m_step_single(bank: GaussianMixturePrior, latents: LatentBatch, gamma) -> eng.Candidates:
    return bank.m_step(latents, gamma)


def apply_update_single(bank: GaussianMixturePrior, candidates, t=None, rng_seed=None):
    return bank.apply_update(candidates, t=t, seed=rng_seed)


def regularizer_single(bank: GaussianMixturePrior, latents: LatentBatch):
    return bank.regularizer(latents)


def vib_regularizer(latents: LatentBatch):
    """KL to the standard normal, summed over the batch, with gradients."""
    mu, sigma = latents.mu, latents.sigma
    var = sigma**2
    value = 0.5 * (var + mu**2 - 1.0 - np.log(var)).sum()
    return float(value), mu.copy(), sigma - 1.0 / sigma


def prior_log_density(bank: GaussianMixturePrior, latents_samples, labels) -> float:
    return bank.log_density([np.asarray(latents_samples, dtype=float)], labels)

