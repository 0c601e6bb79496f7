"""Joint Gaussians-product mixture prior over K views.

Each class has a dense weight tensor over ``[M]^K`` and, per view, a bank of
M diagonal Gaussians.  A joint component is the product of one component
per view, so every view's marginal is an ordinary Gaussian mixture.  The
E-step and regularizer only ever need the ``(b, M)`` per-view divergence
matrices; the ``M^K`` sum is formed by broadcasting.
"""

from __future__ import annotations

from typing import List

import numpy as np

from . import _engine as eng
from ._prior import _MixturePriorBase
from .latents import LatentBatch, MultiLatentBatch

__all__ = [
    "ProductMixturePrior",
    "JointBudgetError",
    "init_multi",
    "e_step_joint",
    "marginalize_gamma",
    "m_step_multi",
    "apply_update_multi",
    "regularizer_joint",
    "regularizer_marginals_only",
    "redundancy_gap",
    "redundant_views_instance",
]

MAX_JOINT = 65536


class JointBudgetError(ValueError):
    """``M ** K`` exceeds the dense joint-weight budget."""


def _to_batch(X, y) -> MultiLatentBatch:
    if isinstance(X, MultiLatentBatch):
        return X
    if isinstance(X, LatentBatch):
        return X.as_multi()
    if isinstance(X, (list, tuple)):
        if y is None:
            raise ValueError("labels are required when X is a list of arrays")
        parts = [LatentBatch.from_array(a, y) for a in X]
        return MultiLatentBatch([p.mu for p in parts], [p.sigma for p in parts], y)
    raise TypeError("expected a MultiLatentBatch or a list of per-view [mu | sigma] arrays")


class ProductMixturePrior(_MixturePriorBase):
    """Per-class Gaussians-product mixture prior for K views.

    Takes every parameter of :class:`~gpmdl.prior_single.GaussianMixturePrior`
    plus ``max_joint`` (dense budget for ``M ** K``) and ``cell_min``
    (joint cells with less mass keep their previous weight).

    Attributes
    ----------
    means_, variances_ : ndarray of shape (n_classes, K, M, d)
    weights_ : ndarray of shape (n_classes,) + (M,) * K
    """

    _format = "gpmdl.prior_multi"

    def __init__(
        self,
        n_components=4,
        mode="lossless",
        kl_estimate="avg_var_prod",
        eta=(0.5, 0.5, 0.5),
        zeta0=1e-4,
        zeta_decay=0.99,
        eps_lossy=1.0,
        b_min=1e-3,
        prod_variant="tprime",
        sigma_update="exact",
        normalize_means="auto",
        n_classes=None,
        random_state=None,
        max_joint=MAX_JOINT,
        cell_min=1e-6,
    ):
        super().__init__(
            n_components=n_components,
            mode=mode,
            kl_estimate=kl_estimate,
            eta=eta,
            zeta0=zeta0,
            zeta_decay=zeta_decay,
            eps_lossy=eps_lossy,
            b_min=b_min,
            prod_variant=prod_variant,
            sigma_update=sigma_update,
            normalize_means=normalize_means,
            n_classes=n_classes,
            random_state=random_state,
        )
        self.max_joint = max_joint
        self.cell_min = cell_min

    def _batch(self, X, y):
        batch = _to_batch(X, y)
        if int(self.n_components) ** batch.n_views > self.max_joint:
            raise JointBudgetError(
                f"M^K = {self.n_components}^{batch.n_views} exceeds the budget {self.max_joint}"
            )
        if hasattr(self, "means_") and batch.n_views != self.means_.shape[1]:
            raise ValueError(f"prior has {self.means_.shape[1]} views, batch has {batch.n_views}")
        return batch

    def _views(self):
        K = self.means_.shape[1]
        return [self.means_[:, k] for k in range(K)], [self.variances_[:, k] for k in range(K)]

    def _set_views(self, means, variances):
        self.means_ = np.stack(means, axis=1)
        self.variances_ = np.stack(variances, axis=1)

    @property
    def n_views(self) -> int:
        return self.means_.shape[1]

    @property
    def marginal_weights_(self) -> np.ndarray:
        """``alpha[c, k, m]``: joint weights summed over every other view."""
        self._check_fitted()
        C, K = self.weights_.shape[0], self.n_views
        out = np.empty((C, K, int(self.n_components)))
        for k, marg in enumerate(eng.marginals(self.weights_)):
            out[:, k] = marg
        return out

    def e_step(self, X, y=None) -> np.ndarray:
        """Joint responsibilities, shape ``(b,) + (M,) * K``."""
        self._check_fitted()
        gamma, _ = self._joint_gamma(self._batch(X, y))
        return gamma

    def m_step(self, X, gamma, y=None) -> eng.Candidates:
        self._check_fitted()
        batch = self._batch(X, y)
        gamma = np.asarray(gamma, dtype=float)
        expected = (batch.size,) + (int(self.n_components),) * batch.n_views
        if gamma.shape != expected:
            raise ValueError(f"gamma must have shape {expected}, got {gamma.shape}")
        return self._m_step(batch, gamma)

    def regularizer(self, X, y=None):
        """``(value, [grad_mu per view], [grad_sigma per view])``."""
        res = self._regularizer(self._batch(X, y))
        return res.value, res.grad_mu, res.grad_sigma

    def regularizer_per_sample(self, X, y=None) -> np.ndarray:
        return self._regularizer(self._batch(X, y)).per_sample

    def regularizer_marginals_only(self, X, y=None):
        """Sum of per-view mixture regularizers under the induced marginal mixtures."""
        self._check_fitted()
        batch = self._batch(X, y)
        terms = self._terms(batch)
        alpha = self.marginal_weights_
        value, gmu, gsig = 0.0, [], []
        for k, t in enumerate(terms):
            res = eng.regularizer([t], eng.log_weights(alpha[:, k], batch.labels), self.kl_estimate)
            value += res.value
            gmu.append(res.grad_mu[0])
            gsig.append(res.grad_sigma[0])
        return value, gmu, gsig

    def view_divergences(self, X, y=None) -> List[np.ndarray]:
        """Per-view ``(b, M)`` divergence matrices, the only E-step input clients must share."""
        self._check_fitted()
        return [t.div for t in self._terms(self._batch(X, y))]


def init_multi(latents: MultiLatentBatch, M: int, seed: int, **params) -> ProductMixturePrior:
    return ProductMixturePrior(n_components=M, random_state=seed, **params).fit(latents)


def e_step_joint(prior: ProductMixturePrior, latents: MultiLatentBatch) -> np.ndarray:
    return prior.e_step(latents)


def marginalize_gamma(gamma_joint: np.ndarray) -> List[np.ndarray]:
    """Per-view ``(b, M)`` marginals of a joint responsibility tensor."""
    return eng.marginals(np.asarray(gamma_joint, dtype=float))


def m_step_multi(prior: ProductMixturePrior, latents: MultiLatentBatch, gamma_joint) -> eng.Candidates:
    return prior.m_step(latents, gamma_joint)


def apply_update_multi(prior: ProductMixturePrior, candidates, t=None, seed=None):
    return prior.apply_update(candidates, t=t, seed=seed)


def regularizer_joint(prior: ProductMixturePrior, latents: MultiLatentBatch):
    return prior.regularizer(latents)


def regularizer_marginals_only(prior: ProductMixturePrior, latents: MultiLatentBatch):
    return prior.regularizer_marginals_only(latents)


def redundant_views_instance(
    n_clusters: int,
    dim: int,
    n_classes: int = 1,
    samples_per_cluster: int = 50,
    seed: int = 0,
    cluster_probs=None,
    spread: float = 1.0,
):
    """Two views with identical latent parameters drawn from ``n_clusters`` cluster values.

    Returns ``(batch, prior)`` where the prior holds the optimal forms: each
    view's components sit at the cluster parameters with the cluster
    frequencies as weights, and the joint weights pair equal indices.
    """
    rng = np.random.default_rng(seed)
    R = n_clusters
    centers = rng.normal(scale=spread, size=(n_classes, R, dim))
    stds = np.sqrt(rng.uniform(0.2, 1.5, size=(n_classes, R, dim)))
    if cluster_probs is None:
        probs = np.full((n_classes, R), 1.0 / R)
    else:
        probs = np.broadcast_to(np.asarray(cluster_probs, float), (n_classes, R)).copy()
    # exact cluster frequencies so the batch matches the optimal prior weights
    counts = np.round(probs * samples_per_cluster * R).astype(int)
    mus, sigmas, labels = [], [], []
    for c in range(n_classes):
        for r in range(R):
            n = counts[c, r]
            mus.append(np.repeat(centers[c, r][None], n, axis=0))
            sigmas.append(np.repeat(stds[c, r][None], n, axis=0))
            labels.append(np.full(n, c))
    mu = np.concatenate(mus)
    sigma = np.concatenate(sigmas)
    y = np.concatenate(labels)
    weights_c = counts / counts.sum(axis=1, keepdims=True)

    batch = MultiLatentBatch([mu, mu.copy()], [sigma, sigma.copy()], y)
    prior = ProductMixturePrior(n_components=R, mode="lossless", kl_estimate="var_only", n_classes=n_classes)
    prior.n_classes_ = n_classes
    prior.dim_ = dim
    prior.t_ = 0
    prior.missing_classes_ = []
    joint = np.zeros((n_classes, R, R))
    for c in range(n_classes):
        joint[c][np.arange(R), np.arange(R)] = weights_c[c]
    prior.weights_ = joint
    prior._set_views([centers, centers.copy()], [stds**2, stds.copy() ** 2])
    prior.stale_ = np.zeros((n_classes, 2, R), dtype=bool)
    return batch, prior


def redundancy_gap(batch: MultiLatentBatch, prior: ProductMixturePrior):
    """``(R1, R2)``: marginals-only and joint regularizer values on a redundant-views batch."""
    r1, _, _ = prior.regularizer_marginals_only(batch)
    r2, _, _ = prior.regularizer(batch)
    return r1, r2
