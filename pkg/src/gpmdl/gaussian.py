"""Diagonal-Gaussian algebra and KL estimates against Gaussian mixtures.

``d_var`` is the variational upper bound, ``d_prod`` the product-of-Gaussians
lower bound and ``d_est`` their average.  ``mc_kl`` is a plain Monte-Carlo
estimate used to check that ``d_prod <= KL <= d_var``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-8
GAMMA_ZERO = 1e-12
_LOG2PI = np.log(2.0 * np.pi)

__all__ = [
    "VAR_FLOOR",
    "DiagGaussian",
    "GaussianMixture",
    "kl_diag",
    "d_var",
    "d_prod",
    "d_est",
    "kl_lossy_single",
    "mc_kl",
    "optimal_gamma",
]


@dataclass
class DiagGaussian:
    """Gaussian with diagonal covariance; variances are clamped to ``VAR_FLOOR``."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.var = np.maximum(np.atleast_1d(np.asarray(self.var, dtype=float)), VAR_FLOOR)
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ValueError(
                f"mean and var must be 1-d of equal length, got {self.mean.shape} and {self.var.shape}"
            )
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise ValueError("non-finite Gaussian parameters")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def logpdf(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        z = (u - self.mean) ** 2 / self.var
        return -0.5 * (z.sum(axis=-1) + np.log(self.var).sum() + self.dim * _LOG2PI)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.dim))


@dataclass
class GaussianMixture:
    weights: np.ndarray
    components: Sequence[DiagGaussian] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(self.components) < 1 or len(self.components) != self.weights.shape[0]:
            raise ValueError("need one weight per component and at least one component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must lie on the simplex, got {self.weights}")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components have mixed dimensions {sorted(dims)}")

    @classmethod
    def from_arrays(cls, weights, means, variances) -> "GaussianMixture":
        return cls(weights, [DiagGaussian(m, v) for m, v in zip(means, variances)])

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.stack([c.var for c in self.components])

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def logpdf(self, u: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        comp = np.stack([c.logpdf(u) for c in self.components], axis=-1)
        return logsumexp(comp + logw, axis=-1)


def _check_dims(p: DiagGaussian, d: int):
    if p.dim != d:
        raise ValueError(f"dimension mismatch: {p.dim} != {d}")


def kl_diag(p: DiagGaussian, q: DiagGaussian) -> float:
    """Closed-form ``KL(p || q)`` in nats."""
    _check_dims(p, q.dim)
    terms = 0.5 * (np.log(q.var / p.var) + (p.var + (p.mean - q.mean) ** 2) / q.var - 1.0)
    return float(max(terms.sum(), 0.0))


def _component_kls(p: DiagGaussian, q: GaussianMixture) -> np.ndarray:
    _check_dims(p, q.dim)
    return np.array([kl_diag(p, c) for c in q.components])


def optimal_gamma(p: DiagGaussian, q: GaussianMixture) -> np.ndarray:
    """Responsibilities minimising the variational bound: softmax of ``log alpha - KL``."""
    with np.errstate(divide="ignore"):
        logits = np.log(q.weights) - _component_kls(p, q)
    return np.exp(logits - logsumexp(logits))


def d_var(p: DiagGaussian, q: GaussianMixture, gamma=None) -> float:
    """Variational upper bound on ``KL(p || q)``.

    With ``gamma`` omitted the optimal responsibilities are used and the
    value is ``-log sum_m alpha_m exp(-KL(p || q_m))``.
    """
    kls = _component_kls(p, q)
    with np.errstate(divide="ignore"):
        logw = np.log(q.weights)
    if gamma is None:
        return float(-logsumexp(logw - kls))
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != q.weights.shape:
        raise ValueError("gamma must have one entry per component")
    if np.any(gamma < 0) or abs(gamma.sum() - 1.0) > 1e-9:
        raise ValueError("gamma must lie on the simplex")
    live = gamma > GAMMA_ZERO
    if np.any(live & (q.weights <= 0)):
        raise ValueError("gamma puts mass on a component with zero weight")
    g = gamma[live]
    return float(np.sum(g * (kls[live] - logw[live] + np.log(g))))


def _log_t(p: DiagGaussian, q: GaussianMixture, variant: str) -> np.ndarray:
    means, variances = q.means, q.variances
    if variant == "exact":
        v = variances + p.var
    elif variant == "tprime":
        v = variances
    else:
        raise ValueError(f"variant must be 'exact' or 'tprime', got {variant!r}")
    return -0.5 * (((p.mean - means) ** 2 / v).sum(axis=1) + np.log(v).sum(axis=1) + p.dim * _LOG2PI)


def d_prod(p: DiagGaussian, q: GaussianMixture, variant: str = "exact") -> float:
    """Product-of-Gaussians estimate; a lower bound on ``KL(p || q)`` for ``variant='exact'``."""
    _check_dims(p, q.dim)
    entropy = 0.5 * (p.dim * (_LOG2PI + 1.0) + np.log(p.var).sum())
    with np.errstate(divide="ignore"):
        logw = np.log(q.weights)
    return float(-(entropy + logsumexp(logw + _log_t(p, q, variant))))


def d_est(p: DiagGaussian, q: GaussianMixture, variant: str = "exact") -> float:
    """Average of :func:`d_var` (optimal responsibilities) and :func:`d_prod`."""
    return 0.5 * (d_var(p, q) + d_prod(p, q, variant))


def kl_lossy_single(p: DiagGaussian, comp: DiagGaussian, eps: float, scale: float | None = None) -> float:
    """Lossy divergence: a mean term at fixed isotropic variance plus an ``eps``-smoothed variance term.

    ``scale`` is the denominator of the mean term, ``sqrt(d)`` for a single
    view and ``sqrt(K d)`` in the joint multi-view prior.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    _check_dims(p, comp.dim)
    scale = np.sqrt(p.dim) if scale is None else scale
    mean_term = np.sum((p.mean - comp.mean) ** 2) / scale
    sp, sq = p.var + eps, comp.var + eps
    var_term = 0.5 * (np.log(sq / sp) + sp / sq - 1.0)
    return float(max(mean_term + var_term.sum(), 0.0))


def mc_kl(p: DiagGaussian, q: GaussianMixture, n_samples: int, seed: int = 0, chunk: int = 200_000):
    """Monte-Carlo estimate of ``KL(p || q)`` with its standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    total, total_sq, done = 0.0, 0.0, 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        u = p.sample(m, rng)
        r = p.logpdf(u) - q.logpdf(u)
        total += r.sum()
        total_sq += np.square(r).sum()
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean**2, 0.0)
    stderr = np.sqrt(var / n_samples) if n_samples > 1 else 0.0
    return float(mean), float(stderr)
