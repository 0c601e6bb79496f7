"""Containers passed between encoders and prior engines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .gaussian import VAR_FLOOR

_SIGMA_FLOOR = float(np.sqrt(VAR_FLOOR))


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d (batch, dim), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _as_labels(y, b):
    y = np.asarray(y)
    if y.shape != (b,):
        raise ValueError(f"labels must have shape ({b},), got {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer) and not np.all(y == np.round(y))):
        raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError("labels must be nonnegative")
    return y


@dataclass
class LatentBatch:
    """Per-sample latent means and standard deviations with class labels."""

    mu: np.ndarray
    sigma: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.mu = _as_matrix(self.mu, "mu")
        self.sigma = np.maximum(_as_matrix(self.sigma, "sigma"), _SIGMA_FLOOR)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ in shape")
        self.labels = _as_labels(self.labels, self.mu.shape[0])

    @property
    def size(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    @classmethod
    def from_array(cls, X, y) -> "LatentBatch":
        """Split an encoder-style ``(b, 2d)`` array ``[mu | sigma]``."""
        X = _as_matrix(X, "X")
        if X.shape[1] % 2:
            raise ValueError("expected an even number of columns: [mu | sigma]")
        d = X.shape[1] // 2
        return cls(X[:, :d], X[:, d:], y)

    def as_multi(self) -> "MultiLatentBatch":
        return MultiLatentBatch([self.mu], [self.sigma], self.labels)


@dataclass
class MultiLatentBatch:
    """Per-view latent parameters for K views sharing one label vector."""

    mu: List[np.ndarray]
    sigma: List[np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        if len(self.mu) != len(self.sigma) or len(self.mu) < 1:
            raise ValueError("need matching, non-empty per-view mu and sigma lists")
        self.mu = [_as_matrix(m, f"mu[{k}]") for k, m in enumerate(self.mu)]
        self.sigma = [
            np.maximum(_as_matrix(s, f"sigma[{k}]"), _SIGMA_FLOOR) for k, s in enumerate(self.sigma)
        ]
        shape = self.mu[0].shape
        for k in range(len(self.mu)):
            if self.mu[k].shape != shape or self.sigma[k].shape != shape:
                raise ValueError(f"view {k} has inconsistent shape")
        self.labels = _as_labels(self.labels, shape[0])

    @property
    def n_views(self) -> int:
        return len(self.mu)

    @property
    def size(self) -> int:
        return self.mu[0].shape[0]

    @property
    def dim(self) -> int:
        return self.mu[0].shape[1]

    def view(self, k: int) -> LatentBatch:
        return LatentBatch(self.mu[k], self.sigma[k], self.labels)

    def take(self, idx: Sequence[int]) -> "MultiLatentBatch":
        idx = np.asarray(idx)
        return MultiLatentBatch(
            [m[idx] for m in self.mu], [s[idx] for s in self.sigma], self.labels[idx]
        )
