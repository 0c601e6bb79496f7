"""Shared estimator logic for the mixture priors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import _engine as eng
from .latents import MultiLatentBatch


@dataclass(frozen=True)
class UpdateHyper:
    """Moving-average rates, jitter schedule and divergence settings of a prior."""

    eta1: float = 0.5
    eta2: float = 0.5
    eta3: float = 0.5
    zeta0: float = 1e-4
    zeta_decay: float = 0.99
    eps_lossy: float | tuple = 1.0
    mode: str = "lossless"
    kl_estimate: str = "avg_var_prod"

    def __post_init__(self):
        for name in ("eta1", "eta2", "eta3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.zeta0 < 0 or self.zeta_decay < 0:
            raise ValueError("noise schedule must be nonnegative")
        if self.mode not in eng.MODES:
            raise ValueError(f"mode must be one of {eng.MODES}, got {self.mode!r}")
        if self.kl_estimate not in eng.KL_ESTIMATES:
            raise ValueError(f"kl_estimate must be one of {eng.KL_ESTIMATES}, got {self.kl_estimate!r}")

    @property
    def eta(self):
        return (self.eta1, self.eta2, self.eta3)

    def zeta(self, t: int):
        """Noise variances ``(zeta_1, zeta_2)`` at iteration ``t``."""
        z = self.zeta0 * self.zeta_decay**t
        return (z, z)

    def eps_for(self, k: int) -> float:
        if np.ndim(self.eps_lossy) == 0:
            return float(self.eps_lossy)
        return float(self.eps_lossy[k])


def view_seed(seed: int, t: int, k: int) -> np.random.Generator:
    """Noise stream for view ``k`` at iteration ``t``; shared by the monolithic and distributed paths."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(t), int(k), 0x5EED])


class _MixturePriorBase(BaseEstimator):
    """Per-class (product) Gaussian mixture prior updated along training.

    Subclasses fix the number of views and the input container.
    """

    _format = None

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
    ):
        self.n_components = n_components
        self.mode = mode
        self.kl_estimate = kl_estimate
        self.eta = eta
        self.zeta0 = zeta0
        self.zeta_decay = zeta_decay
        self.eps_lossy = eps_lossy
        self.b_min = b_min
        self.prod_variant = prod_variant
        self.sigma_update = sigma_update
        self.normalize_means = normalize_means
        self.n_classes = n_classes
        self.random_state = random_state

    # -- configuration -------------------------------------------------

    @property
    def hyper(self) -> UpdateHyper:
        e1, e2, e3 = self.eta
        eps = self.eps_lossy if np.ndim(self.eps_lossy) == 0 else tuple(self.eps_lossy)
        return UpdateHyper(e1, e2, e3, self.zeta0, self.zeta_decay, eps, self.mode, self.kl_estimate)

    def _normalize(self) -> bool:
        if self.normalize_means == "auto":
            return self.mode == "lossy"
        return bool(self.normalize_means)

    def _seed(self) -> int:
        return 0 if self.random_state is None else int(self.random_state)

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(f"{type(self).__name__} is not initialised; call fit first")

    # -- subclass hooks --------------------------------------------------

    def _batch(self, X, y) -> MultiLatentBatch:
        raise NotImplementedError

    def _views(self):
        """Component banks as lists of ``(C, M, d)`` arrays."""
        raise NotImplementedError

    def _set_views(self, means, variances):
        raise NotImplementedError

    @property
    def n_views(self) -> int:
        return 1

    # -- initialisation ------------------------------------------------

    def _init_from(self, batch: MultiLatentBatch):
        self.hyper  # raises on invalid settings
        K, M = batch.n_views, int(self.n_components)
        if M < 1:
            raise ValueError("n_components must be >= 1")
        C = int(self.n_classes) if self.n_classes is not None else int(batch.labels.max()) + 1
        if batch.labels.max() >= C:
            raise ValueError(f"label {batch.labels.max()} outside [0, {C})")
        rng = np.random.default_rng(self._seed())
        means, missing = eng.kmeanspp_init(batch.mu, batch.labels, C, M, rng)
        variances = eng.init_variances(K, C, M, batch.dim, rng)
        for c in missing:
            for k in range(K):
                means[k][c] = 0.0
                variances[k][c] = 1.0
        self.n_classes_ = C
        self.dim_ = batch.dim
        self.missing_classes_ = list(missing)
        self.weights_ = np.full((C,) + (M,) * K, float(M) ** -K)
        self._set_views(means, variances)
        self.t_ = 0
        self.stale_ = np.zeros((C, K, M), dtype=bool)

    # -- E / M / update --------------------------------------------------

    def _terms(self, batch: MultiLatentBatch, prod_variant=None):
        means, variances = self._views()
        if batch.labels.size and batch.labels.max() >= self.n_classes_:
            raise ValueError(f"label {batch.labels.max()} outside [0, {self.n_classes_})")
        if batch.dim != self.dim_:
            raise ValueError(f"latent dimension {batch.dim} != prior dimension {self.dim_}")
        K = batch.n_views
        hyper = self.hyper
        pv = self.prod_variant if prod_variant is None else prod_variant
        return [
            eng.view_terms(
                batch.mu[k], batch.sigma[k], batch.labels, means[k], variances[k],
                self.mode, hyper.eps_for(k), K, pv,
            )
            for k in range(K)
        ]

    def _log_alpha(self, labels):
        return eng.log_weights(self.weights_, labels)

    def _joint_gamma(self, batch: MultiLatentBatch):
        terms = self._terms(batch)
        gamma, _ = eng.softmax_joint(eng.joint_logits(self._log_alpha(batch.labels), [t.div for t in terms]))
        return gamma, terms

    def _m_step(self, batch: MultiLatentBatch, gamma, terms=None) -> eng.Candidates:
        if terms is None:
            terms = self._terms(batch)
        beta = None
        if self.kl_estimate == "avg_var_prod":
            beta = eng.mstep_weights(terms, self._log_alpha(batch.labels))
        means, variances = self._views()
        return eng.m_step(
            batch.mu, batch.sigma, batch.labels, means, variances, self.weights_,
            gamma, beta, self.mode, self.kl_estimate, self.b_min,
            getattr(self, "cell_min", 1e-6), self.sigma_update,
        )

    def apply_update(self, candidates: eng.Candidates, t: int | None = None, seed: int | None = None):
        """Moving-average update towards ``candidates`` with jitter drawn for iteration ``t + 1``."""
        self._check_fitted()
        t = self.t_ if t is None else int(t)
        seed = self._seed() if seed is None else int(seed)
        hyper = self.hyper
        means, variances = self._views()
        rngs = [view_seed(seed, t + 1, k) for k in range(len(means))]
        new_m, new_v, new_w = eng.moving_average(
            means, variances, self.weights_, candidates, hyper.eta, hyper.zeta(t + 1), rngs,
            self._normalize(),
        )
        self._set_views(new_m, new_v)
        self.weights_ = new_w
        self.stale_ = candidates.stale
        self.t_ = t + 1
        return self

    def partial_fit(self, X, y=None):
        """One E-step, M-step and moving-average update on a mini-batch."""
        batch = self._batch(X, y)
        if not hasattr(self, "weights_"):
            return self.fit(batch)
        gamma, terms = self._joint_gamma(batch)
        cand = self._m_step(batch, gamma, terms)
        return self.apply_update(cand)

    def fit(self, X, y=None):
        """Seed the components from an (enlarged) batch with joint k-means++."""
        self._init_from(self._batch(X, y))
        return self

    # -- regularizer --------------------------------------------------

    def _regularizer(self, batch: MultiLatentBatch) -> eng.RegularizerResult:
        self._check_fitted()
        terms = self._terms(batch)
        return eng.regularizer(terms, self._log_alpha(batch.labels), self.kl_estimate)

    def log_density(self, u: Sequence[np.ndarray], labels) -> float:
        """``sum_i log Q_{y_i}(u_i)`` for latent samples ``u`` (one array per view)."""
        self._check_fitted()
        means, variances = self._views()
        labels = np.asarray(labels, dtype=np.int64)
        return eng.log_density([np.atleast_2d(a) for a in u], labels, means, variances, self.weights_)

    # -- persistence ----------------------------------------------------

    def _state(self) -> dict:
        self._check_fitted()
        means, variances = self._views()
        C, M = self.n_classes_, int(self.n_components)
        params = self.get_params()
        params["eta"] = list(params["eta"])
        if np.ndim(params["eps_lossy"]):
            params["eps_lossy"] = list(params["eps_lossy"])
        return {
            "format": self._format,
            "version": 1,
            "K": len(means),
            "M": M,
            "C": C,
            "d": self.dim_,
            "t": self.t_,
            "params": params,
            "missing_classes": list(self.missing_classes_),
            "classes": {
                str(c): {
                    "weights": self.weights_[c].reshape(-1).tolist(),
                    "means": [means[k][c].tolist() for k in range(len(means))],
                    "variances": [variances[k][c].tolist() for k in range(len(means))],
                }
                for c in range(C)
            },
        }

    def to_json(self) -> str:
        """Checkpoint as JSON; floats round-trip exactly."""
        return json.dumps(self._state())

    @classmethod
    def from_json(cls, text: str):
        state = json.loads(text)
        if state.get("format") != cls._format:
            raise ValueError(f"expected format {cls._format!r}, got {state.get('format')!r}")
        params = state["params"]
        params["eta"] = tuple(params["eta"])
        if isinstance(params.get("eps_lossy"), list):
            params["eps_lossy"] = tuple(params["eps_lossy"])
        obj = cls(**params)
        K, M, C, d = state["K"], state["M"], state["C"], state["d"]
        means = [np.zeros((C, M, d)) for _ in range(K)]
        variances = [np.zeros((C, M, d)) for _ in range(K)]
        weights = np.zeros((C,) + (M,) * K)
        for c in range(C):
            entry = state["classes"][str(c)]
            weights[c] = np.asarray(entry["weights"], dtype=float).reshape((M,) * K)
            for k in range(K):
                means[k][c] = np.asarray(entry["means"][k], dtype=float).reshape(M, d)
                variances[k][c] = np.asarray(entry["variances"][k], dtype=float).reshape(M, d)
        obj.n_classes_ = C
        obj.dim_ = d
        obj.t_ = state["t"]
        obj.missing_classes_ = list(state["missing_classes"])
        obj.weights_ = weights
        obj._set_views(means, variances)
        obj.stale_ = np.zeros((C, K, M), dtype=bool)
        return obj
