"""Small stochastic encoders, a linear-softmax decoder and their training loop.

Everything is numpy with hand-written backpropagation.  An encoder maps one
view to ``(mu, log sigma^2)``; latents are drawn with the reparameterization
trick, concatenated across views and decoded by a single linear layer.
The loss is the mean cross-entropy plus ``lam / b`` times the summed
regularizer of the configured kind.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Sequence

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from . import _engine as eng
from .gaussian import VAR_FLOOR, DiagGaussian
from .latents import LatentBatch, MultiLatentBatch
from .prior_multi import ProductMixturePrior
from .prior_single import GaussianMixturePrior, vib_regularizer

__all__ = [
    "REGULARIZERS",
    "EncoderMLP",
    "DecoderLinear",
    "Adam",
    "TrainConfig",
    "PriorEngine",
    "Model",
    "encode",
    "sample_latent",
    "decoder_pass",
    "latent_grads",
    "step_noise",
    "loss_and_grads",
    "train_step",
    "evaluate",
    "estimate_mdl",
    "fit_model",
    "init_training",
    "TrainState",
    "NonFiniteLossError",
    "MDLClassifier",
    "save_checkpoint",
    "load_checkpoint",
]

REGULARIZERS = ("none", "vib", "cdvib", "gm_mdl", "gpm_mdl", "marginals_only")
_LOG_VAR_FLOOR = float(np.log(VAR_FLOOR))


class NonFiniteLossError(FloatingPointError):
    """Raised when a training step produces a non-finite loss."""


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


class EncoderMLP:
    """Leaky-ReLU MLP with a ``2 * latent_dim`` head ``[mu | log sigma^2]``.

    Parameters
    ----------
    in_dim : int
    latent_dim : int, default=8
    hidden : sequence of int, default=(64, 64)
    slope : float, default=0.1
        Negative slope of the activation.
    rng : numpy Generator, optional
        He-normal initialisation; all-zero parameters when omitted.
    """

    def __init__(self, in_dim, latent_dim=8, hidden=(64, 64), slope=0.1, rng=None):
        self.in_dim = int(in_dim)
        self.latent_dim = int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.slope = float(slope)
        sizes = (self.in_dim,) + self.hidden + (2 * self.latent_dim,)
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                W = np.zeros((fan_in, fan_out))
            else:
                W = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, X):
        """Return ``(mu, sigma, cache)`` for a ``(b, in_dim)`` batch."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected inputs of shape (b, {self.in_dim}), got {X.shape}")
        acts, pre = [X], []
        h = X
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ W + b
            pre.append(z)
            h = _leaky(z, self.slope) if layer < self.n_layers - 1 else z
            acts.append(h)
        d = self.latent_dim
        mu, logvar = h[:, :d], h[:, d:]
        clamped = logvar < _LOG_VAR_FLOOR
        sigma = np.exp(0.5 * np.maximum(logvar, _LOG_VAR_FLOOR))
        return mu, sigma, (acts, pre, sigma, clamped)

    def backward(self, cache, g_mu, g_sigma):
        """Parameter gradients given upstream gradients on ``mu`` and ``sigma``."""
        acts, pre, sigma, clamped = cache
        g_logvar = np.where(clamped, 0.0, 0.5 * sigma * g_sigma)
        g = np.concatenate([g_mu, g_logvar], axis=1)
        grads = [None] * len(self.params)
        for layer in reversed(range(self.n_layers)):
            if layer < self.n_layers - 1:
                g = g * np.where(pre[layer] > 0, 1.0, self.slope)
            grads[2 * layer] = acts[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer:
                g = g @ self.params[2 * layer].T
        return grads


class DecoderLinear:
    """Linear map from the concatenated latents to class logits."""

    def __init__(self, in_dim, n_classes, rng=None):
        self.in_dim = int(in_dim)
        self.n_classes = int(n_classes)
        if rng is None:
            W = np.zeros((self.in_dim, self.n_classes))
        else:
            W = rng.standard_normal((self.in_dim, self.n_classes)) * np.sqrt(1.0 / self.in_dim)
        self.params = [W, np.zeros(self.n_classes)]

    def logits(self, U):
        return U @ self.params[0] + self.params[1]

    def proba(self, U):
        return softmax(self.logits(U), axis=1)

    def backward(self, U, g_logits):
        """``(param grads, grad wrt U)``."""
        return [U.T @ g_logits, g_logits.sum(axis=0)], g_logits @ self.params[0].T


class Adam:
    """Adam with one state pair per parameter array; updates in place."""

    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = float(lr), float(beta1), float(beta2), float(eps)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``prior`` holds extra keyword arguments for the mixture priors
    (``mode``, ``kl_estimate``, ``eta``, ...).  ``init_factor`` sets the
    enlarged initialisation batch ``b~ = init_factor * batch_size``.
    """

    regularizer: str = "none"
    lam: float = 0.0
    batch_size: int = 64
    epochs: int = 30
    lr: float = 1e-3
    samples_train: int = 1
    samples_test: int = 5
    seed: int = 0
    latent_dim: int = 8
    hidden: tuple = (64, 64)
    n_components: int = 4
    init_factor: int = 8
    prior: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.samples_train < 1 or self.samples_test < 1:
            raise ValueError("samples per input must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        self.hidden = tuple(self.hidden)

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)


def _streams(seed):
    """Independent generators for weights, shuffling, priors and latent noise."""
    ss = np.random.SeedSequence(int(seed))
    w, shuffle, prior, noise = ss.spawn(4)
    return (
        np.random.default_rng(w),
        np.random.default_rng(shuffle),
        int(prior.generate_state(1)[0]),
        int(noise.generate_state(1)[0]),
    )


def step_noise(noise_seed: int, step: int, view: int, shape) -> np.ndarray:
    """Reparameterization noise for one view at one step; shared with the distributed run."""
    rng = np.random.default_rng([noise_seed & 0xFFFFFFFF, int(step), int(view), 0xA11E])
    return rng.standard_normal(shape)


class PriorEngine:
    """Regularizer dispatch over the configured kind.

    ``none`` and ``vib`` hold no state.  ``cdvib`` and ``gm_mdl`` keep one
    single-view mixture bank per view (``cdvib`` is the one-component,
    variational-only case).  ``gpm_mdl`` and ``marginals_only`` share one
    joint product-mixture prior; the latter regularizes with its induced
    marginal mixtures.
    """

    def __init__(self, kind, n_views, n_classes, n_components=4, seed=0, **prior_params):
        if kind not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {kind!r}")
        self.kind = kind
        self.n_views = int(n_views)
        self.n_classes = int(n_classes)
        self.priors = []
        if kind in ("cdvib", "gm_mdl"):
            params = dict(prior_params)
            if kind == "cdvib":
                params.update(kl_estimate="var_only", mode="lossless")
            M = 1 if kind == "cdvib" else n_components
            self.priors = [
                GaussianMixturePrior(
                    n_components=M, n_classes=n_classes, random_state=(seed + 7919 * k) & 0x7FFFFFFF,
                    **params,
                )
                for k in range(self.n_views)
            ]
        elif kind in ("gpm_mdl", "marginals_only"):
            self.priors = [
                ProductMixturePrior(
                    n_components=n_components, n_classes=n_classes, random_state=seed, **prior_params
                )
            ]

    @property
    def stateful(self) -> bool:
        return bool(self.priors)

    def initialise(self, mu, sigma, labels):
        batch = MultiLatentBatch(mu, sigma, labels)
        if self.kind in ("cdvib", "gm_mdl"):
            for k, p in enumerate(self.priors):
                p.fit(batch.view(k))
        elif self.priors:
            self.priors[0].fit(batch)

    def regularizer(self, mu, sigma, labels):
        """``(value, per_sample, grad_mu list, grad_sigma list)`` with the prior held constant."""
        K, b = len(mu), labels.shape[0]
        if self.kind == "none":
            zeros = [np.zeros_like(m) for m in mu]
            return 0.0, np.zeros(b), zeros, [np.zeros_like(s) for s in sigma]
        if self.kind == "vib":
            value, per, gmu, gsig = 0.0, np.zeros(b), [], []
            for k in range(K):
                lb = LatentBatch(mu[k], sigma[k], labels)
                v, gm, gs = vib_regularizer(lb)
                var = lb.sigma**2
                per += 0.5 * (var + lb.mu**2 - 1.0 - np.log(var)).sum(axis=1)
                value += v
                gmu.append(gm)
                gsig.append(gs)
            return value, per, gmu, gsig
        batch = MultiLatentBatch(mu, sigma, labels)
        if self.kind in ("cdvib", "gm_mdl"):
            value, per, gmu, gsig = 0.0, np.zeros(b), [], []
            for k, p in enumerate(self.priors):
                res = p._regularizer(p._batch(batch.view(k), None))
                value += res.value
                per += res.per_sample
                gmu.append(res.grad_mu[0])
                gsig.append(res.grad_sigma[0])
            return value, per, gmu, gsig
        prior = self.priors[0]
        if self.kind == "gpm_mdl":
            res = prior._regularizer(prior._batch(batch, None))
            return res.value, res.per_sample, res.grad_mu, res.grad_sigma
        value, gmu, gsig = prior.regularizer_marginals_only(batch)
        per = self._marginals_per_sample(batch)
        return value, per, gmu, gsig

    def _marginals_per_sample(self, batch):
        prior = self.priors[0]
        alpha = prior.marginal_weights_
        per = np.zeros(batch.size)
        for k, t in enumerate(prior._terms(batch)):
            per += eng.regularizer([t], eng.log_weights(alpha[:, k], batch.labels), prior.kl_estimate).per_sample
        return per

    def update(self, mu, sigma, labels):
        """One E/M/moving-average pass on the batch."""
        batch = MultiLatentBatch(mu, sigma, labels)
        if self.kind in ("cdvib", "gm_mdl"):
            for k, p in enumerate(self.priors):
                p.partial_fit(batch.view(k))
        elif self.priors:
            self.priors[0].partial_fit(batch)

    def snapshot(self):
        return [p.to_json() for p in self.priors]


@dataclass
class Model:
    """Per-view encoders plus the shared decoder."""

    encoders: List[EncoderMLP]
    decoder: DecoderLinear

    @property
    def n_views(self) -> int:
        return len(self.encoders)

    @property
    def latent_dim(self) -> int:
        return self.encoders[0].latent_dim

    def parameters(self) -> List[np.ndarray]:
        out = []
        for enc in self.encoders:
            out += enc.params
        return out + self.decoder.params

    @classmethod
    def build(cls, in_dims, n_classes, latent_dim=8, hidden=(64, 64), rng=None):
        encoders = [EncoderMLP(D, latent_dim, hidden, rng=rng) for D in in_dims]
        decoder = DecoderLinear(len(encoders) * latent_dim, n_classes, rng=rng)
        return cls(encoders, decoder)

    def encode(self, Xs):
        """Per-view ``(mu, sigma)`` lists."""
        mus, sigmas = [], []
        for enc, X in zip(self.encoders, Xs):
            mu, sigma, _ = enc.forward(X)
            mus.append(mu)
            sigmas.append(sigma)
        return mus, sigmas


def encode(enc: EncoderMLP, x) -> DiagGaussian:
    """Latent Gaussian of a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("encode takes one input vector")
    mu, sigma, _ = enc.forward(x[None, :])
    return DiagGaussian(mu[0], sigma[0] ** 2)


def sample_latent(g: DiagGaussian, n_samples: int, seed: int):
    """``(samples, xi)`` with ``samples = mean + std * xi``; ``xi`` is kept for backprop."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    xi = np.random.default_rng(seed).standard_normal((n_samples, g.dim))
    return g.mean + g.std * xi, xi


def _check_views(model: Model, Xs):
    if isinstance(Xs, np.ndarray):
        Xs = [Xs]
    if len(Xs) != model.n_views:
        raise ValueError(f"model has {model.n_views} views, got {len(Xs)} inputs")
    return [np.asarray(X, dtype=float) for X in Xs]


def decoder_pass(decoder: DecoderLinear, samples, y):
    """Cross-entropy averaged over draws and batch, with its gradients.

    ``samples[k]`` holds view ``k``'s latent draws, shape ``(S, b, d)``.
    Returns ``(ce, decoder grads, grads wrt samples)``.
    """
    S, b = samples[0].shape[0], y.shape[0]
    d = samples[0].shape[2]
    ce = 0.0
    dgrads = [np.zeros_like(p) for p in decoder.params]
    g_samples = [np.zeros_like(s) for s in samples]
    rows = np.arange(b)
    for s in range(S):
        U = np.concatenate([v[s] for v in samples], axis=1)
        logits = decoder.logits(U)
        lse = logsumexp(logits, axis=1)
        ce += float((lse - logits[rows, y]).sum()) / (b * S)
        g_logits = np.exp(logits - lse[:, None])
        g_logits[rows, y] -= 1.0
        g_logits /= b * S
        pg, gU = decoder.backward(U, g_logits)
        for j in range(2):
            dgrads[j] += pg[j]
        for k in range(len(samples)):
            g_samples[k][s] = gU[:, k * d:(k + 1) * d]
    return ce, dgrads, g_samples


def latent_grads(g_sample, xi):
    """Pathwise gradients on ``(mu, sigma)`` from gradients on ``mu + sigma * xi``."""
    gmu = np.zeros_like(g_sample[0])
    gsig = np.zeros_like(g_sample[0])
    for s in range(g_sample.shape[0]):
        gmu += g_sample[s]
        gsig += g_sample[s] * xi[s]
    return gmu, gsig


def loss_and_grads(model: Model, engine: PriorEngine, Xs, y, lam: float, xis):
    """Full training loss ``ce + lam / b * reg`` and gradients for every parameter.

    Returns ``(loss, ce, reg, grads, latents)`` with ``grads`` ordered as
    :meth:`Model.parameters` and ``latents = (mus, sigmas)``.
    """
    Xs = _check_views(model, Xs)
    y = np.asarray(y, dtype=np.int64)
    b = y.shape[0]
    caches, mus, sigmas = [], [], []
    for enc, X in zip(model.encoders, Xs):
        mu, sigma, cache = enc.forward(X)
        mus.append(mu)
        sigmas.append(sigma)
        caches.append(cache)
    if not all(np.all(np.isfinite(m)) and np.all(np.isfinite(s)) for m, s in zip(mus, sigmas)):
        raise NonFiniteLossError("non-finite latent parameters")
    samples = [mus[k] + sigmas[k] * xis[k] for k in range(len(mus))]
    ce, dgrads, g_samples = decoder_pass(model.decoder, samples, y)
    reg, _, rmu, rsig = engine.regularizer(mus, sigmas, y)
    grads = []
    for k, enc in enumerate(model.encoders):
        gmu, gsig = latent_grads(g_samples[k], xis[k])
        grads += enc.backward(caches[k], gmu + lam / b * rmu[k], gsig + lam / b * rsig[k])
    grads += dgrads
    return ce + lam * reg / b, ce, reg, grads, (mus, sigmas)


def train_step(model: Model, engine: PriorEngine, opt: Adam, Xs, y, cfg: TrainConfig, step: int, noise_seed: int):
    """Encoder/decoder Adam step followed by one prior update on the same batch."""
    Xs = _check_views(model, Xs)
    y = np.asarray(y, dtype=np.int64)
    d = model.latent_dim
    xis = [step_noise(noise_seed, step, k, (cfg.samples_train, y.shape[0], d)) for k in range(model.n_views)]
    loss, ce, reg, grads, (mus, sigmas) = loss_and_grads(model, engine, Xs, y, cfg.lam, xis)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss at step {step}: ce={ce!r}, reg={reg!r}")
    opt.step(model.parameters(), grads)
    if engine.stateful:
        engine.update(mus, sigmas, y)
    return loss, ce, reg


def predict_proba(model: Model, Xs, n_samples=5, seed=0):
    """Class probabilities averaged over ``n_samples`` latent draws."""
    Xs = _check_views(model, Xs)
    mus, sigmas = model.encode(Xs)
    rng = np.random.default_rng(seed)
    out = 0.0
    for _ in range(n_samples):
        U = np.concatenate([m + s * rng.standard_normal(m.shape) for m, s in zip(mus, sigmas)], axis=1)
        out = out + model.decoder.proba(U)
    return out / n_samples


def evaluate(model: Model, Xs, y, n_samples=5, seed=0):
    """Monte-Carlo 0-1 risk over ``n_samples`` latent draws per input.

    Returns ``(accuracy, risk, per_class_risk)``; ``per_class_risk`` has
    one entry per decoder class (NaN for classes absent from ``y``).
    """
    Xs = _check_views(model, Xs)
    y = np.asarray(y, dtype=np.int64)
    mus, sigmas = model.encode(Xs)
    rng = np.random.default_rng(seed)
    wrong = np.zeros(y.shape[0])
    for _ in range(n_samples):
        U = np.concatenate([m + s * rng.standard_normal(m.shape) for m, s in zip(mus, sigmas)], axis=1)
        wrong += model.decoder.logits(U).argmax(axis=1) != y
    per_sample = wrong / n_samples
    risk = float(per_sample.mean()) if y.size else 0.0
    C = model.decoder.n_classes
    per_class = np.full(C, np.nan)
    for c in range(C):
        sel = y == c
        if sel.any():
            per_class[c] = per_sample[sel].mean()
    return 1.0 - risk, risk, per_class


def estimate_mdl(model: Model, engine: PriorEngine, Xs, y):
    """Plug-in MDL: the configured KL estimate summed over samples.

    Returns ``(total, per_sample)``.  Without a learned prior the estimate
    is taken against the standard normal.
    """
    Xs = _check_views(model, Xs)
    y = np.asarray(y, dtype=np.int64)
    mus, sigmas = model.encode(Xs)
    if engine.stateful:
        _, per, _, _ = engine.regularizer(mus, sigmas, y)
    else:
        _, per, _, _ = PriorEngine("vib", model.n_views, model.decoder.n_classes).regularizer(mus, sigmas, y)
    return float(per.sum()), per


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainState:
    """Everything a training run mutates, plus its random streams."""

    model: Model
    engine: PriorEngine
    opt: Adam
    shuffle_rng: np.random.Generator
    noise_seed: int
    step: int = 0


def init_training(Xs, y, cfg: TrainConfig, n_classes=None) -> TrainState:
    """Build the model, optimiser and prior engine; seed the prior from an enlarged batch."""
    if isinstance(Xs, np.ndarray):
        Xs = [Xs]
    Xs = [np.asarray(X, dtype=float) for X in Xs]
    y = np.asarray(y, dtype=np.int64)
    C = int(n_classes) if n_classes is not None else int(y.max()) + 1
    w_rng, shuffle_rng, prior_seed, noise_seed = _streams(cfg.seed)
    model = Model.build([X.shape[1] for X in Xs], C, cfg.latent_dim, cfg.hidden, rng=w_rng)
    engine = PriorEngine(cfg.regularizer, len(Xs), C, cfg.n_components, prior_seed, **cfg.prior)
    opt = Adam(model.parameters(), lr=cfg.lr)
    if engine.stateful:
        n = y.shape[0]
        idx = shuffle_rng.permutation(n)[: min(n, cfg.init_factor * cfg.batch_size)]
        mus, sigmas = model.encode([X[idx] for X in Xs])
        engine.initialise(mus, sigmas, y[idx])
    return TrainState(model, engine, opt, shuffle_rng, noise_seed)


def fit_model(Xs, y, cfg: TrainConfig, n_classes=None, callback=None):
    """Train from scratch; returns ``(model, engine, history)``.

    ``history`` holds one dict per epoch with mean loss, cross-entropy and
    regularizer.  ``callback(epoch, model, engine, record)`` runs after each
    epoch.
    """
    if isinstance(Xs, np.ndarray):
        Xs = [Xs]
    Xs = [np.asarray(X, dtype=float) for X in Xs]
    y = np.asarray(y, dtype=np.int64)
    st = init_training(Xs, y, cfg, n_classes)
    history = []
    for epoch in range(cfg.epochs):
        tot = np.zeros(3)
        count = 0
        for idx in _batches(y.shape[0], cfg.batch_size, st.shuffle_rng):
            try:
                out = train_step(st.model, st.engine, st.opt, [X[idx] for X in Xs], y[idx], cfg, st.step, st.noise_seed)
            except NonFiniteLossError as exc:
                exc.state = st
                raise
            tot += np.asarray(out) * idx.size
            count += idx.size
            st.step += 1
        record = {"epoch": epoch, "loss": tot[0] / count, "ce": tot[1] / count, "reg": tot[2] / count}
        history.append(record)
        if callback is not None:
            callback(epoch, st.model, st.engine, record)
    return st.model, st.engine, history


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: Model, path) -> None:
    """Write ``path.json`` (layout and shapes) and ``path.bin`` (little-endian float64)."""
    path = Path(path)
    arrays, entries, offset = [], [], 0
    for k, enc in enumerate(model.encoders):
        for j, p in enumerate(enc.params):
            entries.append({"name": f"encoder{k}.{j}", "shape": list(p.shape), "offset": offset})
            arrays.append(p)
            offset += p.size * 8
    for j, p in enumerate(model.decoder.params):
        entries.append({"name": f"decoder.{j}", "shape": list(p.shape), "offset": offset})
        arrays.append(p)
        offset += p.size * 8
    header = {
        "format": "gpmdl.model",
        "version": 1,
        "encoders": [
            {"in_dim": e.in_dim, "latent_dim": e.latent_dim, "hidden": list(e.hidden), "slope": e.slope}
            for e in model.encoders
        ],
        "n_classes": model.decoder.n_classes,
        "arrays": entries,
        "nbytes": offset,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=1))
    with open(path.with_suffix(".bin"), "wb") as fh:
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("format") != "gpmdl.model":
        raise ValueError(f"{path}: not a model checkpoint")
    blob = path.with_suffix(".bin").read_bytes()
    if len(blob) != header["nbytes"]:
        raise ValueError(f"{path}: expected {header['nbytes']} bytes, found {len(blob)}")
    encoders = [
        EncoderMLP(e["in_dim"], e["latent_dim"], e["hidden"], e["slope"]) for e in header["encoders"]
    ]
    decoder = DecoderLinear(len(encoders) * encoders[0].latent_dim, header["n_classes"])
    model = Model(encoders, decoder)
    for p, entry in zip(model.parameters(), header["arrays"]):
        if list(p.shape) != entry["shape"]:
            raise ValueError(f"{path}: shape mismatch for {entry['name']}")
        n = int(np.prod(entry["shape"], dtype=np.int64))
        p[...] = np.frombuffer(blob, dtype="<f8", count=n, offset=entry["offset"]).reshape(p.shape)
    return model


# -- estimator -------------------------------------------------------------------


class MDLClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Stochastic-encoder classifier regularized by a (learned) latent prior.

    Parameters
    ----------
    regularizer : {"none", "vib", "cdvib", "gm_mdl", "gpm_mdl", "marginals_only"}
    lam : float
        Regularizer weight.
    n_components : int
        Mixture size per class (views) for the mixture regularizers.
    mode, kl_estimate : str
        Passed to the priors.
    latent_dim, hidden, batch_size, epochs, lr, samples_train, samples_test
        Network and optimiser settings.
    random_state : int

    Notes
    -----
    ``X`` is either one ``(n, D)`` array (single view) or a list of per-view
    arrays sharing the row order.  :meth:`transform` returns the
    concatenated latent means.
    """

    def __init__(
        self,
        regularizer="gm_mdl",
        lam=0.01,
        n_components=4,
        mode="lossless",
        kl_estimate="avg_var_prod",
        latent_dim=8,
        hidden=(64, 64),
        batch_size=64,
        epochs=30,
        lr=1e-3,
        samples_train=1,
        samples_test=5,
        random_state=0,
    ):
        self.regularizer = regularizer
        self.lam = lam
        self.n_components = n_components
        self.mode = mode
        self.kl_estimate = kl_estimate
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.samples_train = samples_train
        self.samples_test = samples_test
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        prior = {}
        if self.regularizer not in ("none", "vib"):
            prior = {"mode": self.mode, "kl_estimate": self.kl_estimate}
        return TrainConfig(
            regularizer=self.regularizer,
            lam=float(self.lam),
            batch_size=int(self.batch_size),
            epochs=int(self.epochs),
            lr=float(self.lr),
            samples_train=int(self.samples_train),
            samples_test=int(self.samples_test),
            seed=int(self.random_state or 0),
            latent_dim=int(self.latent_dim),
            hidden=tuple(self.hidden),
            n_components=int(self.n_components),
            prior=prior,
        )

    @staticmethod
    def _views(X):
        if isinstance(X, (list, tuple)):
            return [np.asarray(x, dtype=float) for x in X]
        return [np.asarray(X, dtype=float)]

    def fit(self, X, y):
        Xs = self._views(X)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        self.model_, self.engine_, self.history_ = fit_model(Xs, y_idx, self._config(), len(self.classes_))
        self.n_views_ = len(Xs)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, self._views(X), self.samples_test, int(self.random_state or 0))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        mus, _ = self.model_.encode(self._views(X))
        return np.concatenate(mus, axis=1)

    def risk(self, X, y, n_samples=None, seed=0):
        """Monte-Carlo 0-1 risk on ``(X, y)``."""
        check_is_fitted(self, "model_")
        y_idx = np.searchsorted(self.classes_, y)
        n = self.samples_test if n_samples is None else n_samples
        return evaluate(self.model_, self._views(X), y_idx, n, seed)[1]

    def mdl(self, X, y):
        """Plug-in MDL estimate (nats) of the representations of ``(X, y)``."""
        check_is_fitted(self, "model_")
        return estimate_mdl(self.model_, self.engine_, self._views(X), np.searchsorted(self.classes_, y))[0]
