"""In-process simulation of the K-client / one-server training protocol.

Each client owns one view's encoder and its bank of per-class marginal
components.  The server owns the decoder and the joint weight tensor.  One
round on a mini-batch:

1. every client encodes its view and sends a :class:`ClientKLReport` with
   its ``(b, M)`` divergence matrices and its latent draws;
2. the server forms the joint responsibilities, the regularizer, the
   decoder loss and the new joint weights, then sends each client a
   :class:`ServerCoeffs` with that view's marginal coefficients, marginal
   weights and the gradients on its latent draws;
3. each client steps its encoder, runs its per-view M-step and moving
   average, and answers with a :class:`ClientAck` carrying a bank digest.

Only ``(b, M)``, ``(S, b, d)`` and ``(C, M)`` arrays cross the wire, never
the ``M^K`` joint tensor.  Messages are serialised to bytes and passed
through per-endpoint FIFO queues, so the server sees exactly what a client
sent.  With the same seeds the trajectory matches
:func:`gpmdl.nets.train_step` on a ``gpm_mdl`` engine.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import _engine as eng
from ._prior import view_seed
from .nets import Adam, DecoderLinear, EncoderMLP, Model, PriorEngine, decoder_pass, latent_grads, step_noise

__all__ = [
    "ClientKLReport",
    "ServerCoeffs",
    "ClientAck",
    "serialize_message",
    "deserialize_message",
    "DecodeError",
    "ProtocolError",
    "RoundLog",
    "ServerState",
    "ClientState",
    "split_state",
    "gather_model",
    "run_round",
    "dump_round_logs",
]

_MAGIC = b"GPMR"
_VERSION = 1


class DecodeError(ValueError):
    """Malformed message buffer; ``offset`` is where decoding stopped."""

    def __init__(self, offset, message):
        super().__init__(f"decode error at byte {offset}: {message}")
        self.offset = offset


class ProtocolError(RuntimeError):
    """A round received a missing, duplicate or out-of-range view report."""


# -- messages -------------------------------------------------------------------


@dataclass
class ClientKLReport:
    """Phase-1 upload of one client.

    ``div``, ``prod`` and ``dist`` are the ``(b, M)`` matrices of the
    variational divergence, the product-integral term and the mean-distance
    exponent against the components of each sample's class; ``entropy`` is
    the per-sample constant of the product term; ``samples`` are the
    ``(S, b, d)`` latent draws fed to the decoder.
    """

    view: int
    div: np.ndarray
    prod: np.ndarray
    dist: np.ndarray
    entropy: np.ndarray
    samples: np.ndarray

    TAG = 1
    FIELDS = ("div", "prod", "dist", "entropy", "samples")


@dataclass
class ServerCoeffs:
    """Phase-2 download for one client.

    ``gamma`` are the marginal responsibilities, ``beta_reg`` the marginal
    weights of the product term (empty for ``var_only``), ``beta_mstep`` the
    marginal mean-distance weights (empty for ``var_only``), ``alpha`` the
    view's marginal weights after the update, ``grad_samples`` the decoder
    gradients on the latent draws, ``updated`` the classes present in the
    batch.  ``reg_value`` is for logging only.
    """

    view: int
    gamma: np.ndarray
    beta_reg: np.ndarray
    beta_mstep: np.ndarray
    alpha: np.ndarray
    grad_samples: np.ndarray
    updated: np.ndarray
    reg_value: float

    TAG = 2
    FIELDS = ("gamma", "beta_reg", "beta_mstep", "alpha", "grad_samples", "updated")


@dataclass
class ClientAck:
    view: int
    digest: bytes

    TAG = 3
    FIELDS = ()


_TYPES = {cls.TAG: cls for cls in (ClientKLReport, ServerCoeffs, ClientAck)}


def _check_finite(msg):
    for name in msg.FIELDS:
        if not np.all(np.isfinite(getattr(msg, name))):
            raise ValueError(f"{type(msg).__name__}.{name} has non-finite entries")


def serialize_message(msg) -> bytes:
    """Canonical little-endian encoding, prefixed by its total length.

    Layout: ``u64 length | 'GPMR' | u8 version | u8 tag | i32 view`` then,
    per type, the scalar fields and each array as ``u8 ndim | u32 dims |
    float64 data``.  ``ClientAck`` carries ``u32 n | n digest bytes``.
    """
    _check_finite(msg)
    parts = [_MAGIC, struct.pack("<BBi", _VERSION, msg.TAG, int(msg.view))]
    if isinstance(msg, ServerCoeffs):
        parts.append(struct.pack("<d", float(msg.reg_value)))
    if isinstance(msg, ClientAck):
        parts.append(struct.pack("<I", len(msg.digest)) + bytes(msg.digest))
    for name in msg.FIELDS:
        a = np.ascontiguousarray(getattr(msg, name), dtype="<f8")
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape) + a.tobytes())
    body = b"".join(parts)
    return struct.pack("<Q", len(body) + 8) + body


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise DecodeError(self.pos, f"truncated while reading {what} ({n} bytes needed)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def array(self, name):
        (ndim,) = self.unpack("<B", f"{name}.ndim")
        shape = self.unpack(f"<{ndim}I", f"{name}.shape") if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = self.take(8 * count, f"{name}.data")
        return np.frombuffer(data, dtype="<f8").reshape(shape).astype(float)


def deserialize_message(buf: bytes):
    """Inverse of :func:`serialize_message`; raises :class:`DecodeError` with the byte offset."""
    r = _Reader(buf)
    (length,) = r.unpack("<Q", "length prefix")
    if length != len(buf):
        raise DecodeError(0, f"length prefix {length} != buffer size {len(buf)}")
    if bytes(r.take(4, "magic")) != _MAGIC:
        raise DecodeError(8, "bad magic")
    version, tag, view = r.unpack("<BBi", "header")
    if version != _VERSION:
        raise DecodeError(12, f"unsupported version {version}")
    if tag not in _TYPES:
        raise DecodeError(13, f"unknown message tag {tag}")
    cls = _TYPES[tag]
    kwargs = {"view": view}
    if cls is ServerCoeffs:
        (kwargs["reg_value"],) = r.unpack("<d", "reg_value")
    if cls is ClientAck:
        (n,) = r.unpack("<I", "digest length")
        kwargs["digest"] = bytes(r.take(n, "digest"))
    for name in cls.FIELDS:
        kwargs[name] = r.array(name)
    if r.pos != len(buf):
        raise DecodeError(r.pos, f"{len(buf) - r.pos} trailing bytes")
    if cls is ServerCoeffs:
        kwargs["updated"] = kwargs["updated"].astype(bool)
    return cls(**kwargs)


def digest(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


# -- states ----------------------------------------------------------------------------


@dataclass
class ServerState:
    decoder: DecoderLinear
    opt: Adam
    weights: np.ndarray
    n_views: int
    mode: str
    kl_estimate: str
    eta3: float
    cell_min: float
    lam: float
    t: int = 0


@dataclass
class ClientState:
    view: int
    encoder: EncoderMLP
    opt: Adam
    means: np.ndarray
    variances: np.ndarray
    hyper: object
    prod_variant: str
    b_min: float
    sigma_update: str
    normalize_means: bool
    prior_seed: int
    noise_seed: int
    samples_train: int
    alpha: Optional[np.ndarray] = None
    t: int = 0

    def bank_digest(self) -> bytes:
        h = hashlib.sha256()
        for a in (self.means, self.variances):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.digest()


def _clone_adam(opt: Adam, idx: Sequence[int]) -> Adam:
    new = Adam([], lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
    new.m = [opt.m[i].copy() for i in idx]
    new.v = [opt.v[i].copy() for i in idx]
    new.t = opt.t
    return new


def split_state(model: Model, engine: PriorEngine, opt: Adam, cfg, noise_seed: int):
    """Copy a monolithic ``gpm_mdl`` trainer state into one server and K clients."""
    if engine.kind != "gpm_mdl":
        raise ValueError("the distributed protocol runs the joint product-mixture regularizer")
    prior = engine.priors[0]
    prior._check_fitted()
    hyper = prior.hyper
    K = model.n_views
    n_enc = len(model.encoders[0].params)
    clients = []
    for k, enc in enumerate(model.encoders):
        e = EncoderMLP(enc.in_dim, enc.latent_dim, enc.hidden, enc.slope)
        e.params = [p.copy() for p in enc.params]
        idx = range(k * n_enc, (k + 1) * n_enc)
        clients.append(
            ClientState(
                view=k,
                encoder=e,
                opt=_clone_adam(opt, idx),
                means=prior.means_[:, k].copy(),
                variances=prior.variances_[:, k].copy(),
                hyper=hyper,
                prod_variant=prior.prod_variant,
                b_min=prior.b_min,
                sigma_update=prior.sigma_update,
                normalize_means=prior._normalize(),
                prior_seed=prior._seed(),
                noise_seed=int(noise_seed),
                samples_train=cfg.samples_train,
                alpha=prior.marginal_weights_[:, k].copy(),
                t=prior.t_,
            )
        )
    dec = DecoderLinear(model.decoder.in_dim, model.decoder.n_classes)
    dec.params = [p.copy() for p in model.decoder.params]
    server = ServerState(
        decoder=dec,
        opt=_clone_adam(opt, range(K * n_enc, K * n_enc + 2)),
        weights=prior.weights_.copy(),
        n_views=K,
        mode=prior.mode,
        kl_estimate=prior.kl_estimate,
        eta3=hyper.eta3,
        cell_min=prior.cell_min,
        lam=cfg.lam,
        t=prior.t_,
    )
    return server, clients


# -- round ---------------------------------------------------------------------------------


@dataclass
class RoundLog:
    """Append-only record of one round: message digests, sizes and phase timings."""

    round: int
    messages: List[dict] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    payloads: List[bytes] = field(default_factory=list)
    loss: float = float("nan")
    ce: float = float("nan")
    reg: float = float("nan")

    def record(self, direction, msg, payload, keep):
        self.messages.append({
            "direction": direction,
            "type": type(msg).__name__,
            "view": int(msg.view),
            "bytes": len(payload),
            "sha256": digest(payload),
        })
        if keep:
            self.payloads.append(payload)

    @property
    def bytes_up(self) -> int:
        return sum(m["bytes"] for m in self.messages if m["direction"] == "up")

    @property
    def bytes_down(self) -> int:
        return sum(m["bytes"] for m in self.messages if m["direction"] == "down")

    @property
    def digests(self) -> List[str]:
        return [m["sha256"] for m in self.messages]


class _Client:
    """Per-round scratch for one client between phases."""

    def __init__(self, state: ClientState, X, y, step):
        self.state = state
        self.X = np.asarray(X, dtype=float)
        self.y = y
        self.step = step

    def report(self) -> ClientKLReport:
        st = self.state
        mu, sigma, self.cache = st.encoder.forward(self.X)
        self.mu, self.sigma = mu, sigma
        K = self.n_views
        self.terms = eng.view_terms(
            mu, sigma, self.y, st.means, st.variances, st.hyper.mode,
            st.hyper.eps_for(st.view), K, st.prod_variant,
        )
        self.xi = step_noise(st.noise_seed, self.step, st.view, (st.samples_train,) + mu.shape)
        samples = mu + sigma * self.xi
        t = self.terms
        return ClientKLReport(st.view, t.div, t.prod, t.dist, t.entropy, samples)

    def apply(self, coeffs: ServerCoeffs, lam: float) -> ClientAck:
        st = self.state
        est = st.hyper.kl_estimate
        b = self.y.shape[0]
        beta_reg = coeffs.beta_reg if est == "avg_var_prod" else None
        beta_m = coeffs.beta_mstep if est == "avg_var_prod" else None
        rmu, rsig = eng.view_reg_grads(self.terms, coeffs.gamma, beta_reg, est)
        gmu, gsig = latent_grads(coeffs.grad_samples, self.xi)
        grads = st.encoder.backward(self.cache, gmu + lam / b * rmu, gsig + lam / b * rsig)
        st.opt.step(st.encoder.params, grads)

        cm, cv, _ = eng.m_step_view(
            self.mu, self.sigma, self.y, st.means, st.variances, coeffs.gamma, beta_m,
            st.hyper.mode, est, st.b_min, st.sigma_update,
        )
        rng = view_seed(st.prior_seed, st.t + 1, st.view)
        st.means, st.variances = eng.blend_view(
            st.means, st.variances, cm, cv, coeffs.updated, st.hyper.eta, st.hyper.zeta(st.t + 1),
            rng, st.normalize_means,
        )
        st.alpha = coeffs.alpha
        st.t += 1
        return ClientAck(st.view, st.bank_digest())


def _server_phase(server: ServerState, reports: Dict[int, ClientKLReport], y):
    K = server.n_views
    est = server.kl_estimate
    log_alpha = eng.log_weights(server.weights, y)
    divs = [reports[k].div for k in range(K)]
    per_sample, g_marg, b_marg = eng.regularizer_coeffs(
        divs, [reports[k].prod for k in range(K)], [reports[k].entropy for k in range(K)], log_alpha, est,
    )
    reg = float(per_sample.sum())
    ce, dgrads, g_samples = decoder_pass(server.decoder, [reports[k].samples for k in range(K)], y)
    b = y.shape[0]
    server.opt.step(server.decoder.params, dgrads)

    gamma, _ = eng.softmax_joint(eng.joint_logits(log_alpha, divs))
    beta = None
    m_marg = [np.zeros((0,))] * K
    if est == "avg_var_prod":
        beta, _ = eng.softmax_joint(eng.joint_logits(log_alpha, [reports[k].dist for k in range(K)]))
        m_marg = eng.marginals(beta)
    cand_w, updated, _ = eng.m_step_weights(y, server.weights, gamma, beta, est, server.cell_min)
    server.weights = eng.blend_weights(server.weights, cand_w, updated, server.eta3)
    server.t += 1
    alpha_marg = eng.marginals(server.weights)
    gamma_marg = eng.marginals(gamma)
    coeffs = [
        ServerCoeffs(
            view=k,
            gamma=gamma_marg[k],
            beta_reg=b_marg[k] if b_marg[k] is not None else np.zeros((0,)),
            beta_mstep=m_marg[k],
            alpha=alpha_marg[k],
            grad_samples=g_samples[k],
            updated=updated.astype(float),
            reg_value=reg,
        )
        for k in range(K)
    ]
    return coeffs, ce + server.lam * reg / b, ce, reg


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    Xs: Sequence[np.ndarray],
    y,
    step: int,
    round_index: Optional[int] = None,
    keep_payloads: bool = False,
    intercept=None,
) -> RoundLog:
    """Run the three-phase protocol on one mini-batch; states are updated in place.

    ``intercept(queue)``, if given, may edit the list of serialised reports
    before the server reads them (used to simulate lost or duplicated
    uploads).  Raises :class:`ProtocolError` unless exactly one report per
    view arrives.
    """
    K = server.n_views
    if len(clients) != K or len(Xs) != K:
        raise ProtocolError(f"expected {K} clients and views, got {len(clients)} and {len(Xs)}")
    y = np.asarray(y, dtype=np.int64)
    log = RoundLog(round=step if round_index is None else round_index)

    t0 = time.perf_counter()
    workers = []
    uplink = deque()
    for st, X in zip(clients, Xs):
        w = _Client(st, X, y, step)
        w.n_views = K
        workers.append(w)
        msg = w.report()
        payload = serialize_message(msg)
        log.record("up", msg, payload, keep_payloads)
        uplink.append(payload)
    if intercept is not None:
        uplink = deque(intercept(list(uplink)))
    t1 = time.perf_counter()

    reports: Dict[int, ClientKLReport] = {}
    while uplink:
        msg = deserialize_message(uplink.popleft())
        if not isinstance(msg, ClientKLReport):
            raise ProtocolError(f"server expected a ClientKLReport, got {type(msg).__name__}")
        if not 0 <= msg.view < K:
            raise ProtocolError(f"report for view {msg.view} outside [0, {K})")
        if msg.view in reports:
            raise ProtocolError(f"duplicate report from view {msg.view}")
        reports[msg.view] = msg
    missing = [k for k in range(K) if k not in reports]
    if missing:
        raise ProtocolError(f"missing report from view(s) {missing}")
    coeffs, log.loss, log.ce, log.reg = _server_phase(server, reports, y)
    if not np.isfinite(log.loss):
        raise FloatingPointError(f"non-finite loss in round {log.round}")
    downlinks = [deque() for _ in range(K)]
    for msg in coeffs:
        payload = serialize_message(msg)
        log.record("down", msg, payload, keep_payloads)
        downlinks[msg.view].append(payload)
    t2 = time.perf_counter()

    for w, queue in zip(workers, downlinks):
        msg = deserialize_message(queue.popleft())
        ack = w.apply(msg, server.lam)
        payload = serialize_message(ack)
        log.record("up", ack, payload, keep_payloads)
    t3 = time.perf_counter()
    log.timings = {"report": t1 - t0, "server": t2 - t1, "client_update": t3 - t2}
    return log


def gather_model(server: ServerState, clients: Sequence[ClientState]) -> Model:
    """Assemble a :class:`Model` view of the distributed parameters (shared arrays)."""
    return Model([c.encoder for c in clients], server.decoder)


def dump_round_logs(logs: Sequence[RoundLog], path) -> None:
    """Concatenate kept payloads into ``path.bin`` with a JSON index at ``path.json``."""
    path = Path(path)
    index, offset = [], 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for log in logs:
            if len(log.payloads) != len(log.messages):
                raise ValueError(f"round {log.round} was run without keep_payloads")
            entries = []
            for meta, payload in zip(log.messages, log.payloads):
                fh.write(payload)
                entries.append(dict(meta, offset=offset))
                offset += len(payload)
            index.append({"round": log.round, "messages": entries, "loss": log.loss})
    path.with_suffix(".json").write_text(json.dumps({"format": "gpmdl.roundlog", "rounds": index}, indent=1))
