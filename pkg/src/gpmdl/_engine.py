"""Array-level machinery shared by the single-view and product-mixture priors.

Everything here works on K views at once; the single-view prior is the
``K == 1`` case.  Shapes:

* per-view latents ``mu[k]``, ``sigma[k]``: ``(b, d)``
* per-view components ``means[k]``, ``variances[k]``: ``(C, M, d)``
* joint weights ``weights``: ``(C,) + (M,) * K``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian import VAR_FLOOR

_LOG2PI = np.log(2.0 * np.pi)

MODES = ("lossless", "lossy")
KL_ESTIMATES = ("var_only", "avg_var_prod")
PROD_VARIANTS = ("tprime", "exact")


@dataclass
class ViewTerms:
    """Per-view divergence matrices against the components of each sample's class.

    ``div`` feeds the variational part, ``prod`` is ``-log t`` for the
    product part, ``dist`` is the exponent of the M-step weights and
    ``entropy`` is the per-sample entropy constant of the product part.
    Gradients are w.r.t. the latent mean and standard deviation.
    """

    div: np.ndarray
    div_dmu: np.ndarray
    div_dsigma: np.ndarray
    prod: np.ndarray
    prod_dmu: np.ndarray
    prod_dsigma: np.ndarray
    dist: np.ndarray
    entropy: np.ndarray
    entropy_dsigma: np.ndarray


def view_terms(
    mu: np.ndarray,
    sigma: np.ndarray,
    labels: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    mode: str,
    eps: float = 1.0,
    n_views: int = 1,
    prod_variant: str = "tprime",
) -> ViewTerms:
    b, d = mu.shape
    mq = means[labels]  # (b, M, d)
    vq = variances[labels]
    diff = mu[:, None, :] - mq
    sp = sigma[:, None, :]
    vp = np.maximum(sigma**2, VAR_FLOOR)[:, None, :]

    if mode == "lossless":
        div = 0.5 * (np.log(vq / vp) + (vp + diff**2) / vq - 1.0).sum(axis=-1)
        div_dmu = diff / vq
        div_dsigma = -1.0 / sp + sp / vq

        if prod_variant == "tprime":
            v = vq
            prod = 0.5 * (diff**2 / v + np.log(v) + _LOG2PI).sum(axis=-1)
            prod_dmu = diff / v
            prod_dsigma = np.zeros_like(diff)
        elif prod_variant == "exact":
            v = vq + vp
            prod = 0.5 * (diff**2 / v + np.log(v) + _LOG2PI).sum(axis=-1)
            prod_dmu = diff / v
            prod_dsigma = (1.0 / v - diff**2 / v**2) * sp
        else:
            raise ValueError(f"prod_variant must be one of {PROD_VARIANTS}")
        dist = 0.5 * (diff**2 / vq).sum(axis=-1)
        entropy = 0.5 * (np.log(vp[:, 0, :]) + _LOG2PI + 1.0).sum(axis=-1)
        entropy_dsigma = 1.0 / sigma
    elif mode == "lossy":
        scale = np.sqrt(n_views * d)
        sq = vq + eps
        spp = vp + eps
        div = (diff**2).sum(axis=-1) / scale + 0.5 * (np.log(sq / spp) + spp / sq - 1.0).sum(axis=-1)
        div_dmu = 2.0 * diff / scale
        div_dsigma = sp * (1.0 / sq - 1.0 / spp)
        prod = (diff**2).sum(axis=-1) / (2.0 * scale) + 0.5 * d * np.log(2.0 * np.pi * scale)
        prod_dmu = diff / scale
        prod_dsigma = np.zeros_like(diff)
        dist = (diff**2).sum(axis=-1) / (2.0 * scale)
        entropy = np.full(b, 0.5 * d * np.log(np.pi * np.e * scale))
        entropy_dsigma = np.zeros_like(sigma)
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")

    return ViewTerms(
        div=np.maximum(div, 0.0),
        div_dmu=div_dmu,
        div_dsigma=div_dsigma,
        prod=prod,
        prod_dmu=prod_dmu,
        prod_dsigma=prod_dsigma,
        dist=dist,
        entropy=entropy,
        entropy_dsigma=entropy_dsigma,
    )


def log_weights(weights: np.ndarray, labels: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights[labels])


def joint_logits(log_alpha: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """``log alpha[i, m^K] - sum_k mats[k][i, m_k]`` without materialising per-index sums."""
    K = len(mats)
    out = np.array(log_alpha, dtype=float, copy=True)
    for k, mat in enumerate(mats):
        shape = [mat.shape[0]] + [1] * K
        shape[k + 1] = mat.shape[1]
        out -= mat.reshape(shape)
    return out


def softmax_joint(logits: np.ndarray):
    """Row-wise softmax over all joint axes; returns ``(probs, log_normaliser)``."""
    b = logits.shape[0]
    flat = logits.reshape(b, -1)
    lse = logsumexp(flat, axis=1)
    probs = np.exp(flat - lse[:, None]).reshape(logits.shape)
    return probs, lse


def marginals(joint: np.ndarray) -> List[np.ndarray]:
    """Per-view marginals of a ``(b,) + (M,) * K`` tensor."""
    K = joint.ndim - 1
    out = []
    for k in range(K):
        axes = tuple(a for a in range(1, K + 1) if a != k + 1)
        out.append(joint.sum(axis=axes) if axes else joint.copy())
    return out


def combine_gradients(coeffs: np.ndarray, dmat: np.ndarray) -> np.ndarray:
    """``sum_m coeffs[i, m] * dmat[i, m, :]``."""
    return np.einsum("im,imj->ij", coeffs, dmat)


def view_reg_grads(t: ViewTerms, g: np.ndarray, bt: np.ndarray | None, kl_estimate: str):
    """Per-view regularizer gradients from the marginal coefficients ``g`` and ``bt``."""
    if kl_estimate == "var_only":
        return combine_gradients(g, t.div_dmu), combine_gradients(g, t.div_dsigma)
    gmu = 0.5 * combine_gradients(g, t.div_dmu) + 0.5 * combine_gradients(bt, t.prod_dmu)
    gsig = (
        0.5 * combine_gradients(g, t.div_dsigma)
        + 0.5 * combine_gradients(bt, t.prod_dsigma)
        - 0.5 * t.entropy_dsigma
    )
    return gmu, gsig


@dataclass
class RegularizerResult:
    value: float
    grad_mu: List[np.ndarray]
    grad_sigma: List[np.ndarray]
    per_sample: np.ndarray
    gamma: List[np.ndarray]


def regularizer_coeffs(divs, prods, entropies, log_alpha, kl_estimate):
    """Per-sample regularizer and the marginal coefficients its gradients need.

    Only the ``(b, M)`` divergence matrices enter here, so a server holding
    the joint weights can run it from the per-view reports.  Returns
    ``(per_sample, gamma marginals, beta marginals or None)``.
    """
    if kl_estimate not in KL_ESTIMATES:
        raise ValueError(f"kl_estimate must be one of {KL_ESTIMATES}, got {kl_estimate!r}")
    gamma, lse_var = softmax_joint(joint_logits(log_alpha, divs))
    per_sample = -lse_var
    b_marg = [None] * len(divs)
    if kl_estimate == "avg_var_prod":
        beta, lse_prod = softmax_joint(joint_logits(log_alpha, prods))
        b_marg = marginals(beta)
        per_sample = 0.5 * per_sample - 0.5 * (sum(entropies) + lse_prod)
    return per_sample, marginals(gamma), b_marg


def regularizer(
    terms: Sequence[ViewTerms],
    log_alpha: np.ndarray,
    kl_estimate: str,
) -> RegularizerResult:
    """Mixture regularizer value and gradients, prior held constant."""
    per_sample, g_marg, b_marg = regularizer_coeffs(
        [t.div for t in terms], [t.prod for t in terms], [t.entropy for t in terms], log_alpha, kl_estimate
    )
    grads = [view_reg_grads(t, g, bm, kl_estimate) for t, g, bm in zip(terms, g_marg, b_marg)]
    return RegularizerResult(
        value=float(per_sample.sum()),
        grad_mu=[g[0] for g in grads],
        grad_sigma=[g[1] for g in grads],
        per_sample=per_sample,
        gamma=g_marg,
    )


def mstep_weights(terms: Sequence[ViewTerms], log_alpha: np.ndarray) -> np.ndarray:
    """Joint M-step weights from the exponentiated mean distances."""
    beta, _ = softmax_joint(joint_logits(log_alpha, [t.dist for t in terms]))
    return beta


@dataclass
class Candidates:
    """M-step output.  ``updated`` masks classes present in the batch;
    ``stale`` marks (class, view, component) cells that kept old parameters."""

    means: List[np.ndarray]
    variances: List[np.ndarray]
    weights: np.ndarray
    updated: np.ndarray
    stale: np.ndarray
    stale_cells: np.ndarray


def view_mstep_coeffs(g: np.ndarray, bt: np.ndarray | None, mode: str, kl_estimate: str):
    """Weights for the mean update and the blend used by the variance update."""
    if kl_estimate == "var_only" or bt is None:
        return g, g
    if mode == "lossless":
        return 0.5 * (g + bt), 0.5 * (g + bt)
    return (2.0 * g + bt) / 3.0, 0.5 * (g + bt)


def m_step_view(
    mu: np.ndarray,
    sigma: np.ndarray,
    labels: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    g: np.ndarray,
    bt: np.ndarray | None,
    mode: str,
    kl_estimate: str,
    b_min: float = 1e-3,
    sigma_update: str = "exact",
):
    """Candidate ``(means, variances, stale)`` for one view from its marginal coefficients.

    ``g`` and ``bt`` are the ``(b, M)`` marginals of the joint responsibilities
    and of the mean-distance weights.  Only this view's latents are touched,
    which is what lets a client run it without seeing the other views.
    """
    C, M, d = means.shape
    onehot = np.zeros((labels.shape[0], C))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    w_mean, w_t = view_mstep_coeffs(g, bt, mode, kl_estimate)
    Wm = onehot.T @ w_mean
    Wg = onehot.T @ g
    mean_num = np.einsum("ic,im,ij->cmj", onehot, w_mean, mu)
    vp = np.maximum(sigma**2, VAR_FLOOR)
    # squared distance of each sample to its class's current components
    sq = (mu[:, None, :] - means[labels]) ** 2
    var_p = np.einsum("ic,im,ij->cmj", onehot, g, vp)
    if mode == "lossy":
        var_num, var_den = var_p, Wg
    elif kl_estimate == "var_only":
        var_num = var_p + np.einsum("ic,im,imj->cmj", onehot, g, sq)
        var_den = Wg
    else:
        var_num = var_p + 2.0 * np.einsum("ic,im,imj->cmj", onehot, w_t, sq)
        if sigma_update == "exact":
            var_den = 2.0 * (onehot.T @ w_t)
        elif sigma_update == "responsibility":
            var_den = Wg
        else:
            raise ValueError("sigma_update must be 'exact' or 'responsibility'")

    ok_mean = Wm >= b_min
    ok_var = var_den >= b_min
    new_means = np.where(ok_mean[..., None], mean_num / np.where(ok_mean, Wm, 1.0)[..., None], means)
    new_vars = np.where(ok_var[..., None], var_num / np.where(ok_var, var_den, 1.0)[..., None], variances)
    return new_means, np.maximum(new_vars, VAR_FLOOR), ~(ok_mean & ok_var)


def m_step_weights(
    labels: np.ndarray,
    weights: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray | None,
    kl_estimate: str,
    cell_min: float = 1e-6,
):
    """Candidate joint weights ``(weights, updated, stale_cells)``.

    Cells whose batch mass is below ``cell_min`` keep their previous weight;
    the remaining cells share what is left in proportion to their mass.
    """
    C = weights.shape[0]
    onehot = np.zeros((labels.shape[0], C))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    joint_w = 0.5 * (gamma + beta) if kl_estimate == "avg_var_prod" else gamma
    cell_mass = np.einsum("ic,i...->c...", onehot, joint_w)
    class_mass = cell_mass.reshape(C, -1).sum(axis=1)
    updated = class_mass > 0
    new_w = np.array(weights, dtype=float, copy=True)
    stale_cells = np.zeros(weights.shape, dtype=bool)
    for c in np.flatnonzero(updated):
        cell = cell_mass[c] / class_mass[c]
        under = cell_mass[c] < cell_min
        if np.any(under):
            kept = weights[c][under].sum()
            live = cell * ~under
            live_total = live.sum()
            if live_total > 0:
                cell = np.where(under, weights[c], live * (1.0 - kept) / live_total)
            else:
                cell = weights[c]
        new_w[c] = cell
        stale_cells[c] = under
    return new_w, updated, stale_cells


def m_step(
    mu: Sequence[np.ndarray],
    sigma: Sequence[np.ndarray],
    labels: np.ndarray,
    means: Sequence[np.ndarray],
    variances: Sequence[np.ndarray],
    weights: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray | None,
    mode: str,
    kl_estimate: str,
    b_min: float = 1e-3,
    cell_min: float = 1e-6,
    sigma_update: str = "exact",
) -> Candidates:
    """Closed-form minimisers of the responsibility-fixed objective.

    ``gamma`` (and ``beta`` for ``avg_var_prod``) are joint tensors of shape
    ``(b,) + (M,) * K``.  The variance update measures spread around the
    current component means, so means and variances are block-wise optima.
    """
    K = len(mu)
    C, M, _ = means[0].shape
    if kl_estimate == "avg_var_prod" and beta is None:
        raise ValueError("avg_var_prod M-step needs the mean-distance weights")
    g_marg = marginals(gamma)
    b_marg = marginals(beta) if kl_estimate == "avg_var_prod" else [None] * K
    new_means, new_vars = [], []
    stale = np.zeros((C, K, M), dtype=bool)
    for k in range(K):
        m, v, st = m_step_view(
            mu[k], sigma[k], labels, means[k], variances[k], g_marg[k], b_marg[k],
            mode, kl_estimate, b_min, sigma_update,
        )
        new_means.append(m)
        new_vars.append(v)
        stale[:, k, :] = st
    new_w, updated, stale_cells = m_step_weights(labels, weights, gamma, beta, kl_estimate, cell_min)
    return Candidates(
        means=new_means,
        variances=new_vars,
        weights=new_w,
        updated=updated,
        stale=stale,
        stale_cells=stale_cells,
    )


def blend_view(means, variances, cand_means, cand_vars, updated, eta, zeta, rng, normalize_means=False):
    """Moving average plus jitter for one view's ``(C, M, d)`` component bank.

    Classes not in ``updated`` are left untouched; noise is drawn for the
    whole bank regardless so the random stream does not depend on the batch.
    """
    e1, e2 = eta[0], eta[1]
    z1, z2 = zeta
    m = np.array(means, copy=True)
    v = np.array(variances, copy=True)
    n1 = rng.standard_normal(m.shape) * np.sqrt(z1)
    n2 = rng.standard_normal(m.shape) * np.sqrt(z2)
    m_new = (1.0 - e1) * m + e1 * cand_means + n1
    v_new = np.maximum((1.0 - e2) * v + e2 * cand_vars + n2, VAR_FLOOR)
    if normalize_means:
        d = m.shape[-1]
        norms = np.linalg.norm(m_new, axis=-1, keepdims=True)
        m_new = np.where(norms > 0, m_new * np.sqrt(d) / np.where(norms > 0, norms, 1.0), m_new)
    m[updated] = m_new[updated]
    v[updated] = v_new[updated]
    return m, v


def blend_weights(weights, cand_weights, updated, eta3):
    w = np.array(weights, dtype=float, copy=True)
    w_new = np.clip((1.0 - eta3) * w + eta3 * cand_weights, 0.0, None)
    C = w.shape[0]
    sums = w_new.reshape(C, -1).sum(axis=1)
    w_new = w_new / sums.reshape((C,) + (1,) * (w.ndim - 1))
    w[updated] = w_new[updated]
    return w


def moving_average(means, variances, weights, cand: Candidates, eta, zeta, rngs, normalize_means=False):
    """Apply :func:`blend_view` to every view (one generator each) and :func:`blend_weights`."""
    out_m, out_v = [], []
    for k, rng in enumerate(rngs):
        m, v = blend_view(
            means[k], variances[k], cand.means[k], cand.variances[k], cand.updated,
            eta, zeta, rng, normalize_means,
        )
        out_m.append(m)
        out_v.append(v)
    return out_m, out_v, blend_weights(weights, cand.weights, cand.updated, eta[2])


def kmeanspp_init(
    mu: Sequence[np.ndarray],
    labels: np.ndarray,
    n_classes: int,
    n_components: int,
    rng: np.random.Generator,
):
    """Joint k-means++ seeding of per-view component means.

    The distance of a sample is the sum over views of its squared distance
    to the nearest already-chosen center of that view.  All views of one
    component are taken from the same sample.  Returns ``(means, missing)``.
    """
    K = len(mu)
    d = mu[0].shape[1]
    M = n_components
    means = [np.zeros((n_classes, M, d)) for _ in range(K)]
    missing = []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            missing.append(c)
            continue
        pts = [m[idx] for m in mu]
        first = int(rng.integers(idx.size))
        for k in range(K):
            means[k][c, 0] = pts[k][first]
        dmin = [((pts[k] - pts[k][first]) ** 2).sum(axis=1) for k in range(K)]
        for m in range(1, M):
            w = np.sum(dmin, axis=0)
            total = w.sum()
            if total > 0:
                pick = int(rng.choice(idx.size, p=w / total))
            else:
                pick = int(rng.integers(idx.size))
            for k in range(K):
                means[k][c, m] = pts[k][pick]
                dmin[k] = np.minimum(dmin[k], ((pts[k] - pts[k][pick]) ** 2).sum(axis=1))
    return means, missing


def init_variances(n_views: int, n_classes: int, n_components: int, dim: int, rng):
    return [
        np.maximum(rng.standard_normal((n_classes, n_components, dim)) ** 2, VAR_FLOOR)
        for _ in range(n_views)
    ]


def log_density(
    u: Sequence[np.ndarray],
    labels: np.ndarray,
    means: Sequence[np.ndarray],
    variances: Sequence[np.ndarray],
    weights: np.ndarray,
) -> float:
    """``sum_i log Q_{y_i}(u_i)`` under the (product) mixture prior."""
    mats = []
    for k in range(len(u)):
        mq = means[k][labels]
        vq = variances[k][labels]
        lp = -0.5 * (((u[k][:, None, :] - mq) ** 2) / vq + np.log(vq) + _LOG2PI).sum(axis=-1)
        mats.append(-lp)
    logits = joint_logits(log_weights(weights, labels), mats)
    return float(logsumexp(logits.reshape(logits.shape[0], -1), axis=1).sum())
