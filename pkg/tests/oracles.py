"""Independent reference computations used by the tests.

Nothing here calls the closed-form code under test except the plain
per-component Gaussian divergences, which are checked separately.
"""

import itertools
import math

import numpy as np

from gpmdl.gaussian import DiagGaussian, kl_diag, kl_lossy_single


def hb(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where((x > 0) & (x < 1), -x * np.log2(x) - (1 - x) * np.log2(1 - x), 0.0)
    return a


def hd(x1, x2):
    return 2 * hb(0.5 * (x1 + x2)) - hb(x1) - hb(x2)


def brute_h_C(x1, x2, eps, fine=1e-6, coarse=1e-3):
    """Grid maximum of the entropy gain over shifts in ``[0, min(eps, gap/2)]``.

    The gain is concave in the shift, so a coarse pass brackets the maximum
    and a dense pass at step ``fine`` refines it.
    """
    lo, hi = min(x1, x2), max(x1, x2)
    right = min(eps, 0.5 * (hi - lo))
    if right <= 0:
        return 0.0

    def gain(e):
        return hb(lo + e) - hb(lo) + hb(hi - e) - hb(hi)

    grid = np.append(np.arange(0.0, right, coarse), right)
    j = int(np.argmax(gain(grid)))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    dense = np.append(np.arange(a, b, fine), b)
    return float(max(gain(dense).max(), 0.0))


def brute_h_D_inverse(y, x2, fine=1e-7, coarse=1e-4):
    """Largest grid point ``x1 >= x2`` with ``h_D(x1, x2) <= y`` (``h_D`` increases there)."""
    grid = np.append(np.arange(x2, 1.0, coarse), 1.0)
    ok = np.flatnonzero(hd(grid, x2) <= y)
    j = ok[-1]
    if j == grid.size - 1:
        return 1.0
    dense = np.append(np.arange(grid[j], grid[j + 1], fine), grid[j + 1])
    ok = np.flatnonzero(hd(dense, x2) <= y)
    return float(dense[ok[-1]])


def component_divs(mu, sigma, means, variances, mode, eps=1.0, scale=None):
    """``(M,)`` divergences of one latent Gaussian to the components of one class."""
    p = DiagGaussian(mu, sigma**2)
    out = []
    for m in range(means.shape[0]):
        q = DiagGaussian(means[m], variances[m])
        out.append(kl_diag(p, q) if mode == "lossless" else kl_lossy_single(p, q, eps, scale))
    return np.array(out)


def joint_divs(mus, sigmas, means, variances, mode, eps=1.0):
    """Per-view ``(M,)`` divergences for one sample; ``means[k]`` is ``(M, d)``."""
    K, d = len(mus), mus[0].shape[0]
    scale = math.sqrt(K * d)
    return [component_divs(mus[k], sigmas[k], means[k], variances[k], mode, eps, scale) for k in range(K)]


def dvar_objective(gamma, divs, weights):
    """``sum_j gamma_j (sum_k div_k[j_k] - log alpha_j + log gamma_j)`` over the joint grid."""
    gamma = np.asarray(gamma, dtype=float)
    total = 0.0
    for j in itertools.product(*[range(len(d)) for d in divs]):
        g = gamma[j]
        if g <= 0:
            continue
        total += g * (sum(d[i] for d, i in zip(divs, j)) - math.log(weights[j]) + math.log(g))
    return total


def mstep_objective(batch, gamma, means, variances, weights, mode, eps=1.0):
    """Responsibility-fixed objective ``sum_i sum_j gamma_ij (div_ij - log alpha_{y_i, j})``.

    ``means[k]`` and ``variances[k]`` are ``(C, M, d)``, ``weights`` is
    ``(C,) + (M,) * K`` and ``gamma`` is ``(b,) + (M,) * K``.
    """
    K = batch.n_views
    total = 0.0
    for i in range(batch.size):
        c = batch.labels[i]
        divs = joint_divs(
            [batch.mu[k][i] for k in range(K)],
            [batch.sigma[k][i] for k in range(K)],
            [means[k][c] for k in range(K)],
            [variances[k][c] for k in range(K)],
            mode,
            eps,
        )
        for j in itertools.product(*[range(len(d)) for d in divs]):
            g = gamma[(i,) + j]
            if g > 0:
                total += g * (sum(d[m] for d, m in zip(divs, j)) - math.log(weights[(c,) + j]))
    return total


def random_simplex(rng, shape):
    x = rng.exponential(size=shape)
    return x / x.sum()


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))
