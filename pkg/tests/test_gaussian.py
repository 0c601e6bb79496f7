import math

import numpy as np
import pytest
from scipy.special import softmax

from gpmdl.gaussian import (
    VAR_FLOOR,
    DiagGaussian,
    GaussianMixture,
    d_est,
    d_prod,
    d_var,
    kl_diag,
    kl_lossy_single,
    mc_kl,
    optimal_gamma,
)


def random_instance(rng, d=None, M=None):
    d = d or int(rng.integers(1, 9))
    M = M or int(rng.integers(1, 6))
    p = DiagGaussian(rng.normal(size=d), rng.uniform(0.2, 2.0, d))
    w = rng.dirichlet(np.ones(M))
    q = GaussianMixture.from_arrays(w, rng.normal(scale=1.5, size=(M, d)), rng.uniform(0.2, 2.0, (M, d)))
    return p, q


def test_kl_diag_closed_form():
    assert kl_diag(DiagGaussian([1.0], [1.0]), DiagGaussian([0.0], [1.0])) == pytest.approx(0.5)
    p = DiagGaussian([0.0, 0.0], [2.0, 0.5])
    assert kl_diag(p, p) == 0.0
    # KL(N(0,2) || N(0,1)) = 0.5 (2 - 1 - log 2)
    assert kl_diag(DiagGaussian([0.0], [2.0]), DiagGaussian([0.0], [1.0])) == pytest.approx(0.5 * (1 - math.log(2)))


def test_d_prod_exact_one_dim():
    p = DiagGaussian([0.0], [1.0])
    q = GaussianMixture.from_arrays([1.0], [[0.0]], [[1.0]])
    # -(H(p) + log N(0; 0, 2)) = -0.5(log 2pi + 1) + 0.5 log(4 pi)
    assert d_prod(p, q, "exact") == pytest.approx(-0.5 * (math.log(2 * math.pi) + 1) + 0.5 * math.log(4 * math.pi))
    assert d_prod(p, q, "exact") == pytest.approx(-0.153426, abs=1e-6)
    assert d_est(p, q) == pytest.approx(-0.076713, abs=1e-6)


def test_single_component_d_var_equals_kl():
    rng = np.random.default_rng(0)
    p, q = random_instance(rng, M=1)
    assert d_var(p, q) == pytest.approx(kl_diag(p, q.components[0]), abs=1e-12)


def test_optimal_gamma_minimises_and_matches_closed_form():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, q = random_instance(rng)
        g = optimal_gamma(p, q)
        assert g.sum() == pytest.approx(1.0)
        best = d_var(p, q, g)
        assert best == pytest.approx(d_var(p, q), abs=1e-10)
        for _ in range(10):
            assert d_var(p, q, rng.dirichlet(np.ones(g.size))) >= best - 1e-12


def test_sandwich_small_sample():
    rng = np.random.default_rng(2)
    for _ in range(5):
        p, q = random_instance(rng)
        est, se = mc_kl(p, q, 200_000, seed=3)
        assert d_prod(p, q, "exact") - 4 * se <= est <= d_var(p, q) + 4 * se
        assert d_prod(p, q, "exact") <= d_est(p, q, "exact") <= d_var(p, q)


def test_mc_kl_exact_for_single_gaussian():
    p = DiagGaussian([0.3, -0.2], [0.5, 2.0])
    q = GaussianMixture.from_arrays([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    est, se = mc_kl(p, q, 400_000, seed=0)
    assert est == pytest.approx(kl_diag(p, q.components[0]), abs=4 * se)
    assert mc_kl(p, q, 1000, seed=5) == mc_kl(p, q, 1000, seed=5)


def test_lossy_divergence():
    p = DiagGaussian([1.0, 1.0, 1.0, 1.0], [1.0] * 4)
    c = DiagGaussian([0.0] * 4, [1.0] * 4)
    # squared distance 4 over sqrt(d) = 2, identical variances
    assert kl_lossy_single(p, c, eps=1.0) == pytest.approx(2.0)
    assert kl_lossy_single(p, c, eps=1.0, scale=4.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        kl_lossy_single(p, c, eps=0.0)


def test_lossy_attention_identity():
    # with means of norm sqrt(d), -||a - b||^2 / sqrt(d) = 2<a, b>/sqrt(d) - 2 sqrt(d)
    rng = np.random.default_rng(4)
    d = 8
    a = rng.normal(size=d)
    b = rng.normal(size=(3, d))
    a *= math.sqrt(d) / np.linalg.norm(a)
    b *= math.sqrt(d) / np.linalg.norm(b, axis=1, keepdims=True)
    lhs = -((a - b) ** 2).sum(axis=1) / math.sqrt(d)
    rhs = 2 * b @ a / math.sqrt(d) - 2 * math.sqrt(d)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    # so the softmax over components is the attention softmax with temperature sqrt(d) / 2
    np.testing.assert_allclose(softmax(lhs), softmax(2 * b @ a / math.sqrt(d)), atol=1e-12)


def test_validation():
    assert DiagGaussian([0.0], [-1.0]).var[0] == VAR_FLOOR
    with pytest.raises(ValueError):
        DiagGaussian([0.0, np.nan], [1.0, 1.0])
    with pytest.raises(ValueError):
        GaussianMixture.from_arrays([0.5, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])
    p, q = random_instance(np.random.default_rng(0), d=2, M=2)
    with pytest.raises(ValueError):
        d_var(p, q, [0.7, 0.7])
    with pytest.raises(ValueError):
        d_prod(p, q, "nope")
    with pytest.raises(ValueError):
        kl_diag(p, DiagGaussian([0.0], [1.0]))
