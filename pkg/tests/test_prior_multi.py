import math

import numpy as np
import pytest
from scipy.special import logsumexp

from conftest import make_batch
from gpmdl.latents import MultiLatentBatch
from gpmdl.prior_multi import (
    JointBudgetError,
    ProductMixturePrior,
    apply_update_multi,
    e_step_joint,
    init_multi,
    m_step_multi,
    marginalize_gamma,
    redundancy_gap,
    redundant_views_instance,
    regularizer_joint,
    regularizer_marginals_only,
)
from gpmdl.prior_single import GaussianMixturePrior
from oracles import central_diff, joint_divs, rel_error


def test_shapes_and_marginals(rng):
    batch = make_batch(rng, b=30, d=3, K=3, C=2)
    p = ProductMixturePrior(n_components=2, random_state=0).fit(batch)
    assert p.means_.shape == (2, 3, 2, 3)
    assert p.weights_.shape == (2, 2, 2, 2)
    assert p.n_views == 3
    np.testing.assert_allclose(p.marginal_weights_.sum(axis=-1), 1.0)
    g = p.e_step(batch)
    assert g.shape == (30, 2, 2, 2)
    np.testing.assert_allclose(g.reshape(30, -1).sum(axis=1), 1.0)
    margs = marginalize_gamma(g)
    assert len(margs) == 3 and margs[1].shape == (30, 2)
    np.testing.assert_allclose(margs[2], g.sum(axis=(1, 2)))


def test_joint_budget(rng):
    batch = make_batch(rng, b=5, d=2, K=3, C=1)
    with pytest.raises(JointBudgetError):
        ProductMixturePrior(n_components=41).fit(batch)
    with pytest.raises(JointBudgetError):
        ProductMixturePrior(n_components=3, max_joint=26).fit(batch)


def test_view_count_mismatch(rng):
    p = ProductMixturePrior(n_components=2, random_state=0).fit(make_batch(rng, K=2))
    with pytest.raises(ValueError):
        p.e_step(make_batch(rng, K=3))
    with pytest.raises(ValueError):
        p.m_step(make_batch(rng, b=40, K=2), np.ones((40, 2)))


@pytest.mark.parametrize("mode", ["lossless", "lossy"])
def test_var_only_regularizer_matches_oracle(rng, mode):
    batch = make_batch(rng, b=6, d=2, K=2, C=2)
    p = ProductMixturePrior(n_components=3, mode=mode, kl_estimate="var_only", random_state=1).fit(batch)
    per = p.regularizer_per_sample(batch)
    gamma = p.e_step(batch)
    for i in range(batch.size):
        c = batch.labels[i]
        divs = joint_divs(
            [m[i] for m in batch.mu], [s[i] for s in batch.sigma],
            [p.means_[c, k] for k in range(2)], [p.variances_[c, k] for k in range(2)], mode,
        )
        logits = np.log(p.weights_[c]) - (divs[0][:, None] + divs[1][None, :])
        assert per[i] == pytest.approx(-logsumexp(logits), abs=1e-10)
        np.testing.assert_allclose(gamma[i], np.exp(logits - logsumexp(logits)), atol=1e-12)


def test_lossy_scale_uses_all_views(rng):
    batch = make_batch(rng, b=3, d=4, K=2, C=1)
    p = ProductMixturePrior(n_components=1, mode="lossy", random_state=0).fit(batch)
    div = p.view_divergences(batch)[0]
    sq = ((batch.mu[0] - p.means_[0, 0, 0]) ** 2).sum(axis=1)
    sp, sv = batch.sigma[0] ** 2 + 1.0, p.variances_[0, 0, 0] + 1.0
    var_term = 0.5 * (np.log(sv / sp) + sp / sv - 1.0).sum(axis=1)
    np.testing.assert_allclose(div[:, 0], sq / math.sqrt(8) + var_term)


def test_single_view_product_prior_equals_mixture_prior(rng):
    batch = make_batch(rng, b=40, d=3, K=1, C=2)
    a = ProductMixturePrior(n_components=3, random_state=9).fit(batch)
    b = GaussianMixturePrior(n_components=3, random_state=9).fit(batch.view(0))
    np.testing.assert_array_equal(a.means_[:, 0], b.means_)
    assert a.regularizer(batch)[0] == pytest.approx(b.regularizer(batch.view(0))[0], abs=1e-12)
    a.partial_fit(batch)
    b.partial_fit(batch.view(0))
    np.testing.assert_allclose(a.means_[:, 0], b.means_, atol=1e-14)
    np.testing.assert_allclose(a.weights_, b.weights_, atol=1e-14)


@pytest.mark.parametrize("K", [2, 3])
@pytest.mark.parametrize("mode", ["lossless", "lossy"])
@pytest.mark.parametrize("estimate", ["var_only", "avg_var_prod"])
def test_joint_and_marginal_gradients(rng, K, mode, estimate):
    init = make_batch(rng, b=30, d=2, K=K, C=2)
    p = ProductMixturePrior(n_components=2, mode=mode, kl_estimate=estimate, random_state=2).fit(init)
    batch = make_batch(rng, b=3, d=2, K=K, C=2)
    mu = [m.copy() for m in batch.mu]
    sigma = [s.copy() for s in batch.sigma]
    for fn in (p.regularizer, p.regularizer_marginals_only):
        _, gmu, gsig = fn(batch)

        def f():
            return fn(MultiLatentBatch(mu, sigma, batch.labels))[0]

        for k in range(K):
            assert rel_error(gmu[k], central_diff(f, mu[k])) < 1e-5
            assert rel_error(gsig[k], central_diff(f, sigma[k])) < 1e-5


@pytest.mark.parametrize("R", [2, 3, 4])
def test_joint_never_exceeds_marginals_on_redundant_views(R):
    for seed in range(10):
        batch, prior = redundant_views_instance(R, dim=3, n_classes=2, seed=seed)
        r1, r2 = redundancy_gap(batch, prior)
        assert r2 <= r1 + 1e-9


def test_single_cluster_has_no_redundancy_gap():
    batch, prior = redundant_views_instance(1, dim=3, n_classes=2, seed=0)
    r1, r2 = redundancy_gap(batch, prior)
    assert r1 == pytest.approx(r2, abs=1e-9)
    assert r2 == pytest.approx(0.0, abs=1e-9)


def test_update_keeps_joint_weights_on_simplex(rng):
    batch = make_batch(rng, b=60, d=2, K=2, C=3)
    p = ProductMixturePrior(n_components=3, random_state=0).fit(batch)
    for _ in range(4):
        p.partial_fit(batch)
    np.testing.assert_allclose(p.weights_.reshape(3, -1).sum(axis=1), 1.0)
    assert np.all(p.weights_ >= 0)
    assert np.all(p.variances_ > 0)


def test_functional_wrappers_and_json(rng):
    batch = make_batch(rng, b=40, d=2, K=2, C=2)
    p = init_multi(batch, 2, seed=3, mode="lossy")
    cand = m_step_multi(p, batch, e_step_joint(p, batch))
    apply_update_multi(p, cand)
    q = ProductMixturePrior.from_json(p.to_json())
    assert regularizer_joint(q, batch)[0] == regularizer_joint(p, batch)[0]
    assert regularizer_marginals_only(q, batch)[0] == regularizer_marginals_only(p, batch)[0]
    assert q.max_joint == p.max_joint and q.cell_min == p.cell_min


def test_low_mass_cells_keep_weight(rng):
    batch = make_batch(rng, b=20, d=2, K=2, C=1)
    p = ProductMixturePrior(n_components=2, kl_estimate="var_only", random_state=0, cell_min=0.5).fit(batch)
    gamma = np.zeros((20, 2, 2))
    gamma[:, 0, 0] = 1.0
    cand = p.m_step(batch, gamma)
    assert cand.stale_cells[0, 1, 1]
    assert cand.weights[0, 1, 1] == p.weights_[0, 1, 1]
    assert cand.weights[0].sum() == pytest.approx(1.0)
