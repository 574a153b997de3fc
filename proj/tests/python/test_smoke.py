"""Smoke tests for the python extension module."""

import numpy as np
import pytest

import normlab


def test_generators_and_degrees():
    p3 = normlab.generate_path(3)
    assert p3.degrees() == [1, 2, 1]
    star = normlab.generate_star(5)
    assert star.degrees() == [4, 1, 1, 1, 1]
    csl = normlab.generate_csl(8, 2)
    assert len(csl.edges) == 16
    with pytest.raises(normlab.ArgumentError):
        normlab.generate_csl(5, 2)


def test_wl_classic_pair():
    c6 = normlab.generate_cycle(6)
    triangles = normlab.disjoint_union(normlab.generate_cycle(3), normlab.generate_cycle(3))
    assert normlab.wl_refinement(c6) == normlab.wl_refinement(triangles)
    assert normlab.wl_refinement(normlab.generate_path(4)) != normlab.wl_refinement(
        normlab.generate_cycle(4)
    )


def test_batching_and_masks():
    batch = normlab.batch_graphs([normlab.generate_path(3), normlab.generate_star(5)])
    assert batch.batch_size == 2
    assert batch.n_max == 5
    mask = batch.mask()
    assert mask.sum() == 8
    adj = batch.adjacency()
    assert adj.shape == (2, 5, 5)
    np.testing.assert_array_equal(adj[0], adj[0].T)


def test_norm_matches_oracle():
    rng = np.random.default_rng(0)
    batch = normlab.batch_graphs([normlab.generate_er(5, 0.5, 1), normlab.generate_er(3, 0.5, 2)])
    h = rng.normal(size=(2, 5, 3)) * batch.mask()[:, :, None]
    for variant in ("batchnorm", "instancenorm", "layernorm_node", "pairnorm", "unitynorm"):
        got = normlab.apply_norm(variant, batch, h)
        want = normlab.norm_oracle(variant, batch, h)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_batchnorm_against_numpy():
    rng = np.random.default_rng(1)
    batch = normlab.batch_graphs([normlab.generate_cycle(4)])
    h = rng.normal(size=(1, 4, 2))
    out = normlab.apply_norm("batchnorm", batch, h, eps=1e-8)
    mu = h.mean(axis=(0, 1))
    sigma = np.sqrt(h.var(axis=(0, 1)) + 1e-8)
    np.testing.assert_allclose(out, (h - mu) / sigma, atol=1e-6)


def test_granola_forward_seeded():
    batch = normlab.batch_graphs([normlab.generate_er(6, 0.5, 3)])
    rng = np.random.default_rng(2)
    h = rng.normal(size=(1, 6, 4))
    a = normlab.granola_forward(batch, h, rnf_seed=7)
    b = normlab.granola_forward(batch, h, rnf_seed=7)
    c = normlab.granola_forward(batch, h, rnf_seed=8)
    assert a.shape == (1, 6, 4)
    assert np.isfinite(a).all()
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 1e-8


def test_rnf_is_masked():
    batch = normlab.batch_graphs([normlab.generate_path(3), normlab.generate_star(5)])
    r = normlab.sample_rnf(batch, 4, 11)
    assert r.shape == (2, 5, 4)
    assert np.all(r[0, 3:, :] == 0.0)
    assert np.abs(r[1]).max() > 0


def test_run_experiment():
    config = """
seed = 7
[task]
kind = "degree_regression"
[model]
channels = 1
layers = 1
gnn = "graphconv"
[model.norm]
variant = "identity"
[train]
epochs = 4
lr = 0.001
"""
    result = normlab.run_experiment(config)
    assert len(result["history"]) == 4
    assert result["seed"] == 7
    assert np.isfinite(result["final"])


def test_bad_config_raises():
    with pytest.raises(normlab.ConfigError):
        normlab.run_experiment('{"model": {"gnn": "transformer"}}', is_toml=False)
