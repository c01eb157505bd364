import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccg.errors import InvalidArgumentError
from ccg.graph import GraphTrainConfig, acyclicity, out_degree_centrality, sem_loss, train_graph
from ccg.synth import (SynthConfig, dictionary_match_score, gen_activations, gen_dag, generate,
                       planted_graph, random_direction_baseline, sample_sem, shd,
                       topological_order)


def test_default_instance_shapes():
    gt = generate(SynthConfig(seed=0))
    assert gt.w_star.shape == (64, 64)
    assert np.count_nonzero(gt.w_star) == 221
    assert gt.c_star.shape == (2000, 64)
    assert gt.activations.shape == (2000, 128)
    assert gt.dictionary.shape == (128, 64)
    np.testing.assert_allclose(np.linalg.norm(gt.dictionary, axis=0), 1.0, rtol=1e-12)
    assert np.all(gt.c_star >= 0)
    assert gt.clamp_rate < 0.01


def test_generation_is_seed_deterministic():
    a, b = generate(SynthConfig(seed=3, n_examples=100)), generate(SynthConfig(seed=3, n_examples=100))
    np.testing.assert_array_equal(a.w_star, b.w_star)
    np.testing.assert_array_equal(a.activations, b.activations)


def test_different_seeds_give_different_graphs():
    a = generate(SynthConfig(seed=0, n_examples=10)).w_star > 0
    b = generate(SynthConfig(seed=1, n_examples=10)).w_star > 0
    assert (a & b).sum() / a.sum() <= 0.9


def test_zero_density_is_empty():
    w, order, hubs = gen_dag(10, 0.0, 0, np.random.default_rng(0))
    assert not w.any() and hubs.size == 0
    assert sorted(order.tolist()) == list(range(10))


@given(st.integers(2, 30), st.floats(0.0, 0.5), st.integers(0, 10 ** 6))
def test_gen_dag_is_acyclic_with_exact_budget(m, density, seed):
    n_edges = int(np.floor(density * m * (m - 1) + 1e-9))
    if n_edges > m * (m - 1) // 2:
        with pytest.raises(InvalidArgumentError):
            gen_dag(m, density, 0, np.random.default_rng(seed))
        return
    w, order, _ = gen_dag(m, density, 0, np.random.default_rng(seed))
    assert np.count_nonzero(w) == n_edges
    assert acyclicity(w)[0] < 1e-10
    pos = np.empty(m, dtype=int)
    pos[order] = np.arange(m)
    i, j = np.nonzero(w)
    assert np.all(pos[i] < pos[j])
    assert np.all((w[i, j] >= 0.3) & (w[i, j] <= 1.0))


def test_hubs_have_boosted_out_degree():
    gt = generate(SynthConfig(seed=0, n_examples=10))
    od = (gt.w_star > 0).sum(axis=1)
    others = np.setdiff1d(np.arange(64), gt.hubs)
    assert gt.hubs.size == 4
    assert od[gt.hubs].min() >= 3 * od[others].mean()


def test_planted_hub_preset():
    cfg = SynthConfig.planted_hubs(seed=2, n_examples=10)
    assert (cfg.hub_count, cfg.hub_boost, cfg.seed) == (7, 10.0, 2)
    gt = generate(cfg)
    od = (gt.w_star > 0).sum(axis=1)
    assert np.sum(od == 0) > 32  # most nodes are sinks


def test_single_edge_propagation():
    w = np.zeros((2, 2))
    w[0, 1] = 0.5
    s = sample_sem(w, 200, 1, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(s.c[:, 1], s.exogenous[:, 1] + 0.5 * s.exogenous[:, 0])
    np.testing.assert_array_equal(s.c[:, 0], s.exogenous[:, 0])


def test_sem_residual_equals_exogenous_without_noise():
    gt_w, _, _ = gen_dag(12, 0.1, 2, np.random.default_rng(4))
    s = sample_sem(gt_w, 300, 3, 0.0, np.random.default_rng(5))
    assert s.clamp_rate == 0.0
    np.testing.assert_allclose(s.c - s.c @ gt_w, s.exogenous, atol=1e-12)
    assert np.all(np.count_nonzero(s.exogenous, axis=1) == 3)


def test_planted_weights_beat_empty_graph():
    gt = generate(SynthConfig(seed=1, n_examples=500))
    assert sem_loss(gt.c_star, gt.w_star)[0] <= sem_loss(gt.c_star, np.zeros((64, 64)))[0]


def test_topological_order_rejects_cycles():
    with pytest.raises(InvalidArgumentError):
        topological_order(np.array([[0, 1.0], [1.0, 0]]))


def test_gen_activations_examples():
    rng = np.random.default_rng(0)
    c = np.zeros((3, 5))
    c[0, 2] = 2.0
    h, dic = gen_activations(c, 16, 0.0, rng)
    np.testing.assert_allclose(h[0], 2.0 * dic[:, 2])
    np.testing.assert_array_equal(h[1:], 0.0)
    with pytest.raises(InvalidArgumentError):
        gen_activations(c, 4, 0.0, rng)


def test_config_validation():
    for bad in (dict(dag_density=0.7), dict(m=0), dict(hub_count=-1), dict(noise_sigma=-0.1)):
        with pytest.raises(InvalidArgumentError):
            generate(SynthConfig(**bad))
    with pytest.raises(InvalidArgumentError):
        gen_dag(5, 0.05, 3, np.random.default_rng(0))  # one edge cannot serve three hubs


# ---- scoring ---------------------------------------------------------------------

def test_shd_examples():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 2] = 0.5
    assert shd(a, a) == 0
    assert shd(a.T, a) == 2  # both edges reversed
    b = a.copy()
    b[0, 2] = 0.5
    assert shd(b, a) == 1
    assert shd(a, b) == 1
    assert shd(np.zeros((3, 3)), a) == 2
    with pytest.raises(InvalidArgumentError):
        shd(np.zeros((2, 2)), a)


def test_shd_single_reversal_costs_one():
    a = np.zeros((2, 2))
    a[0, 1] = 1.0
    assert shd(a.T, a) == 1


@given(st.integers(0, 10 ** 6))
def test_dictionary_match_invariances(seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(16, 10))
    p = rng.permutation(10)
    signs = rng.choice([-1.0, 1.0], size=10)
    scale = rng.uniform(0.1, 5, size=10)
    assert dictionary_match_score(d[:, p] * signs * scale, d) == pytest.approx(1.0)


def test_random_baseline_matches_frozen_reference(oracles):
    ref = oracles["dictionary_match_random"]
    got = random_direction_baseline(ref["d"], ref["n_true"], ref["n_learned"],
                                    np.random.default_rng(11), trials=40)
    assert abs(got - ref["mean"]) < 4 * ref["sd"] / np.sqrt(40) + 1e-3


def test_planted_graph_wraps_truth():
    gt = generate(SynthConfig(seed=0, n_examples=10))
    g = planted_graph(gt)
    np.testing.assert_array_equal(g.w, gt.w_star)
    assert g.node_ids.tolist() == list(range(64))


def test_recovery_on_small_planted_instance():
    gt = generate(SynthConfig(m=16, dag_density=0.06, n_examples=2000, seed=0))
    g = train_graph(gt.c_star, GraphTrainConfig(m=16, center=True)).graph
    assert shd(g, gt.w_star) <= 4
    top = set(np.argsort(-out_degree_centrality(g), kind="stable")[:8].tolist())
    assert set(gt.hubs.tolist()) <= top
