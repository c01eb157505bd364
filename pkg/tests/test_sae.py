import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ccg.errors import InvalidArgumentError, NumericError
from ccg.sae import (SaeModel, SaeTrainConfig, calibrate_encoder_bias, decode, encode,
                     init_model, l0_rate, offdiag_cov_penalty, preactivation,
                     resample_dead_neurons, sae_loss, sae_loss_and_grad, topk_gate, train_sae,
                     _topk_mask)
from ccg.synth import SynthConfig, generate

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def small_model(rng, n_concepts=12, d=6, k=3):
    return SaeModel(rng.normal(size=(n_concepts, d)), rng.normal(size=(d, n_concepts)),
                    rng.normal(size=d) * 0.1, rng.normal(size=n_concepts) * 0.1, k)


# ---- gate ---------------------------------------------------------------------

def test_topk_gate_examples():
    np.testing.assert_array_equal(topk_gate([0.5, -1.0, 2.0, 0.1], 2), [0.5, 0, 2.0, 0])
    np.testing.assert_array_equal(topk_gate([1.0, 1.0, 1.0], 2), [1.0, 1.0, 0.0])
    np.testing.assert_array_equal(topk_gate([-1.0, -2.0, -3.0], 2), [0, 0, 0])


def test_topk_gate_rejects_bad_k_and_nan():
    with pytest.raises(InvalidArgumentError):
        topk_gate([1.0, 2.0], 3)
    with pytest.raises(InvalidArgumentError):
        topk_gate([1.0, 2.0], 0)
    with pytest.raises(InvalidArgumentError):
        topk_gate([np.nan, 1.0], 1)


@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.data())
def test_topk_gate_idempotent_sparse_and_exact(z, data):
    k = data.draw(st.integers(1, z.size))
    c = topk_gate(z, k)
    np.testing.assert_array_equal(topk_gate(c, k), c)
    assert np.count_nonzero(c) <= k
    assert np.all(c >= 0)
    nz = c != 0
    np.testing.assert_array_equal(c[nz], z[nz])
    if np.sum(z > 0) >= k:
        assert np.count_nonzero(c) == k


@given(arrays(np.float64, (5, 9), elements=finite), st.integers(1, 9))
def test_topk_gate_rows_independent(z, k):
    c = topk_gate(z, k)
    for i in range(z.shape[0]):
        np.testing.assert_array_equal(c[i], topk_gate(z[i], k))


def test_topk_keeps_largest_values(rng):
    z = rng.normal(size=50)
    c = topk_gate(z, 5)
    kept = np.sort(z)[-5:]
    np.testing.assert_array_equal(np.sort(c[c > 0]), kept[kept > 0])


# ---- model --------------------------------------------------------------------

def test_model_validates_shapes(rng):
    with pytest.raises(InvalidArgumentError):
        SaeModel(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros(3), np.zeros(4), 2)
    with pytest.raises(InvalidArgumentError):
        SaeModel(np.zeros((4, 3)), np.zeros((3, 4)), np.zeros(3), np.zeros(4), 5)
    with pytest.raises(NumericError):
        SaeModel(np.full((4, 3), np.nan), np.zeros((3, 4)), np.zeros(3), np.zeros(4), 2)


def test_encode_decode_shapes(rng):
    m = small_model(rng)
    h = rng.normal(size=(7, 6))
    c = encode(h, m)
    assert c.shape == (7, 12)
    assert decode(c, m).shape == (7, 6)
    np.testing.assert_allclose(encode(h[0], m), c[0], rtol=1e-13, atol=1e-13)
    with pytest.raises(InvalidArgumentError):
        encode(rng.normal(size=(3, 5)), m)
    with pytest.raises(InvalidArgumentError):
        decode(np.zeros((2, 11)), m)


def test_encode_has_no_shrinkage(rng):
    m = small_model(rng)
    h = rng.normal(size=(20, 6))
    c = encode(h, m)
    pre = preactivation(h, m)
    nz = c != 0
    np.testing.assert_array_equal(c[nz], pre[nz])
    assert np.all(np.count_nonzero(c, axis=1) <= m.k)


def test_decode_zero_code_is_bias(rng):
    m = small_model(rng)
    np.testing.assert_array_equal(decode(np.zeros(12), m), m.b_pre)


def test_l0_rate():
    c = np.array([[1.0, 0, 0, 2.0], [0, 0, 0, 3.0]])
    assert l0_rate(c) == pytest.approx(3 / 8)
    with pytest.raises(InvalidArgumentError):
        l0_rate(np.zeros((0, 3)))


def test_offdiag_cov_penalty_hand_value():
    c = np.array([[1.0, 0.0], [0.0, 1.0]])
    # centred columns are +-0.5 with opposite signs; biased covariance -0.25 off the diagonal
    assert offdiag_cov_penalty(c) == pytest.approx(2 * 0.25 ** 2)
    assert offdiag_cov_penalty(np.eye(3)[[0, 0, 0]]) == 0.0
    with pytest.raises(InvalidArgumentError):
        offdiag_cov_penalty(np.ones((1, 3)))


def test_loss_components_by_hand(rng):
    m = small_model(rng)
    h = rng.normal(size=(8, 6))
    cfg = SaeTrainConfig(lambda_l1=0.3, beta=0.7)
    total, mse, l1, decor = sae_loss(h, m, cfg)
    c = encode(h, m)
    r = decode(c, m) - h
    assert mse == pytest.approx(np.mean(np.sum(r * r, axis=1)), rel=1e-12)
    assert l1 == pytest.approx(np.mean(np.sum(np.abs(c), axis=1)), rel=1e-12)
    assert decor == pytest.approx(offdiag_cov_penalty(c), rel=1e-12)
    assert total == pytest.approx(mse + 0.3 * l1 + 0.7 * decor, rel=1e-12)


# ---- gradients ----------------------------------------------------------------

def _fd_check(seed, step=1e-5):
    rng = np.random.default_rng(seed)
    m = small_model(rng, n_concepts=10, d=5, k=3)
    h = rng.normal(size=(6, 5))
    cfg = SaeTrainConfig(lambda_l1=0.2, beta=0.5)
    _, grads, _ = sae_loss_and_grad(h, m, cfg)
    base_mask = _topk_mask(preactivation(h, m), m.k)
    worst = 0.0
    for name, p in m.params().items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            plus_mask = _topk_mask(preactivation(h, m), m.k)
            fp = sae_loss(h, m, cfg).total
            p[idx] = old - step
            minus_mask = _topk_mask(preactivation(h, m), m.k)
            fm = sae_loss(h, m, cfg).total
            p[idx] = old
            if not (np.array_equal(plus_mask, base_mask) and np.array_equal(minus_mask, base_mask)):
                continue  # coordinate sits on a selection boundary
            fd = (fp - fm) / (2 * step)
            an = grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sae_gradient_matches_finite_differences(seed):
    assert _fd_check(seed) < 1e-4


def test_gradient_zero_outside_selection(rng):
    m = small_model(rng)
    h = rng.normal(size=(6, 6))
    _, grads, c = sae_loss_and_grad(h, m, SaeTrainConfig())
    never = ~(c > 0).any(axis=0)
    np.testing.assert_array_equal(grads["w_enc"][never], 0.0)
    np.testing.assert_array_equal(grads["b_enc"][never], 0.0)


# ---- resampling ---------------------------------------------------------------

def test_resample_resets_dead_neurons(rng):
    m = small_model(rng)
    batch = rng.normal(size=(16, 6))
    counts = np.array([100] * 6 + [0] * 6)
    before = m.copy()
    n = resample_dead_neurons(m, counts, 1000, batch, rng.uniform(0.1, 1, 16), rng)
    assert n == 6
    np.testing.assert_allclose(np.linalg.norm(m.w_dec[:, 6:], axis=0), 1.0, atol=1e-9)
    np.testing.assert_array_equal(m.b_enc[6:], 0.0)
    np.testing.assert_allclose(m.w_enc[6:], 0.2 * m.w_dec[:, 6:].T, rtol=1e-12)
    np.testing.assert_array_equal(m.w_enc[:6], before.w_enc[:6])
    np.testing.assert_array_equal(counts[6:], 0)


def test_resample_noop_when_loss_zero(rng):
    m = small_model(rng)
    before = m.copy()
    counts = np.zeros(12, dtype=int)
    assert resample_dead_neurons(m, counts, 100, rng.normal(size=(4, 6)), np.zeros(4), rng) == 0
    np.testing.assert_array_equal(m.w_enc, before.w_enc)


def test_resample_directions_come_from_batch(rng):
    m = small_model(rng)
    batch = rng.normal(size=(3, 6))
    loss = np.array([0.0, 1.0, 0.0])   # only row 1 can be drawn
    resample_dead_neurons(m, np.zeros(12, dtype=int), 10, batch, loss, rng)
    want = (batch[1] - m.b_pre) / np.linalg.norm(batch[1] - m.b_pre)
    np.testing.assert_allclose(m.w_dec, np.tile(want[:, None], (1, 12)), atol=1e-12)


# ---- training -----------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_data():
    gt = generate(SynthConfig(m=16, dag_density=0.06, n_examples=400, noise_sigma=0.0,
                              dict_dim=16, concept_sparsity=2, hub_count=2, seed=3))
    return gt.activations


def tiny_cfg(**kw):
    base = dict(n_concepts=32, k=4, epochs=12, resample_interval_epochs=5, seed=5)
    base.update(kw)
    return SaeTrainConfig(**base)


def test_training_reduces_reconstruction_error(tiny_data):
    model, log = train_sae(tiny_data, tiny_cfg())
    assert len(log) == 12
    assert log[-1].mse < log[0].mse
    assert [r.epoch for r in log.records] == list(range(1, 13))


def test_training_gives_exact_sparsity(tiny_data):
    model, _ = train_sae(tiny_data, tiny_cfg())
    assert l0_rate(encode(tiny_data, model)) == 4 / 32


def test_training_is_deterministic(tiny_data):
    a_model, a_log = train_sae(tiny_data, tiny_cfg())
    b_model, b_log = train_sae(tiny_data, tiny_cfg())
    assert a_log.to_list() == b_log.to_list()
    np.testing.assert_array_equal(a_model.w_enc, b_model.w_enc)
    c_model, _ = train_sae(tiny_data, tiny_cfg(seed=6))
    assert not np.array_equal(a_model.w_enc, c_model.w_enc)


def test_training_does_not_mutate_initial_model(tiny_data, rng):
    init = init_model(tiny_data, 32, 4, rng)
    snapshot = init.copy()
    train_sae(tiny_data, tiny_cfg(epochs=2), model=init)
    np.testing.assert_array_equal(init.w_enc, snapshot.w_enc)


def test_training_rejects_bad_input(tiny_data):
    with pytest.raises(InvalidArgumentError):
        train_sae(tiny_data[:10], tiny_cfg())
    bad = tiny_data.copy()
    bad[0, 0] = np.inf
    with pytest.raises(InvalidArgumentError):
        train_sae(bad, tiny_cfg())
    with pytest.raises(InvalidArgumentError):
        train_sae(tiny_data, tiny_cfg(k=40))


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_training_reports_divergence(tiny_data):
    with pytest.raises(NumericError, match="epoch"):
        train_sae(tiny_data * 1e200, tiny_cfg(epochs=1))


def test_calibrate_encoder_bias(rng):
    m = small_model(rng)
    m.b_enc[:] = -50.0
    h = rng.normal(size=(30, 6))
    shift = calibrate_encoder_bias(m, h)
    assert shift > 0
    assert np.all(np.count_nonzero(encode(h, m), axis=1) == m.k)
    assert calibrate_encoder_bias(m, h) == 0.0
