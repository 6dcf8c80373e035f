import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import TINY, gradient_check
from keystroke.nn import (
    DegenerateBatch,
    ModelConfig,
    ShapeMismatch,
    batchnorm_forward,
    conv3d_forward,
    conv3d_second_forward,
    dropout_forward,
    gru_forward,
    init_params,
    loss_and_grads,
    model_forward,
    mse_grad,
    mse_loss,
    param_shapes,
    softmax,
    weighted_ce_grad,
    weighted_ce_loss,
)

SMALL = ModelConfig(conv1_channels=3, conv2_channels=4, gru_hidden=5, fc_hidden=6)


def naive_conv1(x, w, bias):
    """Direct loops over the padded volume: padding (1, 3, 0), stride (1, 4, 1)."""
    b, cin, n, hgt, wid = x.shape
    xp = np.zeros((b, cin, n + 2, hgt + 6, wid))
    xp[:, :, 1:n + 1, 3:3 + hgt] = x
    cout, _, kt, kh, kw = w.shape
    oh = (hgt + 6 - kh) // 4 + 1
    ow = wid - kw + 1
    out = np.zeros((b, cout, n, oh, ow))
    for bi in range(b):
        for o in range(cout):
            for t in range(n):
                for g in range(oh):
                    for q in range(ow):
                        patch = xp[bi, :, t:t + kt, 4 * g:4 * g + kh, q:q + kw]
                        out[bi, o, t, g, q] = (patch * w[o]).sum() + bias[o]
    return out


def naive_conv2(x, w, bias):
    b, _, n, _, _ = x.shape
    out = np.zeros((b, w.shape[0], n, 1, 1))
    for bi in range(b):
        for o in range(w.shape[0]):
            for t in range(n):
                out[bi, o, t, 0, 0] = (x[bi, :, t:t + 1] * w[o]).sum() + bias[o]
    return out


@pytest.fixture
def small_params():
    p = init_params(SMALL, 0)
    rng = np.random.default_rng(1)
    p.weights["conv1.bias"] = rng.normal(size=3)
    p.weights["conv2.bias"] = rng.normal(size=4)
    return p


def test_conv1_matches_loop_oracle(small_params):
    x = np.random.default_rng(2).normal(size=(2, 2, 5, 21, 3))
    got = conv3d_forward(x, small_params)
    want = naive_conv1(x, small_params.weights["conv1.weight"], small_params.weights["conv1.bias"])
    assert got.shape == (2, 3, 5, 6, 1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv2_matches_loop_oracle(small_params):
    x = np.random.default_rng(3).normal(size=(2, 3, 4, 6, 1))
    got = conv3d_second_forward(x, small_params)
    want = naive_conv2(x, small_params.weights["conv2.weight"], small_params.weights["conv2.bias"])
    assert got.shape == (2, 4, 4, 1, 1)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv1_delta_kernel_picks_single_input():
    cfg = ModelConfig(conv1_channels=1, conv2_channels=1, gru_hidden=1, fc_hidden=1)
    p = init_params(cfg, 0)
    w = np.zeros((1, 2, 3, 4, 3))
    w[0, 0, 1, 3, 0] = 1.0  # centre frame, last row of the window, x coordinate, left hand
    p.weights["conv1.weight"] = w
    x = np.random.default_rng(4).normal(size=(1, 2, 3, 21, 3))
    out = conv3d_forward(x, p)[0, 0, :, :, 0]
    # window g covers padded rows 4g..4g+3, i.e. landmark 4g
    np.testing.assert_allclose(out, x[0, 0, :, 0:21:4, 0])


def test_conv1_ones_kernel_counts_valid_inputs():
    cfg = ModelConfig(conv1_channels=1, conv2_channels=1, gru_hidden=1, fc_hidden=1)
    p = init_params(cfg, 0)
    p.weights["conv1.weight"] = np.ones((1, 2, 3, 4, 3))
    out = conv3d_forward(np.ones((1, 2, 4, 21, 3)), p)[0, 0, :, :, 0]
    # wrist window has 1 real row, finger windows 4; edge frames see 2 of 3 frames
    per_frame = np.array([1, 4, 4, 4, 4, 4]) * 2 * 3
    np.testing.assert_allclose(out[1], per_frame * 3)
    np.testing.assert_allclose(out[0], per_frame * 2)
    np.testing.assert_allclose(out[-1], per_frame * 2)


def test_param_shapes_follow_config():
    shapes = param_shapes(ModelConfig())
    assert shapes["conv1.weight"] == (32, 2, 3, 4, 3)
    assert shapes["conv2.weight"] == (64, 32, 1, 6, 1)
    assert shapes["gru1.w_ih"] == (384, 64) and shapes["gru2.w_hh"] == (384, 128)
    assert shapes["fc1.weight"] == (64, 128) and shapes["fc2.weight"] == (28, 64)


def test_init_bounds():
    p = init_params(ModelConfig(), 0)
    bound = np.sqrt(3.0 / 72)
    assert np.abs(p.weights["conv1.weight"]).max() <= bound
    assert not p.weights["fc1.bias"].any()
    assert (p.weights["bn1.gamma"] == 1).all()


@pytest.mark.parametrize("n", [1, 64, 128])
def test_output_shape_and_simplex(n):
    p = init_params(SMALL, 0)
    probs = model_forward(np.random.default_rng(n).normal(size=(3, 2, n, 21, 3)), p)
    assert probs.shape == (3, n, 28)
    assert (probs >= 0).all()
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-12)


def test_bad_input_shape():
    p = init_params(SMALL, 0)
    with pytest.raises(ShapeMismatch):
        model_forward(np.zeros((1, 2, 4, 20, 3)), p)
    with pytest.raises(ShapeMismatch):
        model_forward(np.zeros((2, 4, 21, 3)), p)


def test_eval_is_deterministic_and_stateless():
    p = init_params(SMALL, 0)
    x = np.random.default_rng(5).normal(size=(2, 2, 10, 21, 3))
    before = {k: v.copy() for k, v in p.buffers.items()}
    a, b = model_forward(x, p), model_forward(x, p)
    np.testing.assert_array_equal(a, b)
    for k in before:
        np.testing.assert_array_equal(p.buffers[k], before[k])


def test_eval_is_causal_beyond_one_frame():
    p = init_params(SMALL, 0)
    x = np.random.default_rng(6).normal(size=(1, 2, 20, 21, 3))
    y = x.copy()
    y[:, :, 12:] += 1.0
    # frames up to 10 only see inputs up to 11
    np.testing.assert_array_equal(model_forward(x, p)[:, :11], model_forward(y, p)[:, :11])
    assert not np.allclose(model_forward(x, p)[:, 11], model_forward(y, p)[:, 11])


def test_batchnorm_train_normalizes_and_updates_running_stats():
    rng = np.random.default_rng(7)
    x = rng.normal(3.0, 2.0, size=(8, 5, 4))
    rm, rv = np.zeros(4), np.ones(4)
    y, _ = batchnorm_forward(x, np.ones(4), np.zeros(4), rm, rv, "train")
    np.testing.assert_allclose(y.mean(axis=(0, 1)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 1)), 1.0, rtol=1e-4)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 1)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.reshape(-1, 4).var(axis=0, ddof=1))


def test_batchnorm_eval_uses_running_stats():
    x = np.arange(12.0).reshape(3, 4)
    y, cache = batchnorm_forward(x, np.full(4, 2.0), np.ones(4), np.full(4, 1.0), np.full(4, 4.0), "eval")
    assert cache is None
    np.testing.assert_allclose(y, (x - 1.0) / np.sqrt(4.0 + 1e-5) * 2.0 + 1.0)


def test_batchnorm_single_sample_train_rejected():
    with pytest.raises(DegenerateBatch):
        batchnorm_forward(np.ones((1, 5, 3)), np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), "train")


def test_dropout_modes():
    x = np.ones((1000, 10))
    y, mask = dropout_forward(x, 0.2, "eval")
    assert y is x and mask is None
    y, mask = dropout_forward(x, 0.2, "train", np.random.default_rng(0))
    kept = y != 0
    assert 0.75 < kept.mean() < 0.85
    np.testing.assert_allclose(y[kept], 1.25)


def test_gru_zero_weights_keep_zero_state():
    h = 3
    x = np.random.default_rng(8).normal(size=(2, 5, 4))
    out = gru_forward(x, np.zeros((2, h)), np.zeros((3 * h, 4)), np.zeros((3 * h, h)),
                      np.zeros(3 * h), np.zeros(3 * h))
    # z = 0.5 and candidate = 0, so the state stays at zero
    np.testing.assert_array_equal(out, 0.0)


def test_gru_sequence_split_invariance():
    rng = np.random.default_rng(9)
    h, f = 4, 3
    w = [rng.normal(size=(3 * h, f)), rng.normal(size=(3 * h, h)), rng.normal(size=3 * h), rng.normal(size=3 * h)]
    x = rng.normal(size=(2, 12, f))
    full = gru_forward(x, np.zeros((2, h)), *w)
    first = gru_forward(x[:, :7], np.zeros((2, h)), *w)
    second = gru_forward(x[:, 7:], first[:, -1], *w)
    np.testing.assert_allclose(np.concatenate([first, second], axis=1), full, atol=1e-14)


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.floats(-100, 100))
def test_softmax_properties(logits, shift):
    z = np.asarray(logits)
    p = softmax(z)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert (p >= 0).all()
    np.testing.assert_allclose(softmax(z + shift), p, atol=1e-12)


def test_softmax_extreme_logits_finite():
    p = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.isfinite(p).all() and p[0] == pytest.approx(1.0)


def test_mse_values():
    pred = np.array([[0.5, 0.5]])
    target = np.array([[1.0, 0.0]])
    assert mse_loss(pred, target) == pytest.approx(0.25)
    np.testing.assert_allclose(mse_grad(pred, target), [[-0.5, 0.5]])
    np.testing.assert_allclose(mse_grad(pred, target, scale=4.0), [[-2.0, 2.0]])
    with pytest.raises(ShapeMismatch):
        mse_loss(pred, target.T)


def test_weighted_ce_values():
    pred = np.array([[0.25, 0.75], [0.5, 0.5]])
    target = np.array([[0.0, 1.0], [1.0, 0.0]])
    w = np.array([2.0, 1.0])
    expect = -(np.log(0.75) + 2.0 * np.log(0.5)) / 2
    assert weighted_ce_loss(pred, target, w) == pytest.approx(expect)
    g = weighted_ce_grad(pred, target, w)
    np.testing.assert_allclose(g, [[0.0, -1 / 0.75 / 2], [-2.0 / 0.5 / 2, 0.0]])


def test_weighted_ce_clamps_zero_probability():
    pred = np.array([[0.0, 1.0]])
    target = np.array([[1.0, 0.0]])
    loss = weighted_ce_loss(pred, target, np.ones(2))
    assert loss == pytest.approx(-np.log(1e-12))
    assert np.isfinite(weighted_ce_grad(pred, target, np.ones(2))).all()


def test_loss_scale_multiplies_loss_and_grads():
    p = init_params(TINY, 0)
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 2, 6, 21, 3))
    t = rng.dirichlet(np.ones(28), size=(2, 6))
    l1, g1, _ = loss_and_grads(x, t, p.copy(), "mse", rng=np.random.default_rng(0))
    l3, g3, _ = loss_and_grads(x, t, p.copy(), "mse", rng=np.random.default_rng(0), loss_scale=3.0)
    assert l3 == pytest.approx(3 * l1)
    np.testing.assert_allclose(g3["fc2.weight"], 3 * g1["fc2.weight"])


def test_unknown_loss_rejected():
    p = init_params(TINY, 0)
    with pytest.raises(ValueError):
        loss_and_grads(np.zeros((2, 2, 6, 21, 3)), np.zeros((2, 6, 28)), p, "hinge")


@pytest.mark.parametrize("loss", ["mse", "ce"])
def test_gradient_check(loss):
    errors, _ = gradient_check(loss, per_tensor=20, seed=3)
    assert max(errors.values()) < 1e-4, errors


def test_config_hash_changes_with_config():
    assert ModelConfig().config_hash() == ModelConfig().config_hash()
    assert ModelConfig().config_hash() != ModelConfig(gru_hidden=64).config_hash()
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
