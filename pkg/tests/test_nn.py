import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowsense.nn import (
    Conv2d, ConvBlock, Dense, GlobalAvgPool, ReLU, RSoftmax, Sequential, ShapeError, SplitAttention,
    finite_diff_check, function_grad_check, rsoftmax, sgd_step, softmax, softmax_cross_entropy,
)


def f64(layer):
    return layer.astype(np.float64)


# --- conv2d ---------------------------------------------------------------------

def test_conv_one_by_one():
    c = Conv2d(1, 1, 1)
    c.params["weight"][:] = 2.0
    assert c.forward(np.full((1, 1, 1, 1), 3.0, dtype=np.float32))[0, 0, 0, 0] == 6.0


def test_conv_valid_hand_sum():
    c = Conv2d(1, 1, 2)
    c.params["weight"][:] = 1.0
    out = c.forward(np.array([[[[1, 2], [3, 4]]]], dtype=np.float32))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 10.0


def test_conv_delta_kernel_is_identity():
    c = Conv2d(1, 1, 3, pad=1)
    c.params["weight"][:] = 0.0
    c.params["weight"][0, 0, 1, 1] = 1.0
    x = np.random.default_rng(0).random((2, 1, 5, 5)).astype(np.float32)
    assert np.array_equal(c.forward(x), x)


def test_conv_matches_direct_loops():
    rng = np.random.default_rng(3)
    c = f64(Conv2d(2, 3, 3, stride=2, pad=1, rng=rng))
    c.params["bias"][:] = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 7, 7))
    out = c.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (7 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 3, ho, ho))
    for n in range(2):
        for f in range(3):
            for i in range(ho):
                for j in range(ho):
                    ref[n, f, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * c.params["weight"][f]) \
                        + c.params["bias"][f]
    assert np.allclose(out, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        Conv2d(2, 1, 3).forward(np.zeros((1, 1, 4, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        Conv2d(1, 1, 5).forward(np.zeros((1, 1, 3, 3), dtype=np.float32))


# --- dense ------------------------------------------------------------------------

def test_dense_hand_example():
    d = Dense(2, 1)
    d.params["weight"][:] = [[1.0], [1.0]]
    d.params["bias"][:] = 0.5
    assert d.forward(np.array([[1.0, 2.0]], dtype=np.float32))[0, 0] == 3.5


def test_dense_identity_and_zero_input():
    d = Dense(4, 4)
    d.params["weight"][:] = np.eye(4)
    x = np.random.default_rng(0).random((3, 4)).astype(np.float32)
    assert np.array_equal(d.forward(x), x)
    d.params["bias"][:] = [1, 2, 3, 4]
    assert np.array_equal(d.forward(np.zeros((2, 4), dtype=np.float32)), np.tile([1, 2, 3, 4], (2, 1)))


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        Dense(3, 2).forward(np.zeros((1, 4), dtype=np.float32))


# --- rsoftmax -------------------------------------------------------------------

def test_rsoftmax_examples():
    assert np.allclose(rsoftmax(np.zeros((1, 2, 1))).ravel(), [0.5, 0.5])
    assert np.allclose(rsoftmax(np.array([[[math.log(3)], [0.0]]])).ravel(), [0.75, 0.25], atol=1e-15)
    assert rsoftmax(np.zeros((1, 1, 1)))[0, 0, 0] == 0.5


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 3, 5), elements=st.floats(-1e4, 1e4)))
def test_rsoftmax_rows_sum_to_one(logits):
    y = rsoftmax(logits)
    assert np.all(np.isfinite(y))
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-6)


# --- split attention ------------------------------------------------------------

def _symmetric_block(seed=0, channels=4):
    blk = f64(SplitAttention(channels, channels, radix=2, rng=np.random.default_rng(seed)))
    for k in ("weight", "bias"):
        blk.convs[1].params[k][:] = blk.convs[0].params[k]
    w = blk.fc2.params["weight"]
    w[:, channels:] = w[:, :channels]
    b = blk.fc2.params["bias"]
    b[channels:] = b[:channels]
    return blk


def test_symmetric_paths_give_equal_attention():
    blk = _symmetric_block()
    blk.forward(np.random.default_rng(1).normal(size=(3, 4, 6, 6)))
    assert np.all(blk.attention == 0.5)


def test_zero_input_gives_zero_output():
    blk = SplitAttention(4, 4, radix=2, rng=np.random.default_rng(0))
    out = blk.forward(np.zeros((2, 4, 5, 5), dtype=np.float32))
    assert blk.shortcut is None and np.all(out == 0)


def test_strided_block_uses_projection_shortcut():
    blk = SplitAttention(2, 4, radix=2, stride=2, rng=np.random.default_rng(0))
    assert blk.forward(np.ones((1, 2, 12, 12), dtype=np.float32)).shape == (1, 4, 6, 6)
    assert blk.shortcut is not None


def test_radix_must_be_positive():
    with pytest.raises(ValueError):
        SplitAttention(4, 4, radix=0)


# --- gradient checks ------------------------------------------------------------

SEEDS = [0, 1, 2, 3, 4]


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradient(seed):
    rng = np.random.default_rng(seed)
    d = f64(Dense(4, 5, rng=rng))
    d.params["bias"][:] = rng.normal(size=5)
    assert finite_diff_check(d, rng.normal(size=(3, 4)), seed=seed) < 1e-7


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradient(seed):
    rng = np.random.default_rng(seed)
    c = f64(Conv2d(1, 2, 3, pad=1, rng=rng))
    assert finite_diff_check(c, rng.normal(size=(1, 1, 4, 4)), seed=seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_strided_conv_gradient(seed):
    rng = np.random.default_rng(seed)
    c = f64(Conv2d(2, 3, 3, stride=2, pad=1, rng=rng))
    assert finite_diff_check(c, rng.normal(size=(2, 2, 5, 5)), seed=seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_rsoftmax_gradient(seed):
    rng = np.random.default_rng(seed)
    for r in (1, 2, 3):
        assert finite_diff_check(RSoftmax(), rng.normal(size=(2, r, 4)), seed=seed) < 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_split_attention_gradient(seed):
    rng = np.random.default_rng(seed)
    blk = f64(SplitAttention(4, 4, radix=2, rng=rng))
    for _, p in blk.named_parameters():
        if p.ndim == 1:
            p[:] = rng.normal(scale=0.1, size=p.shape)
    assert finite_diff_check(blk, rng.normal(size=(1, 4, 4, 4)), seed=seed) < 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_projection_block_gradient(seed):
    rng = np.random.default_rng(seed)
    blk = f64(SplitAttention(2, 4, radix=2, stride=2, rng=rng))
    assert finite_diff_check(blk, rng.normal(size=(1, 2, 4, 4)), seed=seed) < 1e-5


def test_stacked_layers_gradient():
    rng = np.random.default_rng(7)
    net = f64(Sequential([("a", ConvBlock(1, 3, rng=rng)), ("pool", GlobalAvgPool()), ("fc", Dense(3, 2, rng=rng))]))
    assert finite_diff_check(net, rng.normal(size=(2, 1, 4, 4))) < 1e-5


def test_relu_gradient_away_from_kink():
    x = np.array([[-2.0, -0.5, 0.5, 3.0]])
    assert finite_diff_check(ReLU(), x) < 1e-9


def test_gradcheck_requires_f64():
    with pytest.raises(TypeError):
        finite_diff_check(Dense(2, 2), np.zeros((1, 2)))


# --- loss ---------------------------------------------------------------------------

def test_cross_entropy_uniform():
    loss, _ = softmax_cross_entropy(np.zeros((1, 2)), [0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_saturated_is_stable():
    loss, grad = softmax_cross_entropy(np.array([[100.0, 0.0]]), [0])
    assert 0 <= loss < 1e-40 and np.all(np.isfinite(grad))


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    logits, labels = rng.normal(size=(4, 3)), rng.integers(0, 3, 4)
    _, grad = softmax_cross_entropy(logits, labels)
    assert function_grad_check(lambda z: softmax_cross_entropy(z, labels)[0], grad, logits) < 1e-5
    assert np.allclose(grad.sum(axis=1), 0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-1e4, 1e4)), st.lists(st.integers(0, 1), min_size=3, max_size=3))
def test_cross_entropy_never_nan(logits, labels):
    loss, grad = softmax_cross_entropy(logits, labels)
    assert math.isfinite(loss) and loss >= 0
    assert np.all(np.isfinite(grad)) and np.all(np.isfinite(softmax(logits)))


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 2)), [0, 2])


# --- sgd ----------------------------------------------------------------------------

def test_sgd_plain_step():
    w, v = np.array([1.0]), np.zeros(1)
    sgd_step([w], [np.array([0.5])], [v], lr=0.1)
    assert w[0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_momentum_recursion():
    w, v, g = np.zeros(1), np.zeros(1), np.ones(1)
    sgd_step([w], [g], [v], lr=0.1, momentum=0.9)
    assert v[0] == 1.0 and w[0] == pytest.approx(-0.1, abs=1e-15)
    sgd_step([w], [g], [v], lr=0.1, momentum=0.9)
    assert v[0] == pytest.approx(1.9, abs=1e-15) and w[0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_fixed_point():
    w = np.array([0.3, -1.2])
    before = w.copy()
    sgd_step([w], [np.zeros(2)], [np.zeros(2)], lr=0.1, momentum=0.9)
    assert np.array_equal(w, before)


def test_sgd_weight_decay():
    w, v = np.array([2.0]), np.zeros(1)
    sgd_step([w], [np.zeros(1)], [v], lr=0.5, weight_decay=0.1)
    assert v[0] == pytest.approx(0.2) and w[0] == pytest.approx(1.9)


def test_sgd_negative_lr_rejected():
    with pytest.raises(ValueError):
        sgd_step([np.zeros(1)], [np.zeros(1)], [np.zeros(1)], lr=-0.1)


# --- determinism -------------------------------------------------------------------

def test_seeded_init_and_forward_are_deterministic():
    x = np.random.default_rng(9).random((2, 4, 6, 6)).astype(np.float32)
    a = SplitAttention(4, 4, rng=np.random.default_rng(5))
    b = SplitAttention(4, 4, rng=np.random.default_rng(5))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa, pb)
    assert np.array_equal(a.forward(x), b.forward(x))
    assert np.array_equal(a.forward(x), a.forward(x))
