import numpy as np
import pytest

from blobseg import layers
from blobseg.errors import DimensionError


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f()
        flat[i] = orig - h
        minus = f()
        flat[i] = orig
        gf[i] = (plus - minus) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / scale


def test_identity_conv_preserves_input():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2, 3, 5, 5))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out, _ = layers.conv_forward(x, w, np.zeros(3))
    assert np.array_equal(out, x)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        layers.conv_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        layers.conv_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), np.zeros(1), dilation=2)


@pytest.mark.parametrize("stride,dilation", [(1, 1), (2, 1), (1, 2), (2, 2)])
def test_conv_gradients_match_finite_differences(stride, dilation):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    w = rng.uniform(-1, 1, (4, 3, 3, 3))
    b = rng.uniform(-1, 1, 4)
    target = rng.uniform(-1, 1, (2, 4, 8, 8))

    def loss():
        out, _ = layers.conv_forward(x, w, b, stride=stride, dilation=dilation)
        return float(np.sum(out * target[:, :, : out.shape[2], : out.shape[3]]))

    out, cache = layers.conv_forward(x, w, b, stride=stride, dilation=dilation)
    dout = target[:, :, : out.shape[2], : out.shape[3]]
    dx, dw, db = layers.conv_backward(dout, cache)
    assert rel_err(dw, numeric_grad(loss, w)) < 1e-6
    assert rel_err(db, numeric_grad(loss, b)) < 1e-6
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-6


def test_conv_backward_can_skip_input_gradient():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (1, 2, 6, 6))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    out, cache = layers.conv_forward(x, w, np.zeros(3))
    dx, dw, db = layers.conv_backward(np.ones_like(out), cache, need_dx=False)
    assert dx is None
    assert dw.shape == w.shape


def test_zero_upstream_gradient_gives_zero_parameter_gradients():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (1, 2, 6, 6))
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    out, cache = layers.conv_forward(x, w, np.zeros(3))
    dx, dw, db = layers.conv_backward(np.zeros_like(out), cache)
    assert not dw.any() and not db.any() and not dx.any()


def test_reflect_pad_values_and_adjoint():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    out, cache = layers.reflect_pad_forward(x, 1, 2)
    assert out.shape == (1, 1, 6, 8)
    assert np.array_equal(out[0, 0, 0, 2:6], x[0, 0, 1])  # first row reflects row 1
    assert out[0, 0, 1, 0] == x[0, 0, 0, 2]  # column reflection
    # adjoint identity: <pad(x), u> == <x, pad^T(u)> for random u
    rng = np.random.default_rng(4)
    u = rng.standard_normal(out.shape)
    xt = rng.standard_normal(x.shape)
    lhs = float(np.sum(layers.reflect_pad_forward(xt, 1, 2)[0] * u))
    rhs = float(np.sum(xt * layers.reflect_pad_backward(u, cache)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_reflect_pad_too_wide():
    with pytest.raises(DimensionError):
        layers.reflect_pad_forward(np.zeros((1, 1, 3, 3)), 3, 0)


def test_zero_pad_roundtrip():
    x = np.ones((1, 1, 2, 2))
    out, cache = layers.zero_pad_forward(x, 1, 1)
    assert out.shape == (1, 1, 4, 4)
    assert out.sum() == 4
    back = layers.zero_pad_backward(out, cache)
    assert np.array_equal(back, x)


def test_elu_definition_points():
    x = np.array([[[[0.0, 1.0, -50.0, -1.0]]]])
    out, _ = layers.elu_forward(x)
    assert out[0, 0, 0, 0] == 0.0
    assert out[0, 0, 0, 1] == 1.0
    assert out[0, 0, 0, 2] == pytest.approx(-1.0, abs=1e-12)  # asymptote
    assert out[0, 0, 0, 3] == pytest.approx(np.exp(-1.0) - 1.0)


def test_elu_gradient():
    rng = np.random.default_rng(5)
    x = rng.uniform(-2, 2, (1, 2, 4, 4))
    target = rng.uniform(-1, 1, x.shape)

    def loss():
        out, _ = layers.elu_forward(x)
        return float(np.sum(out * target))

    out, cache = layers.elu_forward(x)
    dx = layers.elu_backward(target, cache)
    assert rel_err(dx, numeric_grad(loss, x)) < 1e-6


def test_shuffle_is_a_permutation():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 4, 2, 2))
    out, _ = layers.shuffle_forward(x, 2)
    assert out.shape == (2, 1, 4, 4)
    assert sorted(out.ravel().tolist()) == sorted(x.ravel().tolist())


def test_shuffle_matches_channel_to_space_layout():
    # output[c, h*r + i, w*r + j] == input[c*r*r + i*r + j, h, w]
    x = np.arange(16, dtype=float).reshape(1, 4, 2, 2)
    out, _ = layers.shuffle_forward(x, 2)
    for h in range(2):
        for w in range(2):
            for i in range(2):
                for j in range(2):
                    assert out[0, 0, h * 2 + i, w * 2 + j] == x[0, i * 2 + j, h, w]


def test_shuffle_backward_is_inverse_permutation():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 8, 3, 3))
    out, cache = layers.shuffle_forward(x, 2)
    assert np.array_equal(layers.shuffle_backward(out, cache), x)


def test_unshuffle_inverts_shuffle():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 12, 4, 4))
    out, _ = layers.shuffle_forward(x, 2)
    assert np.array_equal(layers.pixel_unshuffle(out, 2), x)


def test_shuffle_ratio_must_divide_channels():
    with pytest.raises(DimensionError):
        layers.shuffle_forward(np.zeros((1, 3, 2, 2)), 2)


def test_dropout_scaling_and_backward():
    rng = np.random.default_rng(9)
    x = np.ones((1, 1, 50, 50))
    out, cache = layers.dropout_forward(x, 0.2, rng)
    kept = out > 0
    assert np.all(out[kept] == pytest.approx(1.25))
    assert 0.7 < kept.mean() < 0.9
    dout = np.ones_like(out)
    dx = layers.dropout_backward(dout, cache)
    assert np.array_equal(dx > 0, kept)
    out2, cache2 = layers.dropout_forward(x, 0.0, rng)
    assert cache2 is None and np.array_equal(out2, x)
