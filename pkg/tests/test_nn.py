import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scdgcn.errors import ShapeError, UsageError
from scdgcn.nn import (AMSGrad, Adam, Conv2D, Dense, Dropout, MaxPool, ReLU, Sequential, load_checkpoint,
                       masked_cross_entropy, mse_loss, save_checkpoint)
from scdgcn.nn.gradcheck import LAYER_KINDS, LOSS_KINDS, check_layer, check_loss, check_model_gradients


def test_identity_dense_passes_input_through():
    layer = Dense(3, 3)
    layer.params["W"] = np.eye(3, dtype=np.float32)
    layer.params["b"] = np.zeros(3, dtype=np.float32)
    x = np.array([[1.0, -2.0, 0.5]], dtype=np.float32)
    out, _ = Sequential([layer], (3,)).forward(x)
    np.testing.assert_array_equal(out, x)


def test_relu_values():
    out, _ = Sequential([ReLU()], (3,)).forward(np.array([[-1.0, 2.0, 0.0]]))
    np.testing.assert_array_equal(out, [[0.0, 2.0, 0.0]])


def test_one_by_one_ones_kernel_is_identity():
    conv = Conv2D(1, 1, kernel=1)
    conv.params["W"][:] = 1.0
    conv.params["b"][:] = 0.0
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)[None, :, :, None]
    out, _ = Sequential([conv], (2, 2, 1)).forward(x)
    np.testing.assert_array_equal(out, x)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    conv = Conv2D(2, 3, kernel=3, rng=rng)
    x = rng.normal(size=(2, 5, 4, 2)).astype(np.float32)
    out, _ = Sequential([conv], (5, 4, 2)).forward(x)
    W, b = conv.params["W"].astype(np.float64), conv.params["b"].astype(np.float64)
    xp = np.pad(x.astype(np.float64), ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 5, 4, 3))
    for n in range(2):
        for i in range(5):
            for j in range(4):
                ref[n, i, j] = np.einsum("abc,abco->o", xp[n, i:i + 3, j:j + 3], W) + b
    np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)


def test_maxpool_floors_odd_sizes():
    out, _ = Sequential([MaxPool(2)], (5, 3, 1)).forward(np.arange(15.0).reshape(1, 5, 3, 1))
    assert out.shape == (1, 2, 1, 1)
    np.testing.assert_array_equal(out[0, :, 0, 0], [4.0, 10.0])


def test_dense_mse_gradient_matches_hand_derivation():
    rng = np.random.default_rng(1)
    dense = Dense(4, 2, rng=rng)
    model = Sequential([dense], (4,)).astype(np.float64)
    x = rng.normal(size=(1, 4))
    y = rng.normal(size=(1, 2))
    pred, cache = model.forward(x)
    _, grad = mse_loss(pred, y)
    grads, _ = model.backward(cache, grad)
    # d/dW mean((xW + b - y)^2) over the 2 outputs of one sample
    expected = np.outer(x[0], 2.0 * (pred - y)[0] / 2.0)
    np.testing.assert_allclose(grads["0.W"], expected, rtol=1e-12)


def test_relu_gradient_passes_through_positive():
    model = Sequential([ReLU()], (3,)).astype(np.float64)
    x = np.array([[0.5, 2.0, 3.0]])
    _, cache = model.forward(x)
    _, dx = model.backward(cache, np.array([[1.0, -2.0, 4.0]]))
    np.testing.assert_array_equal(dx, [[1.0, -2.0, 4.0]])


def test_two_conv_model_gradients():
    rng = np.random.default_rng(2)
    model = Sequential([Conv2D(1, 2, 3, rng=rng), ReLU(), Conv2D(2, 2, 3, rng=rng), ReLU(),
                        MaxPool(2), Dropout(0.3)], (6, 4, 1))
    x = rng.normal(size=(2, 6, 4, 1))
    target = rng.normal(size=(2, 3, 2, 2))
    errors = check_model_gradients(model, x, lambda out: mse_loss(out, target), training=True, rng_seed=5)
    assert max(errors.values()) < 1e-4


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_layer_gradcheck(kind):
    for seed in range(5):
        assert check_layer(kind, seed) < 1e-4


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_loss_gradcheck(kind):
    for seed in range(5):
        assert check_loss(kind, seed) < 1e-4


def test_shape_mismatch_names_layer():
    model = Sequential([Dense(4, 3), ReLU(), Dense(3, 2)], (4,))
    with pytest.raises(ShapeError, match="layer 0"):
        model.forward(np.zeros((1, 5)))
    with pytest.raises(ShapeError, match="layer 2"):
        Sequential([Dense(4, 3), ReLU(), Dense(5, 2)], (4,))


def test_stale_cache_rejected():
    model = Sequential([Dense(2, 2)], (2,))
    _, cache = model.forward(np.ones((1, 2)))
    model.mark_updated()
    with pytest.raises(UsageError):
        model.backward(cache, np.ones((1, 2)))
    _, cache = model.forward(np.ones((1, 2)))
    model.backward(cache, np.ones((1, 2), dtype=np.float32))
    with pytest.raises(UsageError):
        model.backward(cache, np.ones((1, 2), dtype=np.float32))


def test_dropout_inverted_and_off_at_inference():
    model = Sequential([Dropout(0.5)], (1000,))
    x = np.ones((4, 1000), dtype=np.float32)
    out, _ = model.forward(x, training=True, rng_seed=3)
    assert set(np.unique(out).tolist()) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05
    np.testing.assert_array_equal(model.forward(x)[0], x)


# --- losses -----------------------------------------------------------------

def test_mse_examples():
    assert mse_loss(np.array([1.5, 2.0]), np.array([1.5, 2.0]))[0] == 0.0
    assert mse_loss(np.array([3.0]), np.array([1.0]))[0] == 4.0
    assert mse_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]))[0] == 2.5


def test_masked_cross_entropy_examples():
    logits = np.zeros((4, 5))
    loss, _ = masked_cross_entropy(logits, np.array([0, 1, 2, 3]), np.ones(4, dtype=bool))
    assert loss == pytest.approx(np.log(5), abs=1e-12)
    big = np.array([[100.0, 0.0, 0.0]])
    assert masked_cross_entropy(big, np.array([0]), np.array([True]))[0] < 1e-30
    rng = np.random.default_rng(0)
    loss, grad = masked_cross_entropy(rng.normal(size=(3, 4)), np.array([0, 1, 2]),
                                      np.array([False, True, False]))
    assert np.all(grad[[0, 2]] == 0.0)
    assert np.any(grad[1] != 0.0)
    with pytest.raises(UsageError):
        masked_cross_entropy(np.zeros((2, 2)), np.array([0, 1]), np.zeros(2, dtype=bool))


# --- optimizers ---------------------------------------------------------------

def test_adam_zero_gradient_keeps_params_and_decays_moments():
    opt = Adam(lr=0.1)
    p = {"w": np.array([1.0, -2.0])}
    opt.step(p, {"w": np.array([0.5, 0.5])})
    m_before, v_before, w_before = opt.m["w"].copy(), opt.v["w"].copy(), p["w"].copy()
    opt.m["w"][:] = 0.0
    opt.v["w"][:] = 0.0
    opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], w_before)
    opt2 = Adam(lr=0.1)
    q = {"w": np.array([1.0, -2.0])}
    opt2.step(q, {"w": np.array([0.5, 0.5])})
    opt2.lr = 0.0
    opt2.step(q, {"w": np.zeros(2)})
    np.testing.assert_allclose(opt2.m["w"], 0.9 * m_before)
    np.testing.assert_allclose(opt2.v["w"], 0.999 * v_before)


@given(g=st.floats(min_value=-1e3, max_value=1e3, allow_nan=False).filter(lambda v: abs(v) > 1e-6),
       lr=st.floats(min_value=1e-5, max_value=1.0))
def test_adam_first_step_closed_form(g, lr):
    opt = Adam(lr=lr, eps=1e-8)
    p = {"w": np.array([0.0])}
    opt.step(p, {"w": np.array([g])})
    # m_hat = g and v_hat = g^2 after bias correction
    expected = -lr * g / (abs(g) + 1e-8)
    assert p["w"][0] == pytest.approx(expected, rel=1e-9)


def test_amsgrad_second_moment_monotone():
    opt = AMSGrad(lr=0.01)
    p = {"w": np.zeros(3)}
    prev = np.zeros(3)
    rng = np.random.default_rng(0)
    for t in range(200):
        g = np.array([(-1.0) ** t * 5.0, rng.normal() * (10 if t < 20 else 0.1), 1.0])
        opt.step(p, {"w": g})
        assert np.all(opt.v_max["w"] >= prev)
        assert np.all(opt.v["w"] >= 0)
        prev = opt.v_max["w"].copy()


def test_optimizer_shape_check():
    with pytest.raises(ShapeError):
        Adam().step({"w": np.zeros(3)}, {"w": np.zeros(2)})


# --- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    save_checkpoint(tmp_path / "m.pgcn", tensors, {"note": "x"})
    meta, back = load_checkpoint(tmp_path / "m.pgcn")
    assert meta == {"note": "x"}
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_rejects_garbage(tmp_path):
    from scdgcn.errors import CheckpointError
    bad = tmp_path / "bad.pgcn"
    bad.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_architecture_round_trip():
    rng = np.random.default_rng(0)
    model = Sequential([Conv2D(1, 2, 3, rng=rng), ReLU(), MaxPool((2, 1))], (4, 2, 1))
    clone = Sequential.from_architecture(model.architecture())
    for name, value in model.parameters().items():
        clone.set_parameter(name, value)
    x = rng.normal(size=(3, 4, 2, 1)).astype(np.float32)
    np.testing.assert_array_equal(model.forward(x)[0], clone.forward(x)[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_minibatch_deterministic(seed):
    from scdgcn.nn.train import fit_minibatch
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(10, 3)).astype(np.float32)
    y = rng.normal(size=(10, 1)).astype(np.float32)

    def run():
        model = Sequential([Dense(3, 4, rng=np.random.default_rng(1)), ReLU(), Dropout(0.2),
                            Dense(4, 1, rng=np.random.default_rng(2))], (3,))
        return fit_minibatch(model, x, y, mse_loss, Adam(lr=0.01), 3, 4, seed)

    assert run() == run()
