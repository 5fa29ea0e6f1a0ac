import numpy as np
import pytest

from cabletug import mlp
from cabletug.mlp import DivergenceError, MLPParams, TrainConfig, forward, forward_batch, loss_and_gradient, train


def zero_params(hidden=30, b2=0.0):
    return MLPParams(
        w1=np.zeros((hidden, 4)),
        b1=np.zeros(hidden),
        w2=np.zeros(hidden),
        b2=b2,
        mean=np.zeros(4),
        scale=np.ones(4),
    )


def random_params(rng, hidden=8):
    return MLPParams(
        w1=rng.normal(0, 0.7, (hidden, 4)),
        b1=rng.normal(0, 0.7, hidden),
        w2=rng.normal(0, 0.7, hidden),
        b2=float(rng.normal(0, 0.7)),
        mean=rng.normal(0, 1.0, 4),
        scale=rng.uniform(0.5, 2.0, 4),
    )


# ---------------------------------------------------------------- forward

def test_forward_zero_network_returns_bias():
    params = zero_params(b2=0.3)
    for x in np.random.default_rng(0).normal(0, 2, (20, 4)):
        assert forward(params, x) == pytest.approx(0.3)


def test_forward_dead_output_path():
    rng = np.random.default_rng(1)
    params = random_params(rng)
    params.w2[:] = 0.0
    params.b2 = -1.25
    for x in rng.normal(0, 2, (20, 4)):
        assert forward(params, x) == pytest.approx(-1.25)


def test_forward_scale_weight_identity():
    # doubling the standardization scale halves z; doubling the first-layer
    # weights restores the product, so outputs are unchanged
    rng = np.random.default_rng(2)
    params = random_params(rng)
    rescaled = params.copy()
    rescaled.scale = params.scale * 2.0
    rescaled.w1 = params.w1 * 2.0
    for x in rng.normal(0, 2, (20, 4)):
        base = forward(params, x)
        # mean offset interacts with scale, so compare at x = mean + delta
        assert forward(rescaled, x) == pytest.approx(base, rel=1e-12)


def test_forward_batch_matches_scalar():
    rng = np.random.default_rng(3)
    params = random_params(rng)
    xs = rng.normal(0, 1.5, (40, 4))
    batched = forward_batch(params, xs)
    singles = np.array([forward(params, x) for x in xs])
    assert batched == pytest.approx(singles, rel=1e-12)


# ---------------------------------------------------------------- gradient

def test_loss_zero_for_perfect_fit():
    rng = np.random.default_rng(4)
    params = random_params(rng)
    xs = rng.normal(0, 1, (16, 4))
    ys = forward_batch(params, xs)
    loss, grad = loss_and_gradient(params, xs, ys)
    assert loss == pytest.approx(0.0, abs=1e-24)
    for g in grad.values():
        assert np.max(np.abs(g)) == pytest.approx(0.0, abs=1e-12)


def test_loss_single_sample_zero_network():
    params = zero_params()
    loss, _ = loss_and_gradient(params, np.zeros((1, 4)), np.array([0.7]))
    assert loss == pytest.approx(0.49)


def flatten(params):
    return np.concatenate([params.w1.ravel(), params.b1, params.w2, [params.b2]])


def unflatten(vec, params):
    h = params.n_hidden
    out = params.copy()
    out.w1 = vec[:4 * h].reshape(h, 4)
    out.b1 = vec[4 * h:5 * h]
    out.w2 = vec[5 * h:6 * h]
    out.b2 = float(vec[6 * h])
    return out


def numerical_gradient(params, xs, ys, h=1e-5):
    theta = flatten(params)
    grad = np.empty_like(theta)
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        lu, _ = loss_and_gradient(unflatten(up, params), xs, ys)
        ld, _ = loss_and_gradient(unflatten(dn, params), xs, ys)
        grad[i] = (lu - ld) / (2 * h)
    return grad


def gradient_audit(seed, hidden=6, batch=12):
    rng = np.random.default_rng(seed)
    params = random_params(rng, hidden)
    xs = rng.normal(0, 1.5, (batch, 4))
    ys = rng.normal(0, 2.0, batch)
    _, grad = loss_and_gradient(params, xs, ys)
    analytic = np.concatenate([grad["w1"].ravel(), grad["b1"], grad["w2"], grad["b2"].ravel()])
    numeric = numerical_gradient(params, xs, ys)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def test_gradient_matches_central_differences():
    worst = max(gradient_audit(seed) for seed in range(5))
    assert worst < 1e-4


# ---------------------------------------------------------------- train

def test_train_fits_sine():
    rng = np.random.default_rng(5)
    x1 = rng.uniform(-2.0, 2.0, 200)
    xs = np.zeros((200, 4))
    xs[:, 0] = x1
    ys = np.sin(2.0 * x1)
    cfg = TrainConfig(learning_rate=0.03, epochs=4000, batch_size=8, rng_seed=1)
    _, history = train(xs, ys, cfg)
    assert history[-1] < 1e-3


def test_train_constant_target():
    rng = np.random.default_rng(6)
    xs = rng.normal(0, 1, (64, 4))
    ys = np.full(64, 2.5)
    params, history = train(xs, ys, TrainConfig(learning_rate=0.1, epochs=300,
                                                init_scale=0.02, rng_seed=1))
    assert history[-1] < 1e-6
    assert forward(params, rng.normal(0, 1, 4)) == pytest.approx(2.5, abs=1e-2)


def test_train_deterministic_per_seed():
    rng = np.random.default_rng(7)
    xs = rng.normal(0, 1, (50, 4))
    ys = rng.normal(0, 1, 50)
    cfg = TrainConfig(epochs=20, rng_seed=123)
    _, h1 = train(xs, ys, cfg)
    _, h2 = train(xs, ys, cfg)
    assert h1 == h2


def test_train_divergence_error():
    rng = np.random.default_rng(8)
    xs = rng.normal(0, 1, (64, 4))
    ys = rng.normal(0, 1, 64)
    with pytest.raises(DivergenceError, match="learning_rate"):
        train(xs, ys, TrainConfig(learning_rate=1e6, epochs=10))


def test_train_rejects_tiny_dataset():
    xs = np.zeros((4, 4))
    with pytest.raises(ValueError, match="batch_size"):
        train(xs, np.zeros(4), TrainConfig(batch_size=32))


def test_train_does_not_mutate_inputs():
    rng = np.random.default_rng(9)
    xs = rng.normal(0, 1, (40, 4))
    ys = rng.normal(0, 1, 40)
    xs0, ys0 = xs.copy(), ys.copy()
    train(xs, ys, TrainConfig(epochs=5))
    assert np.array_equal(xs, xs0)
    assert np.array_equal(ys, ys0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
