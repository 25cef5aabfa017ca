import math
import warnings

import numpy as np
import pytest

from fedsim.errors import ConfigurationError, NumericError, ShapeError
from fedsim.nn import (
    AdamState,
    LayerParams,
    ModelWeights,
    build_network,
    compute_gradients,
    evaluate_loss,
    forward,
    forward_batch,
    load_weights,
    save_weights,
    train,
)


def flat_params(weights):
    return np.concatenate([np.concatenate([l.weights.ravel(), l.bias.ravel()]) for l in weights.layers])


def test_build_network_paper_scale_shapes():
    net = build_network(33, 5, [128, 64, 32, 16], seed=0)
    assert net.n_layers == 5
    dims = [(l.weights.shape[1], l.weights.shape[0]) for l in net.layers]
    assert dims == [(33, 128), (128, 64), (64, 32), (32, 16), (16, 5)]
    assert net.version == 0
    for layer in net.layers:
        assert np.all(layer.bias == 0.0)


def test_build_network_same_seed_bit_identical():
    a = build_network(10, 3, [8, 4], seed=42)
    b = build_network(10, 3, [8, 4], seed=42)
    assert np.array_equal(flat_params(a), flat_params(b))
    c = build_network(10, 3, [8, 4], seed=43)
    assert not np.array_equal(flat_params(a), flat_params(c))


def test_build_network_he_uniform_bound():
    # every weight must stay within +-sqrt(6 / fan_in) and actually spread out
    net = build_network(2, 2, [4], seed=7)
    for layer in net.layers:
        fan_in = layer.weights.shape[1]
        bound = math.sqrt(6.0 / fan_in)
        assert np.all(np.abs(layer.weights) <= bound)
        assert layer.weights.std() > 0.1 * bound


@pytest.mark.parametrize("args", [(0, 2, [4]), (3, 1, [4]), (3, 2, []), (3, 2, [0])])
def test_build_network_invalid_dims(args):
    with pytest.raises(ConfigurationError):
        build_network(args[0], args[1], args[2], seed=0)


def test_forward_probabilities_sum_to_one():
    for seed in range(10):
        net = build_network(6, 4, [5], seed=seed)
        x = np.random.default_rng(seed).normal(size=6)
        pred = forward(net, x)
        assert abs(pred.probabilities.sum() - 1.0) <= 1e-9
        assert np.all(pred.probabilities >= 0.0) and np.all(pred.probabilities <= 1.0)
        assert pred.top_class == int(np.argmax(pred.probabilities))
        assert pred.top_prob == pred.probabilities[pred.top_class]


def test_forward_zero_final_layer_uniform():
    net = build_network(4, 5, [6], seed=1)
    net.layers[-1].weights[:] = 0.0
    net.layers[-1].bias[:] = 0.0
    pred = forward(net, np.ones(4))
    assert np.allclose(pred.probabilities, 0.2, atol=1e-12)
    assert pred.top_class == 0  # tie broken toward the lowest index


def test_forward_matches_hand_computation():
    # 2-2-2 network worked out by hand:
    #   z1 = W1 x + b1 = [-2.9, 0.8], relu -> [0, 0.8]
    #   z2 = W2 a + b2 = [-0.75, 1.55]; softmax gap z2[0]-z2[1] = -2.3
    net = ModelWeights([
        LayerParams(np.array([[1.0, -2.0], [0.5, 0.25]]), np.array([0.1, -0.2])),
        LayerParams(np.array([[1.5, -1.0], [0.5, 2.0]]), np.array([0.05, -0.05])),
    ])
    pred = forward(net, np.array([1.0, 2.0]))
    expected_p1 = 1.0 / (1.0 + math.exp(-2.3))
    assert abs(pred.probabilities[1] - expected_p1) <= 1e-9
    assert abs(pred.probabilities[0] - (1.0 - expected_p1)) <= 1e-9
    assert pred.top_class == 1


def test_forward_shape_error():
    net = build_network(4, 2, [3], seed=0)
    with pytest.raises(ShapeError):
        forward(net, np.ones(5))


def test_train_zero_epochs_unchanged():
    net = build_network(3, 2, [4], seed=0)
    adam = AdamState.for_model(net)
    before = flat_params(net).copy()
    train(net, adam, [(np.ones(3), 0)], epochs=0, batch_size=4, rng_seed=0)
    assert np.array_equal(flat_params(net), before)


def test_train_empty_data_warns_no_op():
    net = build_network(3, 2, [4], seed=0)
    adam = AdamState.for_model(net)
    before = flat_params(net).copy()
    with pytest.warns(UserWarning):
        train(net, adam, [], epochs=5, batch_size=4, rng_seed=0)
    assert np.array_equal(flat_params(net), before)


def _logistic_regression_accuracy(x, y, steps=500, lr=0.5):
    """Independent separability oracle: plain gradient-descent logistic regression."""
    xb = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros(xb.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(xb @ w)))
        w -= lr * xb.T @ (p - y) / len(y)
    return float(np.mean((xb @ w > 0).astype(int) == y))


def test_train_separable_blobs():
    rng = np.random.default_rng(5)
    x0 = rng.normal(loc=(-2.0, 0.0), scale=0.8, size=(100, 2))
    x1 = rng.normal(loc=(2.0, 0.0), scale=0.8, size=(100, 2))
    x = np.vstack([x0, x1])
    y = np.array([0] * 100 + [1] * 100)
    assert _logistic_regression_accuracy(x, y) >= 0.95  # oracle: blobs are separable

    net = build_network(2, 2, [8], seed=3)
    adam = AdamState.for_model(net, learning_rate=1e-2)
    train(net, adam, list(zip(x, y)), epochs=50, batch_size=30, rng_seed=9)
    preds = np.argmax(forward_batch(net, x), axis=1)
    assert np.mean(preds == y) >= 0.95


def test_train_single_sample_matches_hand_adam_step():
    net = build_network(3, 2, [4], seed=11)
    reference = net.copy()
    grads = compute_gradients(reference, [(np.array([0.5, -1.0, 2.0]), 1)])

    adam = AdamState.for_model(net, learning_rate=1e-3)
    train(net, adam, [(np.array([0.5, -1.0, 2.0]), 1)], epochs=1, batch_size=1, rng_seed=0)

    # first Adam step reduces to w -= lr * g / (|g| + eps)
    for layer, ref, g in zip(net.layers, reference.layers, grads):
        for attr in ("weights", "bias"):
            expected = getattr(ref, attr) - 1e-3 * getattr(g, attr) / (
                np.abs(getattr(g, attr)) + 1e-8
            )
            assert np.max(np.abs(getattr(layer, attr) - expected)) <= 1e-9
    assert adam.step_count == 1


def _numeric_gradients(weights, batch, h=1e-5):
    """Central finite differences over every parameter."""
    grads = []
    for layer in weights.layers:
        gw = np.zeros_like(layer.weights)
        for idx in np.ndindex(layer.weights.shape):
            original = layer.weights[idx]
            layer.weights[idx] = original + h
            up = evaluate_loss(weights, batch)
            layer.weights[idx] = original - h
            down = evaluate_loss(weights, batch)
            layer.weights[idx] = original
            gw[idx] = (up - down) / (2 * h)
        gb = np.zeros_like(layer.bias)
        for idx in np.ndindex(layer.bias.shape):
            original = layer.bias[idx]
            layer.bias[idx] = original + h
            up = evaluate_loss(weights, batch)
            layer.bias[idx] = original - h
            down = evaluate_loss(weights, batch)
            layer.bias[idx] = original
            gb[idx] = (up - down) / (2 * h)
        grads.append(LayerParams(gw, gb))
    return grads


def _relu_margin(weights, batch):
    """Smallest |pre-activation| of any hidden unit; finite differences are
    unreliable within h of a relu kink."""
    x = np.stack([f for f, _ in batch])
    margin = np.inf
    a = x
    for layer in weights.layers[:-1]:
        z = a @ layer.weights.T + layer.bias
        margin = min(margin, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.0)
    return margin


def gradient_check_cases(count=20):
    cases = []
    seed = 0
    while len(cases) < count:
        rng = np.random.default_rng(seed)
        net = build_network(3, 3, [4], seed=seed)
        batch = [(rng.normal(size=3), int(rng.integers(3))) for _ in range(4)]
        if _relu_margin(net, batch) > 1e-3:
            cases.append((net, batch))
        seed += 1
    return cases


def test_gradients_match_finite_differences():
    worst = 0.0
    for net, batch in gradient_check_cases(20):
        analytic = compute_gradients(net, batch)
        numeric = _numeric_gradients(net, batch)
        for a, n in zip(analytic, numeric):
            for attr in ("weights", "bias"):
                ga, gn = getattr(a, attr), getattr(n, attr)
                rel = np.abs(ga - gn) / np.maximum(np.abs(ga) + np.abs(gn), 1e-3)
                worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_gradient_mean_invariance_under_duplication():
    net = build_network(4, 3, [5], seed=2)
    rng = np.random.default_rng(2)
    batch = [(rng.normal(size=4), int(rng.integers(3))) for _ in range(3)]
    g1 = compute_gradients(net, batch)
    g2 = compute_gradients(net, batch + batch)
    for a, b in zip(g1, g2):
        assert np.allclose(a.weights, b.weights, atol=1e-12)
        assert np.allclose(a.bias, b.bias, atol=1e-12)


def test_final_bias_gradient_is_softmax_minus_onehot():
    net = build_network(4, 3, [5], seed=8)
    x = np.array([0.3, -0.7, 1.1, 0.05])
    label = 2
    pred = forward(net, x)
    grads = compute_gradients(net, [(x, label)])
    expected = pred.probabilities.copy()
    expected[label] -= 1.0
    assert np.max(np.abs(grads[-1].bias - expected)) <= 1e-12


def test_train_deterministic_bit_identical():
    rng = np.random.default_rng(0)
    data = [(rng.normal(size=5), int(rng.integers(3))) for _ in range(40)]

    def run():
        net = build_network(5, 3, [8, 4], seed=21)
        adam = AdamState.for_model(net)
        train(net, adam, data, epochs=5, batch_size=8, rng_seed=77)
        return flat_params(net)

    assert np.array_equal(run(), run())


def test_train_parameters_stay_finite():
    rng = np.random.default_rng(1)
    data = [(rng.normal(size=4) * 50, int(rng.integers(2))) for _ in range(30)]
    net = build_network(4, 2, [6], seed=4)
    adam = AdamState.for_model(net, learning_rate=0.05)
    train(net, adam, data, epochs=20, batch_size=10, rng_seed=1)
    assert net.all_finite()


def test_train_label_out_of_range():
    net = build_network(3, 2, [4], seed=0)
    adam = AdamState.for_model(net)
    with pytest.raises(ConfigurationError):
        train(net, adam, [(np.ones(3), 2)], epochs=1, batch_size=1, rng_seed=0)


def test_forward_rejects_non_finite_features():
    net = build_network(3, 2, [4], seed=0)
    with pytest.raises(NumericError):
        forward(net, np.array([1.0, np.nan, 0.0]))


def test_weights_binary_roundtrip_exact(tmp_path):
    net = build_network(7, 3, [9, 5], seed=13)
    net.version = 4
    path = tmp_path / "model.npz"
    save_weights(net, path)
    loaded = load_weights(path)
    assert loaded.version == 4
    assert loaded.n_layers == net.n_layers
    for a, b in zip(net.layers, loaded.layers):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)


def test_weights_json_roundtrip(tmp_path):
    net = build_network(4, 2, [3], seed=5)
    path = tmp_path / "model.json"
    save_weights(net, path)
    loaded = load_weights(path)
    for a, b in zip(net.layers, loaded.layers):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)
