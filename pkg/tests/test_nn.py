import numpy as np
import pytest

from hsiband.nn import (
    AdamState,
    CnnClassifier,
    LstmClassifier,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    checkpoint_bytes,
    cnn_forward,
    conv2d_forward,
    grad,
    load_checkpoint,
    lstm_cell_forward,
    lstm_classify_forward,
    maxpool2,
    save_checkpoint,
    softmax_cross_entropy,
    train_classifier,
)
from hsiband.nn.layers import maxpool2_backward
from oracles import conv2d_naive, finite_difference_check, lstm_unroll_naive, maxpool_naive


def _zero_lstm(hidden=3, inputs=2):
    p = {f"W_{g}": np.zeros((hidden, hidden + inputs)) for g in "ifoc"}
    p.update({f"b_{g}": np.zeros(hidden) for g in "ifoc"})
    p["head_W"] = np.zeros((2, hidden))
    p["head_b"] = np.zeros(2)
    return p


def test_lstm_cell_all_zero():
    p = _zero_lstm()
    h, s = lstm_cell_forward(np.zeros(2), np.zeros(3), np.zeros(3), p)
    assert np.allclose(s, 0.25)
    assert np.allclose(h, 0.5 * np.tanh(0.25))
    # 0.5 * tanh(0.25) = 0.1224593; the rounded hand value 0.122467 is only good to ~1e-5
    assert h[0] == pytest.approx(0.122467, abs=1e-5)


def test_lstm_cell_saturated_forget_gate():
    p = _zero_lstm()
    p["b_f"][:] = 50.0
    p["b_c"][:] = 0.7
    s_prev = np.array([0.3, -0.2, 1.0])
    _, s = lstm_cell_forward(np.ones(2), np.zeros(3), s_prev, p)
    assert np.allclose(s, s_prev + 0.5 / (1 + np.exp(-0.7)), atol=1e-12)


def test_lstm_output_zero_state():
    p = _zero_lstm()
    p["b_i"][:] = -50.0  # shut the input gate so s stays 0
    h, _ = lstm_cell_forward(np.zeros(2), np.zeros(3), np.zeros(3), p)
    assert np.allclose(h, 0.0)


def test_lstm_zero_head_is_uniform():
    rng = np.random.default_rng(0)
    p = LstmClassifier(input_size=4, hidden_size=3).init_params(rng)
    p["head_W"][:] = 0
    assert np.allclose(lstm_classify_forward(rng.normal(size=(5, 4)), p), [0.5, 0.5])


@pytest.mark.parametrize("candidate", ["sigmoid", "tanh"])
def test_lstm_unroll_matches_scalar_oracle(candidate):
    rng = np.random.default_rng(1)
    for _ in range(100):
        hidden, inputs, steps = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 4)
        p = LstmClassifier(input_size=int(inputs), hidden_size=int(hidden), candidate=candidate).init_params(rng)
        for k in p:
            p[k] = p[k] + rng.normal(scale=0.3, size=p[k].shape)
        seq = rng.normal(size=(steps, inputs))
        assert np.allclose(lstm_classify_forward(seq, p, candidate), lstm_unroll_naive(seq, p, candidate), atol=1e-10)


def test_lstm_batch_logits_match_single_sequence():
    rng = np.random.default_rng(2)
    model = LstmClassifier(input_size=4, hidden_size=5)
    p = model.init_params(rng)
    x = rng.normal(size=(6, 3, 4))
    batch = model.predict_proba(p, x)
    for n in range(6):
        assert np.allclose(batch[n], lstm_classify_forward(x[n], p), atol=1e-12)


def test_conv_examples():
    x = np.random.default_rng(3).normal(size=(4, 5, 1))
    out = conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(out, np.maximum(x, 0))
    out = conv2d_forward(np.ones((3, 3, 1)), np.ones((2, 2, 1, 1)), np.zeros(1))
    assert out.shape == (2, 2, 1) and np.all(out == 4)


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(4)
    for _ in range(100):
        h, w = rng.integers(3, 8, size=2)
        c, c_out = rng.integers(1, 4, size=2)
        k = int(rng.integers(1, min(h, w) + 1))
        x = rng.normal(size=(h, w, c))
        kern = rng.normal(size=(k, k, c, c_out))
        b = rng.normal(size=c_out)
        assert np.allclose(conv2d_forward(x, kern, b), conv2d_naive(x, kern, b), atol=1e-10)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)), np.zeros(1))


def test_maxpool_examples_and_oracle():
    assert np.all(maxpool2(np.full((4, 6, 2), 3.0)) == 3.0)
    assert maxpool2(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None])[0, 0, 0] == 4.0
    rng = np.random.default_rng(5)
    for _ in range(100):
        x = rng.normal(size=(*rng.integers(2, 9, size=2), int(rng.integers(1, 4))))
        assert np.array_equal(maxpool2(x), maxpool_naive(x))


def test_maxpool_backward_routes_to_first_max():
    x = np.array([[[[1.0], [1.0]], [[0.0], [1.0]]]])
    dx = maxpool2_backward(x, np.ones((1, 1, 1, 1)))
    assert dx[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_cnn_zero_final_layer_is_uniform():
    rng = np.random.default_rng(6)
    model = CnnClassifier(image_size=16)
    p = model.init_params(rng)
    p["fc3_W"][:] = 0
    assert np.allclose(cnn_forward(rng.normal(size=(16, 16)), p), [0.5, 0.5])


def test_cross_entropy_confident_batch_has_tiny_gradient():
    loss, d = softmax_cross_entropy(np.array([[50.0, -50.0], [-50.0, 50.0]]), np.array([0, 1]))
    assert loss < 1e-20 and np.abs(d).max() < 1e-20


@pytest.mark.parametrize("candidate", ["sigmoid", "tanh"])
def test_lstm_gradient_check(candidate):
    rng = np.random.default_rng(7)
    model = LstmClassifier(input_size=3, hidden_size=4, candidate=candidate)
    p = _jitter_biases(model.init_params(rng), rng)
    x, y = rng.normal(size=(5, 4, 3)), rng.integers(0, 2, 5)
    assert finite_difference_check(model, p, x, y) < 1e-4
    assert finite_difference_check(model, p, x, y, weight_decay=0.1) < 1e-4


def test_cnn_gradient_check():
    rng = np.random.default_rng(8)
    model = CnnClassifier(image_size=12, kernel1=3, channels1=2, kernel2=3, channels2=3, fc1=6, fc2=5)
    p = _jitter_biases(model.init_params(rng), rng)
    x, y = rng.normal(size=(3, 12, 12)), np.array([0, 1, 1])
    assert finite_difference_check(model, p, x, y) < 1e-4


def test_grad_helper_matches_loss_and_grad():
    rng = np.random.default_rng(9)
    model = LstmClassifier(input_size=2, hidden_size=2)
    p = model.init_params(rng)
    x, y = rng.normal(size=(3, 2, 2)), np.array([0, 1, 0])
    g = grad(model, p, x, y)
    assert set(g) == set(p)


def test_adam_step_matches_hand_update():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.1])}
    new, state = adam_step(p, g, AdamState(), learning_rate=0.1)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) up to eps
    expected = p["w"] - 0.1 * g["w"] / (np.abs(g["w"]) + 1e-8)
    assert np.allclose(new["w"], expected, atol=1e-12)
    assert state.step == 1
    assert np.array_equal(p["w"], [1.0, -2.0])
    same, _ = adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert np.array_equal(same["w"], p["w"])


def _jitter_biases(params, rng):
    # zero biases can park a dead ReLU exactly on its kink, where central differences are meaningless
    for k in params:
        if k.startswith("b") or k.endswith("_b"):
            params[k] = params[k] + rng.normal(scale=0.1, size=params[k].shape)
    return params


def _blobs(rng, n=40):
    x = np.concatenate([rng.normal(-2, 0.5, (n, 2, 2)), rng.normal(2, 0.5, (n, 2, 2))])
    y = np.r_[np.zeros(n, int), np.ones(n, int)]
    return x, y


def test_training_separates_blobs_and_is_deterministic():
    rng = np.random.default_rng(10)
    x, y = _blobs(rng)
    model = LstmClassifier(input_size=2, hidden_size=4)
    cfg = TrainConfig(batch_size=16, learning_rate=1e-2, iterations=500, rng_seed=3)
    a = train_classifier(model, x, y, cfg)
    b = train_classifier(model, x, y, cfg)
    assert a.train_accuracy == 1.0
    assert a.curve == b.curve
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.curve.iterations[:2] == [5, 10] and a.curve.iterations[-1] == 500


def test_zero_learning_rate_keeps_initial_params():
    rng = np.random.default_rng(11)
    x, y = _blobs(rng, 8)
    model = LstmClassifier(input_size=2, hidden_size=2)
    cfg = TrainConfig(batch_size=len(x), learning_rate=0.0, iterations=20, rng_seed=1)
    res = train_classifier(model, x, y, cfg)
    init = model.init_params(np.random.default_rng(1))
    assert all(np.array_equal(res.params[k], init[k]) for k in init)


def test_divergence_is_reported():
    class Exploding(LstmClassifier):
        def loss_and_grad(self, params, x, y, weight_decay=0.0):
            loss, g = super().loss_and_grad(params, x, y, weight_decay)
            return float("nan"), g

    rng = np.random.default_rng(12)
    x, y = _blobs(rng, 4)
    with pytest.raises(TrainingDiverged) as info:
        train_classifier(Exploding(input_size=2, hidden_size=2), x, y, TrainConfig(batch_size=4, iterations=3))
    assert info.value.iteration == 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_checkpoint_round_trip(tmp_path):
    p = CnnClassifier(image_size=16).init_params(np.random.default_rng(13))
    save_checkpoint(tmp_path / "m.ckpt", p, {"kind": "cnn"})
    back, model = load_checkpoint(tmp_path / "m.ckpt")
    assert model == {"kind": "cnn"}
    assert all(np.array_equal(back[k], p[k]) for k in p)
    assert checkpoint_bytes(back, model) == checkpoint_bytes(p, model)
