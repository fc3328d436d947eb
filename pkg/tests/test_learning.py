import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leofl.data import Dataset, synth_dataset
from leofl.learning import (
    ParamVector,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    local_train,
    minibatches,
    model_loss,
    param_count,
    predict_proba,
    surrogate_gradient,
    train_centralized,
    zeros,
)


def loop_loss(theta, X, y, C):
    """Independent per-sample cross-entropy, written out with plain Python loops."""
    m = X.shape[1]
    W = theta[: m * C].reshape(m, C)
    b = theta[m * C:]
    total = 0.0
    for x, label in zip(X, y):
        z = [sum(x[j] * W[j, c] for j in range(m)) + b[c] for c in range(C)]
        zmax = max(z)
        lse = zmax + math.log(sum(math.exp(v - zmax) for v in z))
        total += lse - z[label]
    return total / len(y)


def fd_gradient(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def random_problem(rng, n=20, m=4, C=3):
    X = rng.normal(size=(n, m))
    y = rng.integers(0, C, size=n)
    return Dataset(X, y, C), rng.normal(size=param_count(m, C))


def test_mnist_parameter_count():
    assert param_count(784, 10) == 7850 and len(zeros(784, 10)) == 7850


def test_zero_model_loss_is_log_classes():
    data = synth_dataset(10, 3, 7, 0)
    assert model_loss(zeros(7, 10), data) == pytest.approx(math.log(10), abs=1e-12)


def test_confident_correct_model_has_vanishing_loss():
    data = Dataset(np.array([[1.0, 0.0]]), np.array([1]), 2)
    theta = np.zeros(param_count(2, 2))
    theta[1] = 1e3  # weight from feature 0 to class 1
    assert model_loss(theta, data) < 1e-12


def test_loss_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        data, theta = random_problem(rng, n=12)
        assert model_loss(theta, data) == pytest.approx(loop_loss(theta, data.features, data.labels, 3), abs=1e-12)


def test_loss_dimension_mismatch():
    with pytest.raises(ValueError):
        model_loss(np.zeros(5), synth_dataset(3, 2, 4, 0))


@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    data, theta = random_problem(rng, n=8)
    p = predict_proba(theta * 10, data.features, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_gradient_without_prox_is_data_gradient():
    rng = np.random.default_rng(1)
    data, theta = random_problem(rng)
    anchor = rng.normal(size=theta.size)
    g = surrogate_gradient(theta, anchor, data, 0.0)
    fd = fd_gradient(lambda t: model_loss(t, data), theta)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_prox_term_vanishes_at_anchor():
    rng = np.random.default_rng(2)
    data, theta = random_problem(rng)
    np.testing.assert_array_equal(
        surrogate_gradient(theta, theta, data, 3.0), surrogate_gradient(theta, theta, data, 0.0)
    )


@pytest.mark.parametrize("lam", [0.0, 0.5, 2.0])
def test_gradient_finite_differences(lam):
    rng = np.random.default_rng(3)
    data, theta = random_problem(rng, n=20)
    anchor = rng.normal(size=theta.size)

    def objective(t):
        return model_loss(t, data) + lam / 2 * np.sum((t - anchor) ** 2)

    g = surrogate_gradient(theta, anchor, data, lam)
    fd = fd_gradient(objective, theta)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0))
def test_prox_decomposition(seed, lam):
    rng = np.random.default_rng(seed)
    data, theta = random_problem(rng)
    anchor = rng.normal(size=theta.size)
    diff = surrogate_gradient(theta, anchor, data, lam) - surrogate_gradient(theta, anchor, data, 0.0)
    np.testing.assert_allclose(diff, lam * (theta - anchor), atol=1e-12)


def test_gradient_anchor_dimension_checked():
    rng = np.random.default_rng(0)
    data, theta = random_problem(rng)
    with pytest.raises(ValueError):
        surrogate_gradient(theta, np.zeros(3), data, 1.0)


def test_minibatches_cover_and_keep_short_batch():
    batches = minibatches(23, 10, np.random.default_rng(0))
    assert [len(b) for b in batches] == [10, 10, 3]
    assert sorted(np.concatenate(batches).tolist()) == list(range(23))


def test_zero_learning_rate_keeps_parameters():
    data = synth_dataset(3, 10, 4, 0)
    start = ParamVector(np.random.default_rng(0).normal(size=param_count(4, 3)), 0)
    out = local_train(start, 7, data, TrainConfig(0.0, 0.3, 5, 2, 0))
    np.testing.assert_array_equal(out.values, start.values)
    assert out.source_epoch == 7


def test_single_batch_single_step_is_gradient_step():
    rng = np.random.default_rng(4)
    data, theta = random_problem(rng, n=6)
    start = ParamVector(theta, 0)
    cfg = TrainConfig(0.05, 0.7, batch_size=6, local_epochs=1)
    out = local_train(start, 3, data, cfg)
    expected = theta - 0.05 * surrogate_gradient(theta, theta, data, 0.7)
    np.testing.assert_allclose(out.values, expected, atol=1e-14)


def test_one_epoch_is_ten_unrolled_steps():
    data = synth_dataset(5, 20, 6, 9)  # n = 100
    start = ParamVector(np.random.default_rng(1).normal(size=param_count(6, 5)) * 0.1, 0)
    cfg = TrainConfig(0.1, 0.2, 10, 1)
    out = local_train(start, 0, data, cfg, np.random.default_rng(77))

    rng = np.random.default_rng(77)
    order = rng.permutation(100)
    theta = start.values.copy()
    steps = 0
    for s in range(0, 100, 10):
        batch = data.subset(order[s:s + 10])
        theta = theta - 0.1 * surrogate_gradient(theta, start.values, batch, 0.2)
        steps += 1
    assert steps == 10
    np.testing.assert_allclose(out.values, theta, atol=1e-12)


def test_one_epoch_reduces_full_local_loss_in_most_trials():
    improved = 0
    for trial in range(100):
        data = synth_dataset(5, 20, 6, trial)
        start = zeros(6, 5)
        out = local_train(start, 0, data, TrainConfig(0.1, 0.0, 10, 1, trial))
        improved += model_loss(out, data) <= model_loss(start, data)
    assert improved >= 95


def test_local_train_is_deterministic():
    data = synth_dataset(5, 30, 6, 2)
    cfg = TrainConfig(0.1, 0.1, 7, 2, 11)
    a = local_train(zeros(6, 5), 1, data, cfg)
    b = local_train(zeros(6, 5), 1, data, cfg)
    assert a.values.tobytes() == b.values.tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    data = Dataset(np.full((4, 2), 1e200), np.array([0, 1, 0, 1]), 2)
    with pytest.raises(TrainingDivergedError):
        local_train(zeros(2, 2), 0, data, TrainConfig(1e200, 0.0, 2, 1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=float("nan"))
    with pytest.raises(ValueError):
        TrainConfig(prox_weight=-1.0)


def test_param_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        ParamVector(np.array([1.0, np.nan]))


def test_zero_model_on_balanced_set_scores_one_tenth():
    data = synth_dataset(10, 13, 5, 0)
    acc, loss = evaluate(zeros(5, 10), data)
    assert acc == pytest.approx(0.1) and loss == pytest.approx(math.log(10))


def test_argmax_ties_go_to_lowest_class():
    data = Dataset(np.eye(3), np.array([0, 0, 0]), 3)
    assert evaluate(np.zeros(param_count(3, 3)), data)[0] == 1.0


def test_separable_blobs_train_to_perfect_accuracy():
    data = synth_dataset(4, 50, 10, 0, separation=10.0)
    model = train_centralized(data, TrainConfig(0.1, 0.0, 10), epochs=5)
    assert evaluate(model, data)[0] == 1.0


def test_zero_model_on_mnist_test_predicts_class_zero(mnist):
    _, test = mnist
    acc, loss = evaluate(zeros(784, 10), test)
    assert acc == pytest.approx(980 / 10000)
    assert loss == pytest.approx(math.log(10))
