import math

import numpy as np
import pytest

from eldrop.data import Dataset
from eldrop.errors import DomainError
from eldrop.inference import InferenceConfig, error_rate, gap_statistics, measure_gap, predict, predict_batch
from eldrop.network import DenseLayer, Network, enumerate_expectation, forward_deterministic
from eldrop.theory import network_gap

from conftest import make_net

MC = InferenceConfig("monte_carlo", 200, 3)


def test_keep_one_modes_agree():
    net = make_net(0, keep=[1.0, 1.0])
    x = [0.1, 0.5, -0.3]
    np.testing.assert_allclose(predict(net, x), predict(net, x, MC), rtol=1e-14)


def test_standard_mode_is_pure():
    net = make_net(1)
    a = predict(net, [0.1, 0.2, 0.3])
    b = predict(net, [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, forward_deterministic(net, [0.1, 0.2, 0.3]).output)


def test_outputs_are_distributions():
    net = make_net(2, scale=3.0)
    X = np.random.default_rng(2).normal(size=(10, 3))
    for cfg in (InferenceConfig(), MC):
        assert np.all(np.abs(predict_batch(net, X, cfg).sum(axis=1) - 1.0) <= 1e-10)


def test_batch_and_single_agree():
    net = make_net(3)
    X = np.random.default_rng(3).normal(size=(4, 3))
    batch = predict_batch(net, X, MC)
    for i, x in enumerate(X):
        np.testing.assert_array_equal(batch[i], predict(net, x, MC, index=i))


def test_mc_prediction_matches_enumeration():
    net = make_net(4, sizes=(3, 4, 3), acts=("tanh", "softmax"), scale=2.0)
    x = np.array([0.2, -0.4, 0.9])
    m = 1_000_000
    got = predict(net, x, InferenceConfig("monte_carlo", m, 0))
    # bound per-coordinate standard error by the exact variance
    from eldrop.network import enumerate_moments
    _, var = enumerate_moments(net, x)
    se = np.sqrt(var[-1] / m)
    assert np.all(np.abs(got - enumerate_expectation(net, x)) <= 4 * se)


def test_mc_prediction_unbiased_over_seeds():
    net = make_net(5, sizes=(3, 3, 2), acts=("sigmoid", "softmax"), scale=3.0)
    x = np.array([0.5, 0.5, -0.5])
    means = np.array([predict(net, x, InferenceConfig("monte_carlo", 50, s)) for s in range(400)])
    se = means.std(axis=0, ddof=1) / math.sqrt(len(means))
    assert np.all(np.abs(means.mean(axis=0) - enumerate_expectation(net, x)) <= 4 * se)


def test_error_rate_examples():
    # the network predicts the class of the larger coordinate
    net = Network([DenseLayer(np.eye(2) * 5, np.zeros(2), "softmax", 1.0)])
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.2, 0.9]])
    assert error_rate(net, Dataset(X, [0, 1, 1], 2)) == 0.0
    assert error_rate(net, Dataset(X, [1, 1, 1], 2)) == pytest.approx(100 / 3)
    with pytest.raises(DomainError):
        error_rate(net, Dataset(np.zeros((0, 2)), [], 2))


def test_uniform_net_on_random_two_class_labels():
    net = Network([DenseLayer(np.zeros((2, 3)), np.zeros(2), "softmax", 0.5)])
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(1000, 3)), rng.integers(0, 2, 1000), 2)
    err = error_rate(net, ds)
    assert abs(err - 50.0) <= 3 * 100 * math.sqrt(0.25 / 1000)


def test_gap_affine_and_deterministic():
    affine = make_net(6, sizes=(3, 4, 2), acts=("identity", "identity"), scale=2.0)
    X = np.random.default_rng(6).normal(size=(5, 3))
    est = gap_statistics(affine, X, 400, 0)
    assert est.value <= 3 * est.noise_scale * 1.5
    net = make_net(7)
    assert measure_gap(net, X, 50, 9) == measure_gap(net, X, 50, 9)


def test_gap_converges_to_enumeration():
    net = make_net(8, sizes=(3, 4, 3), acts=("sigmoid", "softmax"), scale=3.0)
    X = np.random.default_rng(8).uniform(size=(4, 3))
    exact, _ = network_gap(net, X, exact=True)
    est = gap_statistics(net, X, 100_000, 1)
    assert abs(est.value - exact) <= 4 * est.stderr


def test_config_validation():
    with pytest.raises(DomainError):
        InferenceConfig("bayes")
    with pytest.raises(DomainError):
        InferenceConfig("monte_carlo", 0)
