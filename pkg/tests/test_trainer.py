import numpy as np
import pytest

from eldrop.data import Dataset, synth_gaussians
from eldrop.errors import DomainError, TrainingError
from eldrop.network import DenseLayer, Network, ones_mask
from eldrop.objective import loss_and_grad
from eldrop.trainer import TrainConfig, TrainLog, lr_at_epoch, max_norm_project, train


def test_lr_schedule():
    cfg = TrainConfig(eta0=0.1, rho=0.025)
    assert lr_at_epoch(cfg, 0) == 0.1
    assert lr_at_epoch(cfg, 40) == pytest.approx(0.05, abs=1e-15)
    flat = TrainConfig(eta0=0.3, rho=0.0)
    assert all(lr_at_epoch(flat, t) == 0.3 for t in range(0, 500, 37))
    with pytest.raises(DomainError):
        lr_at_epoch(cfg, -1)


def test_max_norm_project():
    w = np.array([[0.0, 7.0], [1.0, 1.0], [0.0, 0.0]])
    layer = DenseLayer(w, np.zeros(3), "relu", 0.5)
    out = max_norm_project(layer, 3.5)
    np.testing.assert_allclose(out.weights[0], [0.0, 3.5])
    np.testing.assert_array_equal(out.weights[1:], w[1:])
    small = DenseLayer(np.array([[1.0, 2.0]]), np.zeros(1), "relu", 0.5)
    assert max_norm_project(small, 3.5) is small
    with pytest.raises(DomainError):
        max_norm_project(small, 0.0)


def test_config_validation():
    for bad in ({"lam": -1}, {"eta0": 0}, {"momentum": 1.0}, {"momentum_kind": "adam"}, {"max_norm": 0}, {"batch_size": 0}):
        with pytest.raises(DomainError):
            TrainConfig(**bad)


def _logistic():
    return Network([DenseLayer(np.array([[0.5], [-0.5]]), np.zeros(2), "softmax", 1.0)])


def test_single_step_matches_hand_gradient():
    net = _logistic()
    ds = Dataset(np.array([[1.0]]), np.array([0]), 2)
    cfg = TrainConfig(momentum=0.0, max_norm=None, epochs=1, batch_size=1, eta0=0.1)
    out, _ = train(net, ds, None, cfg)
    p = np.exp([0.5, -0.5]) / np.exp([0.5, -0.5]).sum()
    g = p - np.array([1.0, 0.0])
    np.testing.assert_allclose(out.layers[0].weights[:, 0], [0.5, -0.5] - 0.1 * g, rtol=1e-14)
    np.testing.assert_allclose(out.layers[0].bias, -0.1 * g, rtol=1e-14)
    np.testing.assert_array_equal(net.layers[0].weights[:, 0], [0.5, -0.5])  # input untouched


@pytest.mark.parametrize("kind", ["standard", "nesterov"])
def test_momentum_updates(kind):
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([0, 1, 1])
    ds = Dataset(X, y, 2)
    net = Network([DenseLayer(np.array([[0.2, -0.1], [0.0, 0.3]]), np.zeros(2), "softmax", 1.0)])
    cfg = TrainConfig(momentum=0.9, momentum_kind=kind, max_norm=None, epochs=2, batch_size=3, eta0=0.5, rho=0.5, l2=0.01)
    out, _ = train(net, ds, None, cfg)

    theta = [net.layers[0].weights.copy(), net.layers[0].bias.copy()]
    vel = [np.zeros_like(t) for t in theta]
    gates = [np.ones((3, 2))]
    for t in range(2):
        lr = 0.5 / (1 + 0.5 * t)
        probe = [th + 0.9 * v for th, v in zip(theta, vel)] if kind == "nesterov" else theta
        _, g = loss_and_grad(Network([DenseLayer(probe[0], probe[1], "softmax", 1.0)]), X, y, gates, 0.0)
        grads = [g.weights[0] + 0.01 * probe[0], g.biases[0]]
        vel = [0.9 * v - lr * gr for v, gr in zip(vel, grads)]
        theta = [th + v for th, v in zip(theta, vel)]
    np.testing.assert_allclose(out.layers[0].weights, theta[0], rtol=1e-13)
    np.testing.assert_allclose(out.layers[0].bias, theta[1], rtol=1e-13)


def _small_problem(seed=0):
    full = synth_gaussians(3, 6, 60, 3.0, seed)
    net = Network.build([6, 12, 3], ["relu", "softmax"], [0.8, 0.5], seed=seed)
    return net, full.subset(np.arange(150)), full.subset(np.arange(150, 180))


def test_max_norm_after_every_update_and_lr_per_epoch():
    net, tr, va = _small_problem()
    cfg = TrainConfig(max_norm=0.8, epochs=4, batch_size=25, lam=1.0, eta0=0.5)
    worst = []
    out, log = train(net, tr, va, cfg, on_update=lambda n: worst.append(max(np.linalg.norm(l.weights, axis=1).max() for l in n.layers)))
    assert len(worst) == 4 * 6
    assert max(worst) <= 0.8 + 1e-12
    for rec in log.records:
        assert rec.lr == 0.5 / (1 + 0.025 * rec.epoch)
    assert [r.epoch for r in log.records] == [0, 1, 2, 3]


def test_training_is_bit_identical_per_seed(tmp_path):
    net, tr, va = _small_problem(1)
    cfg = TrainConfig(epochs=3, batch_size=20, lam=2.0, gap_every=1, gap_mc_samples=10, seed=4)
    a, la = train(net, tr, va, cfg)
    b, lb = train(net, tr, va, cfg)
    assert la == lb
    for x, y in zip(a.layers, b.layers):
        np.testing.assert_array_equal(x.weights, y.weights)
    c, lc = train(net, tr, va, TrainConfig(epochs=3, batch_size=20, lam=2.0, seed=5))
    assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)
    path = tmp_path / "log.csv"
    la.to_csv(path, comments="seed = 4\nlam = 2.0")
    text = path.read_text()
    assert text.startswith("# seed = 4\n# lam = 2.0\n")
    assert TrainLog.from_csv(path) == la


def test_loss_decreases_and_val_error_logged():
    net, tr, va = _small_problem(2)
    _, log = train(net, tr, va, TrainConfig(epochs=15, batch_size=30))
    assert log.records[-1].total < log.records[0].total
    assert all(r.val_error is not None and 0 <= r.val_error <= 100 for r in log.records)
    assert all(r.delta_hat is None for r in log.records)


def test_keep_best_returns_lowest_validation_error():
    net, tr, va = _small_problem(3)
    best, log = train(net, tr, va, TrainConfig(epochs=8, batch_size=30, keep_best=True))
    from eldrop.inference import error_rate
    assert error_rate(best, va) == min(r.val_error for r in log.records)


def test_divergence_reports_epoch_and_batch():
    net, tr, va = _small_problem(4)
    with np.errstate(all="ignore"), pytest.raises(TrainingError) as info:
        train(net, tr, va, TrainConfig(eta0=1e300, momentum=0.0, max_norm=None, epochs=3, batch_size=50))
    assert info.value.epoch is not None and info.value.batch is not None
    assert "epoch" in str(info.value)


def test_empty_or_mismatched_data():
    net, tr, _ = _small_problem()
    with pytest.raises(DomainError):
        train(net, tr.subset(np.arange(0)), None, TrainConfig(epochs=1))
    with pytest.raises(DomainError):
        train(Network.build([5, 3], ["softmax"], [1.0]), tr, None, TrainConfig(epochs=1))
