import numpy as np
import pytest

from gmrconv.net import (
    ArchitectureError,
    LayerSpec,
    Network,
    SyntheticDatasetSpec,
    TrainConfig,
    TrainingError,
    accuracy,
    build_twin_networks,
    conv_parameter_counts,
    evaluate,
    load_network,
    save_network,
    make_dataset,
    softmax_xent,
    train,
    twin_specs,
)
from gmrconv.tensor import flip, rel_error, rot90, rotate_bilinear

SMALL = SyntheticDatasetSpec(size=24, train_per_class=8, test_per_class=4)


@pytest.fixture(scope="module")
def twins():
    return build_twin_networks(4, seed=1)


def test_twin_topology(twins):
    gmr, dense = twins
    strip = lambda net: [s.kind.replace("gmr_conv", "conv").replace("dense_conv", "conv")
                         for s in net.specs]
    assert strip(gmr) == strip(dense)
    assert [s.k for s in gmr.specs if s.kind == "gmr_conv"] == [9, 9, 5]
    assert [s.k for s in dense.specs if s.kind == "dense_conv"] == [3, 3, 3]
    assert gmr.specs[-2].kind == "global_avg_pool"


@pytest.mark.parametrize("c", [16, 32])
def test_gmr_twin_has_fewer_parameters(c):
    gmr, dense = build_twin_networks(c)
    assert conv_parameter_counts(gmr) < conv_parameter_counts(dense)
    assert gmr.parameter_count() < dense.parameter_count()


def test_architecture_rules():
    good = twin_specs("gmr_conv", 4)
    with pytest.raises(ArchitectureError):
        Network.init([LayerSpec("gmr_conv", 1, 4, k=5, n=3, stride=2)] + good[1:])
    with pytest.raises(ArchitectureError):
        Network.init(good[:-1])
    with pytest.raises(ArchitectureError):
        Network.init([s for s in good if s.kind != "global_avg_pool"])
    with pytest.raises(ArchitectureError):
        Network.init([LayerSpec("maxpool")] + good)
    with pytest.raises(ArchitectureError):
        Network.init([LayerSpec("gmr_conv", 1, 4, k=5, n=3), LayerSpec("gmr_conv", 5, 4, k=5, n=3)]
                     + good[-2:])
    with pytest.raises(ArchitectureError):
        twin_specs("separable")


def test_finite_logits(twins):
    x = np.random.default_rng(0).normal(size=(3, 1, 24, 24))
    for net in twins:
        out = net.logits(x)
        assert out.shape == (3, 4) and np.all(np.isfinite(out))


def _perturbed(net, seed):
    rng = np.random.default_rng(seed)
    net = net.copy()
    for p in net.params:
        for key in p:
            p[key] = p[key] + rng.normal(0, 0.3, p[key].shape)
    return net


@pytest.mark.parametrize("seed", [None, 5, 6])
def test_gmr_logits_invariant_under_grid_symmetries(twins, seed):
    net = twins[0] if seed is None else _perturbed(twins[0], seed)
    x = np.random.default_rng(2).normal(size=(2, 1, 24, 24))
    ref = net.logits(x)
    for t in (lambda a: rot90(a, 1), lambda a: rot90(a, 2), lambda a: flip(a, -1), lambda a: flip(a, -2)):
        assert rel_error(net.logits(t(x)), ref) <= 1e-8


def test_dense_logits_not_invariant(twins):
    x = np.random.default_rng(3).normal(size=(2, 1, 24, 24))
    assert rel_error(twins[1].logits(rot90(x, 1)), twins[1].logits(x)) > 1e-4


def test_softmax_xent_gradient():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 4))
    y = np.array([0, 3, 1])
    loss, g = softmax_xent(z, y)
    h = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        assert (softmax_xent(zp, y)[0] - softmax_xent(zm, y)[0]) / (2 * h) == pytest.approx(g[idx], abs=1e-8)
    assert loss == pytest.approx(-np.mean(np.log(np.exp(z) / np.exp(z).sum(1, keepdims=True))[[0, 1, 2], y]))


@pytest.mark.parametrize("which", [0, 1])
def test_network_gradient_finite_difference(twins, which):
    net = _perturbed(twins[which], 7)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 1, 16, 16))
    y = np.array([1, 2])
    logits, caches = net.forward(x, keep=True)
    _, g = softmax_xent(logits, y)
    grads = net.backward(caches, g)
    h = 1e-5
    for li, p in enumerate(net.params):
        for key, arr in p.items():
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = softmax_xent(net.forward(x), y)[0]
            arr[idx] = old - h
            dn = softmax_xent(net.forward(x), y)[0]
            arr[idx] = old
            fd = (up - dn) / (2 * h)
            assert fd == pytest.approx(grads[li][key][idx], rel=1e-4, abs=1e-7), (li, key)


def test_dataset_deterministic_and_balanced():
    X, y = make_dataset(SMALL)
    X2, y2 = make_dataset(SMALL)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    assert X.shape == (32, 1, 24, 24)
    assert np.bincount(y).tolist() == [8, 8, 8, 8]
    Xt, _ = make_dataset(SMALL, "test")
    assert len(Xt) == 16 and not np.array_equal(Xt[:4], X[:4])


def test_zero_lr_leaves_parameters_unchanged(twins):
    X, y = make_dataset(SMALL)
    res = train(twins[0], X, y, TrainConfig(epochs=1, lr=0.0))
    for a, b in zip(res.net.params, twins[0].params):
        for key in a:
            assert np.array_equal(a[key], b[key])


def test_small_step_decreases_sample_loss(twins):
    X, y = make_dataset(SMALL)
    x1, y1 = X[:1], y[:1]
    for net in twins:
        before = softmax_xent(net.forward(x1), y1)[0]
        res = train(net, x1, y1, TrainConfig(epochs=1, lr=1e-3, momentum=0.0, batch_size=1))
        assert softmax_xent(res.net.forward(x1), y1)[0] < before


def test_training_is_deterministic(twins):
    X, y = make_dataset(SMALL)
    cfg = TrainConfig(epochs=2, lr=0.01, seed=3)
    a = train(twins[0], X, y, cfg)
    b = train(twins[0], X, y, cfg)
    assert a.step_losses == b.step_losses
    for pa, pb in zip(a.net.params, b.net.params):
        for key in pa:
            assert np.array_equal(pa[key], pb[key])


def test_sigma_clipped_during_training(twins):
    X, y = make_dataset(SMALL)
    res = train(twins[0], X, y, TrainConfig(epochs=1, lr=0.05, sigma_lr_scale=1e4))
    for s, p in zip(res.net.specs, res.net.params):
        if s.kind == "gmr_conv":
            sig = np.exp(p["log_sigma"])
            assert np.all(sig >= 1e-2 * (1 - 1e-12)) and np.all(sig <= 2 * s.n * (1 + 1e-12))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported(twins):
    X, y = make_dataset(SMALL)
    with pytest.raises(TrainingError) as info:
        train(twins[1], X, y, TrainConfig(epochs=5, lr=1e150))
    assert info.value.step >= 1
    assert "step" in str(info.value)


def test_untrained_accuracy_near_chance(twins):
    X, y = make_dataset(SyntheticDatasetSpec(size=24, test_per_class=50), "test")
    for net in twins:
        assert abs(accuracy(net, X, y) - 0.25) <= 0.1


def test_evaluate_uses_rotated_copies(twins):
    X, y = make_dataset(SMALL, "test")
    res = evaluate(twins[0], X, y, [0, 90, 33])
    assert set(res) == {0.0, 90.0, 33.0}
    assert res[0.0] == res[90.0]  # exact invariance at grid angles
    pred = twins[0].logits(rotate_bilinear(X, 33)).argmax(1)
    assert res[33.0] == float((pred == y).mean())


def test_network_round_trip(tmp_path, twins):
    for net in twins:
        path = tmp_path / "net.bin"
        save_network(path, net)
        back = load_network(path)
        assert back.specs == net.specs
        for a, b in zip(back.params, net.params):
            assert a.keys() == b.keys()
            for key in a:
                assert a[key].tobytes() == b[key].tobytes()
