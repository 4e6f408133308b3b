import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anofel import trainer
from anofel.errors import ShapeError
from anofel.trainer import LINREG, LOGREG, LocalDataset


def test_linreg_gradient_by_hand():
    data = LocalDataset(np.array([[1.0], [2.0]]), np.array([1.0, 3.0]))
    model = trainer.init_model(LINREG, 1).with_values([0.5, 0.0])
    # residuals -0.5, -2.0 ; grad_w = mean(r*x) = -2.25, grad_b = mean(r) = -1.25
    assert np.allclose(trainer.local_gradient(model, data), [-2.25, -1.25])


def _fd(model, data, eps=1e-6):
    g = np.zeros(model.size)
    for i in range(model.size):
        e = np.zeros(model.size)
        e[i] = eps
        g[i] = (trainer.loss(model.with_values(model.values + e), data)
                - trainer.loss(model.with_values(model.values - e), data)) / (2 * eps)
    return g


@pytest.mark.parametrize("arch,k", [(LINREG, 0), (LOGREG, 3)])
def test_gradient_matches_finite_differences(arch, k):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    y = rng.integers(0, 3, 30).astype(float) if k else rng.normal(size=30)
    data = LocalDataset(X, y, k)
    model = trainer.init_model(arch, 4, k)
    model = model.with_values(rng.normal(scale=0.3, size=model.size))
    assert np.allclose(trainer.local_gradient(model, data), _fd(model, data), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000))
def test_per_example_mean_equals_full_batch(n, seed):
    rng = np.random.default_rng(seed)
    data = LocalDataset(rng.normal(size=(n, 3)), rng.integers(0, 2, n).astype(float), 2)
    model = trainer.init_model(LOGREG, 3, 2)
    model = model.with_values(rng.normal(size=model.size))
    assert np.allclose(trainer.per_example_gradients(model, data).mean(axis=0),
                       trainer.local_gradient(model, data), atol=1e-10)


def test_evaluate_fixture():
    data = LocalDataset(np.array([[1.0], [-1.0], [2.0], [-3.0]]), np.array([1.0, 0.0, 0.0, 0.0]), 2)
    model = trainer.init_model(LOGREG, 1, 2, fit_intercept=False).with_values([-1.0, 1.0])
    _, acc = trainer.evaluate(model, data)
    assert acc == pytest.approx(0.75)


def test_federated_equals_centralized_for_equal_shards():
    rng = np.random.default_rng(5)
    data = trainer.gaussian_blobs(400, 5, 3, rng)
    shards = trainer.partition_iid(data, 4, rng)
    pooled = shards[0]
    for s in shards[1:]:
        pooled = pooled.concat(s)
    model = trainer.init_model(LOGREG, 5, 3)
    fed = trainer.fedsgd(model, shards, 5, 0.5)
    central = trainer.fedsgd(model, [pooled], 5, 0.5)
    assert np.allclose(fed.values, central.values, atol=1e-12)


def test_weighted_average_matches_pooled_for_unequal_shards():
    rng = np.random.default_rng(6)
    a = trainer.gaussian_blobs(30, 3, 2, rng)
    b = trainer.gaussian_blobs(90, 3, 2, rng)
    model = trainer.init_model(LOGREG, 3, 2)
    _, avg = trainer.fedsgd_round(model, [a, b], 1.0, weighted=True)
    assert np.allclose(avg, trainer.local_gradient(model, a.concat(b)))


def test_training_learns_blobs():
    rng = np.random.default_rng(7)
    centers = trainer.blob_centers(4, 2, rng, 4.0)
    tr = trainer.gaussian_blobs(400, 4, 2, rng, centers=centers)
    te = trainer.gaussian_blobs(200, 4, 2, rng, centers=centers)
    model = trainer.fedsgd(trainer.init_model(LOGREG, 4, 2), trainer.partition_iid(tr, 4, rng), 50, 1.0)
    assert trainer.evaluate(model, te)[1] > 0.9


def test_partitions_deterministic_and_disjoint():
    data = trainer.digits()
    a = trainer.partition_iid(data, 16, np.random.default_rng(1))
    b = trainer.partition_iid(data, 16, np.random.default_rng(1))
    assert all(np.array_equal(x.X, y.X) for x, y in zip(a, b))
    shards = trainer.partition_label_shards(data, 16, np.random.default_rng(1), 2)
    # a shard may straddle one label boundary
    assert all(len(np.unique(s.y)) <= 4 for s in shards)
    assert np.mean([len(np.unique(s.y)) for s in shards]) < 4
    assert sum(s.size for s in a) == 16 * (1797 // 16)


def test_digits_shape():
    d = trainer.digits()
    assert (d.size, d.n_features, d.n_classes) == (1797, 64, 10)
    assert d.X.min() >= 0 and d.X.max() <= 1


def test_dataset_bytes_roundtrip():
    d = trainer.gaussian_blobs(10, 3, 2, np.random.default_rng(0))
    back = LocalDataset.from_bytes(d.to_bytes())
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)


def test_dataset_file_roundtrip(tmp_path):
    d = trainer.gaussian_blobs(10, 3, 2, np.random.default_rng(0))
    trainer.save_dataset_file(d, tmp_path / "d.txt")
    back = trainer.load_dataset_file(tmp_path / "d.txt")
    assert np.allclose(back.X, d.X) and np.array_equal(back.y, d.y)


def test_shape_errors():
    with pytest.raises(ShapeError):
        LocalDataset(np.zeros((2, 2)), np.zeros(3))
    model = trainer.init_model(LOGREG, 3, 2)
    with pytest.raises(ShapeError):
        trainer.local_gradient(model, LocalDataset(np.zeros((2, 4)), np.zeros(2), 2))


def test_random_features_width():
    d = trainer.digits()
    f = trainer.random_features(135, 64, np.random.default_rng(0))
    assert f(d).n_features == 199
    assert trainer.param_count(LOGREG, 199, 10) == 2000
