"""Local training for FedSGD: small built-in models, datasets and partitioners.

Models are flat parameter vectors plus an architecture descriptor.  Every
model exposes per-example gradients so that DP clipping can be applied to
each example before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ShapeError

LINREG = "linreg"
LOGREG = "logreg"
STRESS = "stress"


@dataclass(frozen=True)
class LocalDataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int = 0

    def __post_init__(self):
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ShapeError("X must be 2-D with one label per row")
        if len(self.y) < 1:
            raise ShapeError("a dataset needs at least one example")
        if not np.all(np.isfinite(self.X)):
            raise ShapeError("features must be finite")

    @property
    def size(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def to_bytes(self) -> bytes:
        """Canonical byte encoding used for certificates and commitments."""
        header = np.array([self.X.shape[0], self.X.shape[1], self.n_classes], dtype=">i8")
        return (
            header.tobytes()
            + np.ascontiguousarray(self.X, dtype=">f8").tobytes()
            + np.ascontiguousarray(self.y, dtype=">f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> LocalDataset:
        n, d, k = (int(v) for v in np.frombuffer(data[:24], dtype=">i8"))
        X = np.frombuffer(data[24:24 + 8 * n * d], dtype=">f8").astype(np.float64).reshape(n, d)
        y = np.frombuffer(data[24 + 8 * n * d:], dtype=">f8").astype(np.float64)
        return cls(X, y, k)

    def concat(self, other: LocalDataset) -> LocalDataset:
        return LocalDataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]), max(self.n_classes, other.n_classes))


@dataclass(frozen=True)
class ModelParams:
    arch: str
    values: np.ndarray = field(repr=False)
    n_features: int = 0
    n_classes: int = 0
    fit_intercept: bool = True

    @property
    def size(self) -> int:
        return len(self.values)

    def with_values(self, values) -> ModelParams:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError(f"expected {self.values.shape} parameters, got {values.shape}")
        return ModelParams(self.arch, values, self.n_features, self.n_classes, self.fit_intercept)


def param_count(arch: str, n_features: int, n_classes: int = 0, fit_intercept: bool = True) -> int:
    if arch == LINREG:
        return n_features + int(fit_intercept)
    if arch == LOGREG:
        return (n_features + int(fit_intercept)) * n_classes
    if arch == STRESS:
        return n_features
    raise ShapeError(f"unknown architecture {arch!r}")


def init_model(arch: str, n_features: int, n_classes: int = 0, fit_intercept: bool = True) -> ModelParams:
    P = param_count(arch, n_features, n_classes, fit_intercept)
    return ModelParams(arch, np.zeros(P), n_features, n_classes, fit_intercept)


def _design(model: ModelParams, data: LocalDataset) -> np.ndarray:
    if data.n_features != model.n_features:
        raise ShapeError(f"model expects {model.n_features} features, data has {data.n_features}")
    if model.fit_intercept:
        return np.hstack([data.X, np.ones((data.size, 1))])
    return data.X


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logits(model: ModelParams, A: np.ndarray) -> np.ndarray:
    W = model.values.reshape(A.shape[1], model.n_classes)
    return A @ W


def per_example_gradients(model: ModelParams, data: LocalDataset) -> np.ndarray:
    """One gradient row per example; the loss is the mean of per-example losses."""
    if model.arch == STRESS:
        raise ShapeError("the stress model has no data gradient")
    A = _design(model, data)
    if model.arch == LINREG:
        resid = A @ model.values - data.y
        return resid[:, None] * A
    probs = _softmax(_logits(model, A))
    probs[np.arange(data.size), data.y.astype(int)] -= 1.0
    # d loss_i / d W[j, k] = A[i, j] * (p_ik - 1{y_i = k})
    return (A[:, :, None] * probs[:, None, :]).reshape(data.size, -1)


def local_gradient(model: ModelParams, data: LocalDataset) -> np.ndarray:
    """Exact full-batch gradient of the mean task loss."""
    if model.arch == STRESS:
        raise ShapeError("the stress model has no data gradient")
    A = _design(model, data)
    if model.arch == LINREG:
        return A.T @ (A @ model.values - data.y) / data.size
    probs = _softmax(_logits(model, A))
    probs[np.arange(data.size), data.y.astype(int)] -= 1.0
    return (A.T @ probs).ravel() / data.size


def loss(model: ModelParams, data: LocalDataset) -> float:
    A = _design(model, data)
    if model.arch == LINREG:
        return float(0.5 * np.mean((A @ model.values - data.y) ** 2))
    z = _logits(model, A)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(data.size), data.y.astype(int)]))


def example_losses(model: ModelParams, data: LocalDataset) -> np.ndarray:
    A = _design(model, data)
    if model.arch == LINREG:
        return 0.5 * (A @ model.values - data.y) ** 2
    z = _logits(model, A)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(data.size), data.y.astype(int)]


def predict(model: ModelParams, X: np.ndarray) -> np.ndarray:
    data = LocalDataset(np.asarray(X, dtype=np.float64), np.zeros(len(X)), model.n_classes)
    A = _design(model, data)
    if model.arch == LINREG:
        return A @ model.values
    return np.argmax(_logits(model, A), axis=1)


def evaluate(model: ModelParams, data: LocalDataset) -> tuple[float, float]:
    """(mean loss, accuracy).

    For linear regression a prediction counts as correct when it lies within
    0.5 of the target, i.e. it rounds to the right integer label.
    """
    if model.arch == STRESS:
        return float("nan"), float("nan")
    pred = predict(model, data.X)
    if model.arch == LINREG:
        acc = float(np.mean(np.abs(pred - data.y) < 0.5))
    else:
        acc = float(np.mean(pred == data.y.astype(int)))
    return loss(model, data), acc


def apply_update(model: ModelParams, avg_gradient, lr: float) -> ModelParams:
    g = np.asarray(avg_gradient, dtype=np.float64)
    if g.shape != model.values.shape:
        raise ShapeError(f"update has shape {g.shape}, model has {model.values.shape}")
    return model.with_values(model.values - lr * g)


def stress_gradient(model: ModelParams, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    """Random gradient of the model's length, for sizing runs without training."""
    return rng.normal(0.0, scale, size=model.size)


# datasets -------------------------------------------------------------------

def gaussian_blobs(n_samples: int, n_features: int, n_classes: int, rng: np.random.Generator,
                   separation: float = 2.0, centers: np.ndarray | None = None) -> LocalDataset:
    """Isotropic unit-variance clusters whose centers are ``separation`` apart on average."""
    if centers is None:
        centers = rng.normal(0.0, separation / np.sqrt(2.0), size=(n_classes, n_features))
    y = rng.integers(0, n_classes, size=n_samples)
    X = centers[y] + rng.normal(size=(n_samples, n_features))
    return LocalDataset(X, y.astype(np.float64), n_classes)


def blob_centers(n_features: int, n_classes: int, rng: np.random.Generator, separation: float = 2.0) -> np.ndarray:
    return rng.normal(0.0, separation / np.sqrt(2.0), size=(n_classes, n_features))


def load_dataset_file(path) -> LocalDataset:
    """Read ``n_samples,n_features,n_classes`` then one ``f1,...,fd,label`` row per sample."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        n, d, k = (int(v) for v in header.replace(",", " ").split())
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape != (n, d + 1):
        raise ShapeError(f"{path}: header says {n}x{d + 1}, body is {rows.shape[0]}x{rows.shape[1]}")
    return LocalDataset(rows[:, :d], rows[:, d], k)


def save_dataset_file(data: LocalDataset, path) -> None:
    rows = np.hstack([data.X, data.y[:, None]])
    with Path(path).open("w") as fh:
        fh.write(f"{data.size},{data.n_features},{data.n_classes}\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.10g")


def digits() -> LocalDataset:
    """8x8 handwritten digits (1797 samples, 64 features scaled to [0, 1])."""
    ref = resources.files("anofel") / "data" / "digits.txt"
    with resources.as_file(ref) as path:
        data = load_dataset_file(path)
    return LocalDataset(data.X / 16.0, data.y, data.n_classes)


def standardize(train: LocalDataset, *others: LocalDataset) -> list[LocalDataset]:
    mu = train.X.mean(axis=0)
    sd = train.X.std(axis=0)
    sd[sd == 0] = 1.0
    return [LocalDataset((d.X - mu) / sd, d.y, d.n_classes) for d in (train, *others)]


def random_features(dim: int, n_features: int, rng: np.random.Generator):
    """A fixed cosine feature map appended to the raw features (widens linear models)."""
    W = rng.normal(0.0, 1.0 / np.sqrt(max(n_features, 1)), size=(n_features, dim))
    b = rng.uniform(0.0, 2 * np.pi, size=dim)

    def apply(data: LocalDataset) -> LocalDataset:
        extra = np.sqrt(2.0) * np.cos(data.X @ W + b)
        return LocalDataset(np.hstack([data.X, extra]), data.y, data.n_classes)

    return apply


def split(data: LocalDataset, test_fraction: float, rng: np.random.Generator) -> tuple[LocalDataset, LocalDataset]:
    n_test = int(round(data.size * test_fraction))
    order = rng.permutation(data.size)
    return _take(data, order[n_test:]), _take(data, order[:n_test])


def partition_iid(data: LocalDataset, n_clients: int, rng: np.random.Generator) -> list[LocalDataset]:
    """Shuffle and deal equal-sized shards; the remainder is dropped."""
    per = data.size // n_clients
    if per < 1:
        raise ShapeError("fewer examples than clients")
    order = rng.permutation(data.size)
    return [_take(data, order[i * per:(i + 1) * per]) for i in range(n_clients)]


def partition_label_shards(data: LocalDataset, n_clients: int, rng: np.random.Generator,
                           shards_per_client: int = 2) -> list[LocalDataset]:
    """Non-IID split: sort by label, cut into shards, give each client a few shards."""
    n_shards = n_clients * shards_per_client
    shard = data.size // n_shards
    if shard < 1:
        raise ShapeError("fewer examples than shards")
    order = np.argsort(data.y, kind="stable")[: n_shards * shard]
    shard_ids = rng.permutation(n_shards)
    out = []
    for c in range(n_clients):
        mine = shard_ids[c * shards_per_client:(c + 1) * shards_per_client]
        idx = np.concatenate([order[s * shard:(s + 1) * shard] for s in mine])
        out.append(_take(data, idx))
    return out


def _take(data: LocalDataset, idx) -> LocalDataset:
    return LocalDataset(data.X[idx], data.y[idx], data.n_classes)


# clear-text reference ----------------------------------------------------------

def fedsgd_round(model: ModelParams, datasets, lr: float, weighted: bool = False) -> tuple[ModelParams, np.ndarray]:
    """One plain FedSGD step: average the clients' full-batch gradients, then descend."""
    datasets = list(datasets)
    if not datasets:
        return model, np.zeros(model.size)
    grads = np.array([local_gradient(model, d) for d in datasets])
    if weighted:
        sizes = np.array([d.size for d in datasets], dtype=np.float64)
        avg = (sizes[:, None] * grads).sum(axis=0) / sizes.sum()
    else:
        avg = grads.mean(axis=0)
    return apply_update(model, avg, lr), avg


def fedsgd(model: ModelParams, datasets, rounds: int, lr: float, participation=None,
           weighted: bool = False) -> ModelParams:
    """Run ``rounds`` FedSGD steps; ``participation[r]`` lists client indices active in round r+1."""
    datasets = list(datasets)
    for r in range(rounds):
        active = range(len(datasets)) if participation is None else participation[r]
        model, _ = fedsgd_round(model, [datasets[i] for i in active], lr, weighted)
    return model
