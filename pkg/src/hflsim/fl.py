"""HFL training core: learners, local gradient descent, edge and cloud
aggregation, synthetic non-IID data and the IDX reader.

Model parameters are flat float64 vectors; each learner knows how to
unflatten its own.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cost import AssignmentPattern
from .errors import ConfigurationError, ContractViolation, NumericalError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


# -- learners -----------------------------------------------------------------


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    prob = ez / ez.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.mean(np.log(prob[np.arange(n), y] + 1e-300))
    dlogits = prob
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


class MLPClassifier:
    """One-hidden-layer tanh network with a softmax cross-entropy loss.

    ``n_hidden = 0`` gives plain softmax regression.  ``features`` selects a
    subset of input columns (the reduced-input mini model).
    """

    def __init__(self, n_in: int, n_hidden: int, n_classes: int, features: Sequence[int] | None = None):
        self.features = None if features is None else np.asarray(features, dtype=int)
        self.n_in = n_in if features is None else len(self.features)
        self.n_hidden = n_hidden
        self.n_classes = n_classes
        if n_hidden:
            self.shapes = [(self.n_in, n_hidden), (n_hidden,), (n_hidden, n_classes), (n_classes,)]
        else:
            self.shapes = [(self.n_in, n_classes), (n_classes,)]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.n_params = sum(self.sizes)

    def describe(self) -> dict:
        return {"kind": "mlp", "n_in": self.n_in, "n_hidden": self.n_hidden, "n_classes": self.n_classes}

    def unflatten(self, w):
        out, k = [], 0
        for s, size in zip(self.shapes, self.sizes):
            out.append(w[k:k + size].reshape(s))
            k += size
        return out

    def init(self, rng: np.random.Generator) -> np.ndarray:
        # He-style scaling
        parts = []
        for s in self.shapes:
            if len(s) == 2:
                parts.append(rng.normal(0.0, np.sqrt(2.0 / s[0]), size=s).ravel())
            else:
                parts.append(np.zeros(s))
        return np.concatenate(parts)

    def _inputs(self, X):
        return X if self.features is None else X[:, self.features]

    def logits(self, w, X):
        X = self._inputs(X)
        if self.n_hidden:
            W1, b1, W2, b2 = self.unflatten(w)
            return np.tanh(X @ W1 + b1) @ W2 + b2
        W, b = self.unflatten(w)
        return X @ W + b

    def loss_and_grad(self, w, X, y):
        X = self._inputs(X)
        if self.n_hidden:
            W1, b1, W2, b2 = self.unflatten(w)
            hid = np.tanh(X @ W1 + b1)
            loss, dl = _softmax_xent(hid @ W2 + b2, y)
            dW2 = hid.T @ dl
            db2 = dl.sum(axis=0)
            dh = (dl @ W2.T) * (1.0 - hid * hid)
            dW1 = X.T @ dh
            db1 = dh.sum(axis=0)
            return loss, np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])
        W, b = self.unflatten(w)
        loss, dl = _softmax_xent(X @ W + b, y)
        return loss, np.concatenate([(X.T @ dl).ravel(), dl.sum(axis=0)])

    def predict(self, w, X):
        return np.argmax(self.logits(w, X), axis=1)


class LinearRegression:
    """Least squares ``0.5 * mean((X w + b - y)^2)``; a convex reference learner."""

    def __init__(self, n_in: int):
        self.n_in = n_in
        self.n_params = n_in + 1

    def init(self, rng):
        return np.zeros(self.n_params)

    def loss_and_grad(self, w, X, y):
        r = X @ w[:-1] + w[-1] - y
        n = len(y)
        return 0.5 * np.mean(r * r), np.concatenate([X.T @ r / n, [r.mean()]])

    def predict(self, w, X):
        return X @ w[:-1] + w[-1]


# -- training and aggregation -------------------------------------------------


def local_train(params: np.ndarray, dataset: Dataset, L: int, beta: float, learner) -> np.ndarray:
    """``L`` full-batch gradient steps from ``params``."""
    if L < 1:
        raise ContractViolation("local iterations L must be >= 1")
    w = params.copy()
    for step in range(L):
        _, g = learner.loss_and_grad(w, dataset.X, dataset.y)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at local step {step} (|w|={np.linalg.norm(w):.3g})")
        w -= beta * g
    return w


def _weighted_average(items: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    if not items:
        raise ContractViolation("cannot aggregate an empty set of models")
    shape = items[0][0].shape
    total = 0.0
    acc = np.zeros(shape)
    for w, d in items:
        if w.shape != shape:
            raise ContractViolation(f"shape mismatch in aggregation: {w.shape} vs {shape}")
        acc += d * w
        total += d
    if total <= 0:
        raise ContractViolation("aggregation weights must sum to a positive value")
    if len(items) == 1:
        return items[0][0].copy()  # exact identity, no rounding
    return acc / total


def edge_aggregate(locals_: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Data-size weighted mean of local models."""
    return _weighted_average(locals_)


def cloud_aggregate(edges: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """Data-size weighted mean of edge models (weights are edge data totals)."""
    return _weighted_average(edges)


@dataclass
class DataPartition:
    datasets: list[Dataset]
    n_classes: int
    rho: float
    majority: np.ndarray  # ground-truth majority label per device
    indices: list[np.ndarray] = field(default_factory=list)

    def sizes(self) -> np.ndarray:
        return np.array([len(d) for d in self.datasets])


def run_global_iteration(
    global_params: np.ndarray,
    pattern: AssignmentPattern,
    partition: DataPartition,
    L: int,
    Q: int,
    beta: float,
    learner,
) -> np.ndarray:
    """One cloud round: Q edge iterations of local training + edge averaging,
    then cloud averaging.  Reductions run in ascending id order."""
    edges = [(m, sorted(g)) for m, g in sorted(pattern.groups.items()) if g]
    if not edges:
        raise ContractViolation("no scheduled devices")
    sizes = {n: float(len(partition.datasets[n])) for _, g in edges for n in g}
    edge_models = {m: global_params for m, _ in edges}
    for _q in range(Q):
        for m, members in edges:
            local = [(local_train(edge_models[m], partition.datasets[n], L, beta, learner), sizes[n]) for n in members]
            edge_models[m] = edge_aggregate(local)
    return cloud_aggregate([(edge_models[m], sum(sizes[n] for n in g)) for m, g in edges])


def evaluate(params: np.ndarray, test_set: Dataset, learner) -> float:
    if len(test_set) == 0:
        raise ContractViolation("empty test set")
    return float(np.mean(learner.predict(params, test_set.X) == test_set.y))


# -- data ---------------------------------------------------------------------


def make_gaussian_mixture(
    n_per_class: int,
    n_classes: int,
    dim: int,
    seed: int,
    separation: float = 1.0,
    noise: float = 1.0,
    means: np.ndarray | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Balanced Gaussian class clusters; returns the data and the class means."""
    rng = np.random.default_rng(seed)
    if means is None:
        means = rng.normal(0.0, separation, size=(n_classes, dim))
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = means[y] + rng.normal(0.0, noise, size=(len(y), dim))
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm]), means


def partition_non_iid(
    dataset: Dataset,
    n_devices: int,
    n_classes: int,
    rho: float,
    sizes: Sequence[int] | tuple[int, int],
    seed: int,
) -> DataPartition:
    """Skewed split: device ``d`` draws ``round(rho * D_d)`` samples of class
    ``d mod K`` and the rest uniformly from the other classes, without
    replacement across devices.

    ``sizes`` is either one size per device or a ``(min, max)`` range.
    """
    if not (1.0 / n_classes < rho <= 1.0):
        raise ConfigurationError(f"majority fraction must lie in (1/K, 1], got {rho}")
    rng = np.random.default_rng(seed)
    if len(sizes) == 2 and n_devices != 2 and not isinstance(sizes, np.ndarray):
        lo, hi = sizes
        if lo > hi or lo < 1:
            raise ConfigurationError(f"invalid size range {sizes}")
        sizes = rng.integers(lo, hi + 1, size=n_devices)
    sizes = np.asarray(sizes, dtype=int)
    if len(sizes) != n_devices:
        raise ConfigurationError("need one dataset size per device")

    pools = [list(rng.permutation(np.flatnonzero(dataset.y == k))) for k in range(n_classes)]
    majority = np.arange(n_devices) % n_classes
    datasets, all_idx = [], []
    for d in range(n_devices):
        n_major = int(round(rho * sizes[d]))
        others = [k for k in range(n_classes) if k != majority[d]]
        minor_labels = rng.choice(others, size=sizes[d] - n_major) if others else np.array([], dtype=int)
        counts = np.bincount(minor_labels, minlength=n_classes)
        counts[majority[d]] += n_major
        idx = []
        for k in range(n_classes):
            if counts[k] > len(pools[k]):
                raise ConfigurationError(f"class {k} has too few samples for device {d}")
            idx.extend(pools[k][:counts[k]])
            del pools[k][:counts[k]]
        idx = np.array(sorted(idx), dtype=int)
        all_idx.append(idx)
        datasets.append(dataset.take(idx))
    return DataPartition(datasets, n_classes, rho, majority, all_idx)


IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped): images 0x00000803, labels 0x00000801."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in IDX_DTYPES:
        raise ConfigurationError(f"{path}: not an IDX file (magic {raw[:4].hex()})")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=IDX_DTYPES[dtype_code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ConfigurationError(f"{path}: expected {np.prod(dims)} values, found {data.size}")
    return data.reshape(dims)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    X = read_idx(images_path).astype(float)
    X = X.reshape(len(X), -1) / 255.0
    y = read_idx(labels_path).astype(int)
    return Dataset(X, y)


def flat_hfl(global_params, members: Mapping[int, Dataset], L, Q, beta, learner):
    """Single-server federated averaging over ``members`` for Q*L steps
    (Q rounds of L local steps).  Used as a cross-check for M = 1."""
    w = global_params
    for _ in range(Q):
        w = _weighted_average([(local_train(w, members[n], L, beta, learner), float(len(members[n]))) for n in sorted(members)])
    return w
