"""Small in-memory datasets for desk-scale runs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluators.base import DatasetInfo


@dataclass(frozen=True)
class InMemoryDataset:
    info: DatasetInfo
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def _split(x, y, seed: int, val_fraction: float, test_fraction: float):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_val = int(len(x) * val_fraction)
    n_test = int(len(x) * test_fraction)
    n_train = len(x) - n_val - n_test
    return (
        x[:n_train], y[:n_train],
        x[n_train : n_train + n_val], y[n_train : n_train + n_val],
        x[n_train + n_val :], y[n_train + n_val :],
    )


def load_digits_dataset(seed: int = 0, flat: bool = True, classes: tuple[int, ...] | None = None,
                        val_fraction: float = 0.2, test_fraction: float = 0.1) -> InMemoryDataset:
    """The 8x8 handwritten-digits set, scaled to [0, 1], split deterministically.

    ``flat`` yields 64-feature rows for MLPs; otherwise (1, 8, 8) images.
    ``classes`` optionally restricts to a label subset (relabelled 0..k-1).
    """
    from sklearn.datasets import load_digits

    data = load_digits()
    x = data.images.astype(np.float64) / 16.0
    y = data.target.astype(np.int64)
    if classes is not None:
        keep = np.isin(y, classes)
        x, y = x[keep], y[keep]
        remap = {c: i for i, c in enumerate(sorted(classes))}
        y = np.array([remap[int(c)] for c in y], dtype=np.int64)
        n_classes = len(classes)
    else:
        n_classes = 10
    if flat:
        x = x.reshape(len(x), -1)
        in_shape: tuple[int, ...] = (64,)
    else:
        x = x[:, None, :, :]
        in_shape = (1, 8, 8)
    xt, yt, xv, yv, xs, ys = _split(x, y, seed, val_fraction, test_fraction)
    info = DatasetInfo(name="digits", in_shape=in_shape, n_classes=n_classes,
                       n_train=len(xt), n_val=len(xv), n_test=len(xs))
    return InMemoryDataset(info, xt, yt, xv, yv, xs, ys)


def make_blobs_dataset(n_classes: int = 3, n_per_class: int = 200, n_features: int = 8,
                       separation: float = 6.0, seed: int = 0) -> InMemoryDataset:
    """Well-separated Gaussian blobs; a sanity floor for any trainer."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=separation, size=(n_classes, n_features))
    x = np.concatenate([centers[c] + rng.normal(size=(n_per_class, n_features)) for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class).astype(np.int64)
    xt, yt, xv, yv, xs, ys = _split(x, y, seed + 1, 0.2, 0.1)
    info = DatasetInfo(name="blobs", in_shape=(n_features,), n_classes=n_classes,
                       n_train=len(xt), n_val=len(xv), n_test=len(xs))
    return InMemoryDataset(info, xt, yt, xv, yv, xs, ys)


DATASETS = {
    "digits": lambda seed=0: load_digits_dataset(seed=seed),
    "blobs": lambda seed=0: make_blobs_dataset(seed=seed),
}
