"""In-memory datasets for the evaluator process."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Split:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def in_shape(self) -> tuple[int, ...]:
        return tuple(self.x_train.shape[1:])


def _split_arrays(x, y, seed, val_fraction=0.2, test_fraction=0.1) -> Split:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_val = int(len(x) * val_fraction)
    n_test = int(len(x) * test_fraction)
    n_train = len(x) - n_val - n_test
    return Split(
        x[:n_train], y[:n_train],
        x[n_train:n_train + n_val], y[n_train:n_train + n_val],
        x[n_train + n_val:], y[n_train + n_val:],
        n_classes=int(y.max()) + 1,
    )


def load_dataset(name: str, seed: int = 0, classes: tuple[int, ...] | None = None) -> Split:
    """``digits`` (8x8 images), ``blobs784`` (flat separable clusters), or a
    path to an .npz with arrays ``x`` and ``y``."""
    if name == "digits":
        from sklearn.datasets import load_digits

        data = load_digits()
        x = (data.images.astype(np.float32) / 16.0)[:, None, :, :]
        y = data.target.astype(np.int64)
    elif name == "blobs784":
        rng = np.random.default_rng(7)
        centers = rng.normal(scale=4.0, size=(10, 784)).astype(np.float32)
        x = np.concatenate([centers[c] + rng.normal(size=(120, 784)).astype(np.float32)
                            for c in range(10)])
        y = np.repeat(np.arange(10), 120).astype(np.int64)
    elif Path(name).suffix == ".npz":
        payload = np.load(name)
        x = payload["x"].astype(np.float32)
        y = payload["y"].astype(np.int64)
    else:
        raise ValueError(f"unknown dataset {name!r} (digits, blobs784, or a .npz path)")

    if classes is not None:
        keep = np.isin(y, classes)
        x, y = x[keep], y[keep]
        remap = {c: i for i, c in enumerate(sorted(classes))}
        y = np.array([remap[int(v)] for v in y], dtype=np.int64)
    return _split_arrays(x, y, seed)
