"""Desk-scale dataset: the 8x8 handwritten digits bundled with scikit-learn."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

DEFAULT_CACHE = Path("data") / "digits.npz"


@dataclass(frozen=True)
class Dataset:
    x_train: torch.Tensor
    y_train: torch.Tensor
    x_test: torch.Tensor
    y_test: torch.Tensor

    @property
    def n_train(self) -> int:
        return self.y_train.numel()


def fetch_digits(cache: Path | str = DEFAULT_CACHE) -> Path:
    """Materialize the dataset into ``cache`` (npz). No network access is needed."""
    from sklearn.datasets import load_digits

    cache = Path(cache)
    cache.parent.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    np.savez_compressed(cache, images=digits.images.astype(np.float32),
                        target=digits.target.astype(np.int64))
    return cache


def load_digits_split(cache: Path | str | None = None, test_fraction: float = 0.3,
                      split_seed: int = 0) -> Dataset:
    """Stratified split with pixels scaled to [0, 1], NCHW layout."""
    if cache is not None and Path(cache).exists():
        with np.load(cache) as f:
            images, target = f["images"], f["target"]
    else:
        from sklearn.datasets import load_digits

        d = load_digits()
        images, target = d.images.astype(np.float32), d.target.astype(np.int64)
    rng = np.random.default_rng(split_seed)
    train_idx, test_idx = [], []
    for cls in np.unique(target):
        idx = rng.permutation(np.flatnonzero(target == cls))
        n_test = int(round(test_fraction * idx.size))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    x = torch.from_numpy(images / 16.0).float().unsqueeze(1)
    y = torch.from_numpy(target)
    return Dataset(x[train_idx], y[train_idx], x[test_idx], y[test_idx])
