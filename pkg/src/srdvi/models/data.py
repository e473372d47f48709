"""Dataset loaders and seeded synthetic-data generators."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class LabeledData:
    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) in {-1, +1}
    feature_names: list[str]

    def subset(self, idx) -> "LabeledData":
        idx = np.asarray(idx)
        return LabeledData(self.X[idx], self.y[idx], self.feature_names)


def load_labeled_csv(path: str | Path, label_column: str = "label") -> LabeledData:
    """Numeric feature columns plus a label column coded -1/+1 (or 0/1)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
    names = list(raw.dtype.names)
    if label_column not in names:
        raise ValueError(f"{path}: no column named {label_column!r}")
    feats = [c for c in names if c != label_column]
    X = np.column_stack([raw[c] for c in feats]).astype(float)
    y = np.asarray(raw[label_column], dtype=float)
    if set(np.unique(y)) <= {0.0, 1.0}:
        y = 2 * y - 1
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError(f"{path}: labels must be -1/+1 or 0/1")
    return LabeledData(X, y, feats)


def load_index_file(path: str | Path) -> np.ndarray:
    """Row numbers, one per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"index file not found: {path}")
    return np.loadtxt(path, dtype=int, ndmin=1)


def _bundled(name: str) -> Path:
    return Path(str(resources.files("srdvi") / "data" / name))


def load_ionosphere(intercept: bool = False) -> tuple[LabeledData, LabeledData]:
    """Bundled ionosphere data with the fixed 200/151 train/test split.

    The second attribute is identically zero and is dropped.
    """
    data = load_labeled_csv(_bundled("ionosphere.csv"))
    keep = [i for i, n in enumerate(data.feature_names) if n != "a2"]
    X = data.X[:, keep]
    names = [data.feature_names[i] for i in keep]
    if intercept:
        X = np.column_stack([np.ones(len(X)), X])
        names = ["intercept"] + names
    data = LabeledData(X, data.y, names)
    train = load_index_file(_bundled("ionosphere_train.idx"))
    test = np.setdiff1d(np.arange(len(X)), train)
    return data.subset(train), data.subset(test)


def normal_sample(n: int, rng: np.random.Generator, lo: float = -np.inf, hi: float = np.inf) -> np.ndarray:
    """N(0, 1) draws restricted to [lo, hi] by rejection."""
    out = np.empty(0)
    while out.size < n:
        z = rng.standard_normal(2 * (n - out.size) + 8)
        out = np.concatenate([out, z[(z >= lo) & (z <= hi)]])
    return out[:n]


def bimodal_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """Equal mixture of N(-1.5, 0.25) and N(1.5, 1) (variances)."""
    comp = rng.random(n) < 0.5
    return np.where(comp, rng.normal(-1.5, 0.5, n), rng.normal(1.5, 1.0, n))


def bimodal_pdf(x: np.ndarray) -> np.ndarray:
    from scipy.stats import norm

    return 0.5 * norm.pdf(x, -1.5, 0.5) + 0.5 * norm.pdf(x, 1.5, 1.0)


def separable_toy(rng: np.random.Generator, n: int = 20) -> LabeledData:
    """Two well-separated Gaussian clouds in the plane."""
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(0.0, 0.3, size=(n, 2)) + np.outer(y, [1.5, 1.5])
    return LabeledData(X, y, ["x1", "x2"])
