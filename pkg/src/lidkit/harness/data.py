"""Synthetic labeled datasets in the unit box, plus CSV persistence.

Generators are deterministic under their seed and always return features
inside [0,1]^d with rows in shuffled order, so leading/trailing slices make
valid splits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import ParseError, ShapeError

GENERATOR_NAMES = ("two_moons", "gaussian_blobs", "uniform_manifold")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        if f.ndim != 2 or y.shape != (f.shape[0],):
            raise ShapeError("features and labels do not align")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        f.setflags(write=False)
        y.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


def _random_rotation(dim: int, rng) -> np.ndarray:
    """Haar-ish orthogonal matrix via QR with a sign-fixed diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _embed(points: np.ndarray, ambient_dim: int, rng) -> np.ndarray:
    """Rotate centered points into a higher-dimensional box around 0.5.

    Rows are centered, padded with zeros, rotated, scaled by the padded-cube
    diameter bound, and shifted to the box center; the map is affine so local
    dimensionality is untouched.
    """
    n, m = points.shape
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0.0:
        radius = 1.0
    padded = np.zeros((n, ambient_dim))
    padded[:, :m] = centered / (2.0 * radius)
    return padded @ _random_rotation(ambient_dim, rng) + 0.5


def _two_moons(n: int, seed: int, noise: float = 0.1,
               ambient_dim: int = 2) -> Dataset:
    if ambient_dim < 2:
        raise ValueError("two_moons needs ambient_dim >= 2")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    pts = np.vstack([outer, inner]) + rng.normal(0.0, noise, (n, 2))
    labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    if ambient_dim == 2:
        lo = pts.min(axis=0)
        span = pts.max(axis=0) - lo
        span[span == 0.0] = 1.0
        feats = (pts - lo) / span
    else:
        feats = _embed(pts, ambient_dim, rng)
    order = rng.permutation(n)
    return Dataset(features=feats[order], labels=labels[order])


def _gaussian_blobs(n: int, seed: int, classes: int = 2, dim: int = 2,
                    spread: float = 0.08) -> Dataset:
    if classes < 2 or dim < 1 or spread <= 0.0:
        raise ValueError("invalid blob parameters")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.25, 0.75, (classes, dim))
    labels = np.arange(n) % classes
    pts = centers[labels] + rng.normal(0.0, spread, (n, dim))
    order = rng.permutation(n)
    return Dataset(features=np.clip(pts, 0.0, 1.0)[order], labels=labels[order])


def _uniform_manifold(n: int, seed: int, m: int = 2,
                      ambient_d: int = 10) -> Dataset:
    """Uniform samples on an m-cube rotated into ambient_d dimensions.

    The support is m-dimensional, so neighborhood LID estimates should
    concentrate near m; labels split the latent cube by coordinate sum.
    """
    if m < 1 or m > ambient_d:
        raise ValueError("need 1 <= m <= ambient_d")
    rng = np.random.default_rng(seed)
    latent = rng.random((n, m))
    labels = (latent.sum(axis=1) > m / 2.0).astype(int)
    padded = np.zeros((n, ambient_d))
    padded[:, :m] = latent - 0.5
    # rotated cube fits in a ball of radius sqrt(m)/2; scale it into the box
    feats = (padded @ _random_rotation(ambient_d, rng)) / np.sqrt(m) + 0.5
    order = rng.permutation(n)
    return Dataset(features=feats[order], labels=labels[order])


def gen_synthetic(name: str, n: int, seed: int, **params) -> Dataset:
    """Build one of the named generators; n must be at least 10."""
    if n < 10:
        raise ValueError("need at least 10 examples")
    makers = {"two_moons": _two_moons, "gaussian_blobs": _gaussian_blobs,
              "uniform_manifold": _uniform_manifold}
    if name not in makers:
        raise ValueError(f"unknown generator {name!r}")
    try:
        return makers[name](n, seed, **params)
    except TypeError as err:
        raise ValueError(f"bad parameters for {name}: {err}") from None


def save_csv(dataset: Dataset, path) -> None:
    """Feature columns then the integer label, floats written via repr."""
    width = dataset.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f_{i}" for i in range(width)] + ["label"])
        for row, lab in zip(dataset.features, dataset.labels):
            writer.writerow([repr(v) for v in row.tolist()] + [int(lab)])


def _is_header(record) -> bool:
    try:
        float(record[0])
        return False
    except ValueError:
        return True


def load_csv(path) -> Dataset:
    """Read features-then-label rows; malformed input errors carry the line."""
    rows, labels = [], []
    width = None
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if not record or (lineno == 1 and _is_header(record)):
                continue
            if len(record) < 2:
                raise ParseError(lineno, "need at least one feature and a label")
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(
                    lineno, f"expected {width} columns, found {len(record)}")
            try:
                feats = [float(v) for v in record[:-1]]
            except ValueError as err:
                raise ParseError(lineno, f"bad feature value: {err}") from None
            if not all(np.isfinite(feats)):
                raise ParseError(lineno, "non-finite feature value")
            try:
                lab = int(record[-1])
            except ValueError:
                raise ParseError(
                    lineno, f"label must be an integer, got {record[-1]!r}"
                ) from None
            if lab < 0:
                raise ParseError(lineno, "label must be non-negative")
            rows.append(feats)
            labels.append(lab)
    if not rows:
        raise ParseError(1, "no data rows found")
    return Dataset(features=np.array(rows, dtype=float),
                   labels=np.array(labels, dtype=int))
