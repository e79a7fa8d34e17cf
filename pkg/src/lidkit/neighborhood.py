"""Minibatches and k-nearest-neighbor distance profiles.

Neighborhoods are always computed brute-force (every pairwise L2 distance) so
results are exact; batches here are small by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProfileError, ShapeError

MINIBATCH_SOURCES = ("normal", "adversarial", "noisy")


@dataclass(frozen=True)
class Minibatch:
    """A set of vectors sampled from one origin (normal, adversarial, noisy).

    ``member_ids`` are the sampled rows' identifiers in their source dataset
    and must be unique; ``vectors`` is the matching (n, d) float array, frozen
    on construction.
    """

    member_ids: tuple
    vectors: np.ndarray
    source: str = "normal"

    def __post_init__(self):
        object.__setattr__(self, "member_ids", tuple(int(i) for i in self.member_ids))
        v = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", v)
        if self.source not in MINIBATCH_SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if v.ndim != 2 or v.shape[0] < 1:
            raise ShapeError("vectors must be a non-empty (n, d) array")
        if len(self.member_ids) != v.shape[0]:
            raise ValueError("member_ids and vectors do not align")
        if len(set(self.member_ids)) != len(self.member_ids):
            raise ValueError("member_ids must be unique")
        if not np.all(np.isfinite(v)):
            raise ValueError("minibatch vectors must be finite")
        v.setflags(write=False)

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class DistanceProfile:
    """The k smallest reference distances from one query, ascending.

    The largest distance must be strictly positive; a zero there means the
    neighborhood is degenerate and no profile is constructed for it.
    """

    distances: np.ndarray
    k: int
    query_id: int | None = None

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        object.__setattr__(self, "distances", d)
        if d.ndim != 1 or d.shape[0] != self.k or self.k < 1:
            raise ShapeError("profile must hold exactly k distances")
        if np.any(d < 0.0) or not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite and non-negative")
        if np.any(np.diff(d) < 0.0):
            raise ValueError("distances must be ascending")
        if d[-1] <= 0.0:
            raise DegenerateProfileError("largest neighbor distance is zero")
        d.setflags(write=False)

    @property
    def r_max(self) -> float:
        return float(self.distances[-1])


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"vectors must share one shape, got {a.shape} and {b.shape}")
    return float(np.linalg.norm(a - b))


def sample_minibatch(vectors: np.ndarray, size: int, seed: int, *,
                     source: str = "normal", member_ids=None) -> Minibatch:
    """Uniform sample without replacement; ``size == n`` gives a permutation.

    ``member_ids`` defaults to row indices 0..n-1; when given, sampled ids are
    taken from it so minibatch members keep their dataset identity.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2:
        raise ShapeError("expected a (n, d) array")
    n = vectors.shape[0]
    if not 1 <= size <= n:
        raise ValueError(f"size must be in [1, {n}], got {size}")
    if member_ids is None:
        member_ids = np.arange(n)
    else:
        member_ids = np.asarray(member_ids)
        if member_ids.shape[0] != n:
            raise ValueError("member_ids and vectors do not align")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=size, replace=False)
    return Minibatch(member_ids=tuple(int(i) for i in member_ids[chosen]),
                     vectors=vectors[chosen], source=source)


def distances_to(query, refs: Minibatch) -> np.ndarray:
    """L2 distance from ``query`` to every reference row, in row order."""
    q = np.asarray(query, dtype=float)
    if q.ndim != 1 or q.shape[0] != refs.vectors.shape[1]:
        raise ShapeError(
            f"query of shape {q.shape} does not match references of width "
            f"{refs.vectors.shape[1]}"
        )
    return np.sqrt(((refs.vectors - q) ** 2).sum(axis=1))


def knn_profile(query, refs: Minibatch, k: int, *, exclude_self: bool = False,
                query_id: int | None = None) -> DistanceProfile:
    """Exact k-nearest-neighbor distance profile of a query against a minibatch.

    ``exclude_self=True`` removes every reference at distance zero (the query
    itself, and any exact duplicate of it).  Ties are broken by lower row
    index; with self-exclusion off, a zero k-th distance raises
    DegenerateProfileError.
    """
    dists = distances_to(query, refs)
    if exclude_self:
        dists = dists[dists > 0.0]
    if not 1 <= k <= dists.shape[0]:
        raise ValueError(
            f"k must be in [1, {dists.shape[0]}] for this neighborhood, got {k}"
        )
    order = np.argsort(dists, kind="stable")
    return DistanceProfile(distances=dists[order[:k]], k=k, query_id=query_id)
