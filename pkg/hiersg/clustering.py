"""
Clustering Module
k-means over relation-label embeddings and hierarchies built from clusters.

Initialization is k-means++ from a seeded numpy Generator, so a fixed
(table, k, seed) always gives the same result.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hiersg.constants import KMEANS_MAX_ITER
from hiersg.core_model import RelationHierarchy, RelationVocabulary, ensure_valid_hierarchy
from hiersg.error_handler import DimensionMismatch, EmptyCategoryError, TooFewPoints

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Relation name -> embedding vector, all of one dimension."""
    vectors: Dict[str, np.ndarray]

    def __post_init__(self):
        vectors = {name: np.asarray(vec, dtype=np.float64) for name, vec in self.vectors.items()}
        dims = {v.shape for v in vectors.values()}
        if len(dims) > 1 or any(len(shape) != 1 for shape in dims):
            raise DimensionMismatch(f"embedding vectors must share one 1-d shape, got {sorted(dims)}")
        for name, vec in vectors.items():
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"embedding for {name!r} contains non-finite values")
        object.__setattr__(self, 'vectors', vectors)

    @property
    def names(self) -> List[str]:
        return list(self.vectors)

    @property
    def dimension(self) -> int:
        return next(iter(self.vectors.values())).shape[0] if self.vectors else 0

    def matrix(self) -> np.ndarray:
        """Rows in name order."""
        if not self.vectors:
            return np.zeros((0, 0))
        return np.stack([self.vectors[n] for n in self.names])


@dataclass
class ClusterResult:
    """Assignment of every relation to a cluster id in [0, k)."""
    assignment: Dict[str, int]
    centroids: np.ndarray
    inertia: float
    inertia_history: List[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, cluster: int) -> List[str]:
        return [name for name, c in self.assignment.items() if c == cluster]


def _squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = np.sum((X - X[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers.append(idx)
        closest = np.minimum(closest, np.sum((X - X[idx]) ** 2, axis=1))
    return X[centers].copy()


def _reseed_empty(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    """Move the point farthest from its centroid (in a cluster of >= 2) into each empty cluster."""
    labels = labels.copy()
    for empty in range(k):
        if np.any(labels == empty):
            continue
        counts = np.bincount(labels, minlength=k)
        distances = np.sum((X - centroids[labels]) ** 2, axis=1)
        distances[counts[labels] < 2] = -1.0
        donor = int(np.argmax(distances))
        logger.debug("Reseeding empty cluster %d with point %d", empty, donor)
        labels[donor] = empty
        centroids[empty] = X[donor]
    return labels


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> Tuple[np.ndarray, np.ndarray, List[float], int]:
    centroids = _kmeans_plus_plus(X, k, rng)
    labels = _reseed_empty(X, np.argmin(_squared_distances(X, centroids), axis=1), centroids, k)
    history: List[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids = np.stack([X[labels == c].mean(axis=0) for c in range(k)])
        history.append(float(np.sum((X - centroids[labels]) ** 2)))
        new_labels = _reseed_empty(X, np.argmin(_squared_distances(X, centroids), axis=1), centroids, k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids, history, n_iter


def kmeans(table: EmbeddingTable, k: int, seed: int = 0, n_init: int = 1, max_iter: int = KMEANS_MAX_ITER,
           l2_normalize: bool = False) -> ClusterResult:
    """
    k-means++ then Lloyd iterations until the assignment stops changing or
    max_iter. With n_init > 1 the lowest-inertia restart wins.
    """
    X = table.matrix()
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise TooFewPoints(f"cannot form {k} clusters from {n} relations")
    if l2_normalize:
        X = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)

    rng = np.random.default_rng(seed)
    best = None
    for run in range(max(1, n_init)):
        labels, centroids, history, n_iter = _lloyd(X, k, rng, max_iter)
        inertia = history[-1]
        logger.debug("k-means restart %d: inertia %.6f after %d iterations", run, inertia, n_iter)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia, history, n_iter)

    labels, centroids, inertia, history, n_iter = best
    return ClusterResult(
        assignment={name: int(c) for name, c in zip(table.names, labels)},
        centroids=centroids,
        inertia=inertia,
        inertia_history=history,
        n_iter=n_iter,
    )


def hierarchy_from_clusters(cr: ClusterResult, v: RelationVocabulary,
                            names: Optional[Sequence[str]] = None) -> RelationHierarchy:
    """Clusters become categories cluster_0..cluster_{k-1}, members ordered by relation index."""
    names = tuple(names) if names is not None else tuple(f"cluster_{c}" for c in range(cr.k))
    members: List[List[int]] = [[] for _ in range(cr.k)]
    for r, relation in enumerate(v.relation_names):
        if relation in cr.assignment:
            members[cr.assignment[relation]].append(r)
    for c, m in enumerate(members):
        if not m:
            raise EmptyCategoryError(f"cluster {names[c]} has no relations")
    hierarchy = RelationHierarchy(names, tuple(tuple(m) for m in members))
    ensure_valid_hierarchy(hierarchy, v)
    return hierarchy
