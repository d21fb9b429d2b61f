"""
Seeded synthetic data: toy vocabularies and hierarchies, separable training
pairs, random scene graphs and well-separated embedding blobs.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from hiersg.constants import DEFAULT_SUPER_CATEGORIES
from hiersg.core_model import (
    BoundingBox,
    ObjectInstance,
    PredicateCandidate,
    RelationHierarchy,
    RelationVocabulary,
    SceneGraph,
)
from hiersg.training import TrainingSample


def toy_vocabulary(relations_per_category: Sequence[int] = (2, 2, 2), num_objects: int = 4) -> RelationVocabulary:
    num_relations = sum(relations_per_category)
    return RelationVocabulary(tuple(f"rel_{i}" for i in range(num_relations)),
                              tuple(f"obj_{i}" for i in range(num_objects)))


def toy_hierarchy(relations_per_category: Sequence[int] = (2, 2, 2)) -> RelationHierarchy:
    """Consecutive relation indices per category, default category names first."""
    names = [DEFAULT_SUPER_CATEGORIES[c] if c < len(DEFAULT_SUPER_CATEGORIES) else f"category_{c}"
             for c in range(len(relations_per_category))]
    members = []
    start = 0
    for size in relations_per_category:
        members.append(tuple(range(start, start + size)))
        start += size
    return RelationHierarchy(tuple(names), tuple(members))


def make_toy_samples(hierarchy: RelationHierarchy, num_pairs: int = 200, in_dim: int = 8,
                     noise: float = 0.15, seed: int = 0, include_background: bool = True) -> List[TrainingSample]:
    """
    Pairs drawn around one N(0, 1) centroid per class (every relation, plus
    background), classes assigned round-robin.
    """
    rng = np.random.default_rng(seed)
    classes: List[Optional[int]] = [r for members in hierarchy.within_category_order for r in members]
    if include_background:
        classes.append(None)
    centroids = rng.normal(0.0, 1.0, size=(len(classes), in_dim))
    samples = []
    for i in range(num_pairs):
        k = i % len(classes)
        u = centroids[k] + noise * rng.normal(size=in_dim)
        samples.append(TrainingSample.for_relation(u, classes[k], hierarchy))
    return samples


def random_box(rng: np.random.Generator, size: float = 100.0) -> BoundingBox:
    x, y = rng.uniform(0, size * 0.7, size=2)
    w, h = rng.uniform(size * 0.1, size * 0.3, size=2)
    return BoundingBox(float(x), float(y), float(w), float(h))


def jitter_box(rng: np.random.Generator, box: BoundingBox, scale: float) -> BoundingBox:
    dx, dy = rng.normal(0.0, scale * box.w), rng.normal(0.0, scale * box.h)
    return BoundingBox(box.x + float(dx), box.y + float(dy), box.w, box.h)


def random_scene_graph(rng: np.random.Generator, hierarchy: RelationHierarchy, image_id: str,
                       num_objects: int = 4, num_object_labels: int = 4, num_gt: int = 3,
                       num_candidates: int = 6, hit_rate: float = 0.5) -> SceneGraph:
    """
    Random graph whose candidates copy a gt predicate with probability
    hit_rate and are random otherwise. Needs num_objects >= 2.
    """
    assignment = hierarchy.assignment
    num_relations = len(assignment)
    objects = tuple(ObjectInstance(int(rng.integers(num_object_labels)), random_box(rng))
                    for _ in range(num_objects))

    def random_pair() -> Tuple[int, int]:
        s, o = rng.choice(num_objects, size=2, replace=False)
        return int(s), int(o)

    gt = []
    for _ in range(num_gt * 3):
        if len(gt) == num_gt:
            break
        s, o = random_pair()
        triple = (s, o, int(rng.integers(num_relations)))
        if triple not in gt:
            gt.append(triple)

    candidates = []
    for _ in range(num_candidates):
        if gt and rng.random() < hit_rate:
            s, o, r = gt[int(rng.integers(len(gt)))]
        else:
            s, o = random_pair()
            r = int(rng.integers(num_relations))
        candidates.append(PredicateCandidate(s, o, r, assignment[r], float(rng.uniform(0.0, 1.0))))
    return SceneGraph(image_id=image_id, objects=objects, gt_predicates=tuple(gt),
                      pred_candidates=tuple(candidates), width=100.0, height=100.0)


def make_blobs(num_blobs: int = 3, points_per_blob: int = 8, dim: int = 4, radius: float = 0.1,
               separation: float = 10.0, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Points within `radius` of centers spaced `separation` apart along the axes."""
    rng = np.random.default_rng(seed)
    points = []
    labels = []
    for b in range(num_blobs):
        center = np.zeros(dim)
        center[b % dim] = separation * (1 + b // dim)
        for _ in range(points_per_blob):
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            points.append(center + direction * rng.uniform(0.0, radius))
            labels.append(b)
    return np.asarray(points), np.asarray(labels)
