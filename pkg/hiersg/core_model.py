"""
Core domain model: boxes, vocabularies, relation hierarchies and scene graphs.

All types are immutable after construction and safe to share across threads.
Background is never a vocabulary entry: it is index R in flat heads and index
C (the number of super-categories) in r_sc.
"""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

from hiersg.constants import DEFAULT_SUPER_CATEGORIES
from hiersg.error_handler import HierarchyError, HierarchyIssue


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner plus size, in pixels."""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"box coordinates must be finite: {values}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width and height must be positive: {values}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def union(self, other: 'BoundingBox') -> 'BoundingBox':
        """Smallest box enclosing both boxes."""
        x = min(self.x, other.x)
        y = min(self.y, other.y)
        return BoundingBox(x, y, max(self.x2, other.x2) - x, max(self.y2, other.y2) - y)

    def scaled(self, sx: float, sy: float) -> 'BoundingBox':
        return BoundingBox(self.x * sx, self.y * sy, self.w * sx, self.h * sy)

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'BoundingBox':
        if len(values) != 4:
            raise ValueError(f"bbox needs 4 numbers [x, y, w, h], got {len(values)}")
        return cls(*(float(v) for v in values))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the boxes are disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    if a == b:
        return 1.0
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class RelationVocabulary:
    """Ordered relation and object names."""
    relation_names: Tuple[str, ...]
    object_names: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'relation_names', tuple(self.relation_names))
        object.__setattr__(self, 'object_names', tuple(self.object_names))
        for kind, names in (('relation', self.relation_names), ('object', self.object_names)):
            if len(set(names)) != len(names):
                dupes = sorted({n for n in names if names.count(n) > 1})
                raise ValueError(f"duplicate {kind} names: {dupes}")

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def num_objects(self) -> int:
        return len(self.object_names)

    @property
    def background_index(self) -> int:
        """Index of the background class in a flat head."""
        return len(self.relation_names)

    def relation_index(self, name: str) -> int:
        return self.relation_names.index(name)

    def object_index(self, name: str) -> int:
        return self.object_names.index(name)

    def has_relation(self, index: int) -> bool:
        return 0 <= index < len(self.relation_names)

    def has_object(self, index: int) -> bool:
        return 0 <= index < len(self.object_names)


@dataclass(frozen=True)
class RelationHierarchy:
    """
    Partition of the relation vocabulary into super-categories.

    within_category_order is the source of truth; assignment is derived from
    it. Use validate_hierarchy before trusting that it is a partition.
    """
    super_categories: Tuple[str, ...]
    within_category_order: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, 'super_categories', tuple(self.super_categories))
        object.__setattr__(self, 'within_category_order',
                           tuple(tuple(int(r) for r in members) for members in self.within_category_order))
        if len(self.super_categories) != len(self.within_category_order):
            raise ValueError("one member list is required per super-category")

    @classmethod
    def from_members(cls, members: Sequence[Sequence[int]],
                     names: Optional[Sequence[str]] = None) -> 'RelationHierarchy':
        names = tuple(names) if names is not None else DEFAULT_SUPER_CATEGORIES[:len(members)]
        return cls(super_categories=tuple(names), within_category_order=tuple(tuple(m) for m in members))

    @property
    def num_categories(self) -> int:
        return len(self.super_categories)

    @property
    def background_index(self) -> int:
        """Index of the background class in r_sc."""
        return len(self.super_categories)

    @cached_property
    def assignment(self) -> Dict[int, int]:
        """relation index -> super-category index (first occurrence wins)."""
        result: Dict[int, int] = {}
        for c, members in enumerate(self.within_category_order):
            for r in members:
                result.setdefault(r, c)
        return result

    @property
    def category_sizes(self) -> Tuple[int, ...]:
        return tuple(len(m) for m in self.within_category_order)

    def category_of(self, relation: int) -> int:
        try:
            return self.assignment[relation]
        except KeyError:
            raise KeyError(f"relation {relation} is not assigned to any super-category") from None

    def position_in_category(self, relation: int) -> int:
        """Column of the relation in its category's head."""
        return self.within_category_order[self.category_of(relation)].index(relation)

    def relation_at(self, category: int, position: int) -> int:
        return self.within_category_order[category][position]


def validate_hierarchy(h: RelationHierarchy, v: RelationVocabulary) -> List[HierarchyIssue]:
    """
    Check that h is a total partition of v's relations into non-empty,
    pairwise disjoint categories. Returns the list of issues; empty means ok.
    """
    issues: List[HierarchyIssue] = []
    seen: Dict[int, int] = {}
    for c, members in enumerate(h.within_category_order):
        name = h.super_categories[c]
        if not members:
            issues.append(HierarchyIssue('EmptyCategory', name))
        for r in members:
            if not v.has_relation(r):
                issues.append(HierarchyIssue('UnknownRelation', r, f"in category {name}"))
                continue
            if r in seen:
                first = h.super_categories[seen[r]]
                issues.append(HierarchyIssue('DuplicateAssignment', r,
                                             f"{v.relation_names[r]!r} in {first} and {name}"))
            else:
                seen[r] = c

    for r in range(v.num_relations):
        if r not in seen:
            issues.append(HierarchyIssue('MissingRelation', r, v.relation_names[r]))
    return issues


def ensure_valid_hierarchy(h: RelationHierarchy, v: RelationVocabulary) -> None:
    """Raise HierarchyError listing every issue found by validate_hierarchy."""
    issues = validate_hierarchy(h, v)
    if issues:
        raise HierarchyError(issues)


@dataclass(frozen=True)
class ObjectInstance:
    """A detected or annotated object."""
    label: int
    box: BoundingBox
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"object score must be in [0, 1], got {self.score}")


@dataclass(frozen=True, order=True)
class Triplet:
    """Label-level (subject, relation, object) combination."""
    subject_label: int
    relation: int
    object_label: int

    def render(self, vocabulary: RelationVocabulary) -> str:
        """'subject relation object', lowercase, single-spaced."""
        parts = (vocabulary.object_names[self.subject_label],
                 vocabulary.relation_names[self.relation],
                 vocabulary.object_names[self.object_label])
        return ' '.join(' '.join(p.split()) for p in parts).lower()

    def to_names(self, vocabulary: RelationVocabulary) -> List[str]:
        return [vocabulary.object_names[self.subject_label],
                vocabulary.relation_names[self.relation],
                vocabulary.object_names[self.object_label]]

    @classmethod
    def from_names(cls, names: Sequence[str], vocabulary: RelationVocabulary) -> 'Triplet':
        subject, relation, obj = names
        return cls(vocabulary.object_index(subject), vocabulary.relation_index(relation),
                   vocabulary.object_index(obj))


@dataclass(frozen=True)
class PredicateCandidate:
    """One ranked predicate on a directed edge."""
    subject_idx: int
    object_idx: int
    relation: int
    super_category: int
    confidence: float

    def __post_init__(self):
        if self.subject_idx == self.object_idx:
            raise ValueError("subject and object must be different nodes")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


GroundTruthPredicate = Tuple[int, int, int]  # (subject_idx, object_idx, relation)


@dataclass(frozen=True)
class SceneGraph:
    """
    Objects plus ground-truth and predicted relations for one image.

    gt_objects is set when predictions and ground truth use different node
    sets (SGCLS/SGDET); when None the ground truth refers to `objects`.
    """
    image_id: str
    objects: Tuple[ObjectInstance, ...]
    gt_predicates: Tuple[GroundTruthPredicate, ...] = ()
    pred_candidates: Tuple[PredicateCandidate, ...] = ()
    width: Optional[float] = None
    height: Optional[float] = None
    gt_objects: Optional[Tuple[ObjectInstance, ...]] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        object.__setattr__(self, 'gt_predicates', tuple(tuple(int(i) for i in p) for p in self.gt_predicates))
        object.__setattr__(self, 'pred_candidates', tuple(self.pred_candidates))
        if self.gt_objects is not None:
            object.__setattr__(self, 'gt_objects', tuple(self.gt_objects))

        n_gt = len(self.ground_truth_objects)
        for s, o, _ in self.gt_predicates:
            if not (0 <= s < n_gt and 0 <= o < n_gt):
                raise ValueError(f"gt predicate ({s}, {o}) references a missing node")
        if len(set(self.gt_predicates)) != len(self.gt_predicates):
            raise ValueError("gt predicates must be unique")
        n = len(self.objects)
        for cand in self.pred_candidates:
            if not (0 <= cand.subject_idx < n and 0 <= cand.object_idx < n):
                raise ValueError(f"candidate ({cand.subject_idx}, {cand.object_idx}) references a missing node")

    @property
    def ground_truth_objects(self) -> Tuple[ObjectInstance, ...]:
        return self.gt_objects if self.gt_objects is not None else self.objects

    def with_candidates(self, candidates: Sequence[PredicateCandidate]) -> 'SceneGraph':
        return replace(self, pred_candidates=tuple(candidates))

    def candidate_triplet(self, candidate: PredicateCandidate) -> Triplet:
        """Label-level triplet of a predicted candidate."""
        return Triplet(self.objects[candidate.subject_idx].label, candidate.relation,
                       self.objects[candidate.object_idx].label)

    def gt_triplets(self) -> List[Triplet]:
        """Label-level triplets of the ground truth, in gt order."""
        nodes = self.ground_truth_objects
        return [Triplet(nodes[s].label, r, nodes[o].label) for s, o, r in self.gt_predicates]
