"""
Relation Head Module
Pair features, the flat baseline head and the hierarchical head.

The hierarchical head predicts super-category probabilities r_sc over C
categories plus background, and one conditional softmax per category. Their
product gives joint probabilities, and every directed edge yields one
candidate predicate per super-category.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hiersg.constants import CATEGORY_ABBREVIATIONS, NORMALIZATION_TOL
from hiersg.core_model import BoundingBox, PredicateCandidate, RelationHierarchy, SceneGraph
from hiersg.error_handler import DimensionMismatch, MissingFlatHead

logger = logging.getLogger(__name__)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along `axis`."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def parameter_suffix(category: str) -> str:
    """Suffix used in parameter names: geo/pos/sem or the category name."""
    return CATEGORY_ABBREVIATIONS.get(category, category)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Channel-first feature map of shape (channels, height, width)."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionMismatch(f"feature map must have 3 dimensions, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_flat(cls, channels: int, height: int, width: int, values: Sequence[float]) -> 'FeatureMap':
        values = np.asarray(values, dtype=np.float64)
        if values.size != channels * height * width:
            raise DimensionMismatch(
                f"expected {channels * height * width} values for {channels}x{height}x{width}, got {values.size}")
        return cls(values.reshape(channels, height, width))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def with_depth(self, depth: np.ndarray) -> 'FeatureMap':
        """Append a height x width depth map as an extra channel."""
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != (self.height, self.width):
            raise DimensionMismatch(
                f"depth map shape {depth.shape} does not match feature map {(self.height, self.width)}")
        return FeatureMap(np.concatenate([self.data, depth[None, :, :]], axis=0))


@dataclass(frozen=True, eq=False)
class PairFeature:
    """Projected feature X_ij of one directed pair."""
    x: np.ndarray
    direction: Tuple[int, int]

    @property
    def d(self) -> int:
        return int(self.x.shape[0])


@dataclass(frozen=True, eq=False)
class HeadParameters:
    """
    Trainable state of the relation head.

    W_proj maps the 2*(h+1) pooled pair input to d dimensions. W_sc has C+1
    columns (background last); category c has its own (d, n_c) matrix.
    """
    categories: Tuple[str, ...]
    W_proj: np.ndarray
    b_proj: np.ndarray
    W_sc: np.ndarray
    b_sc: np.ndarray
    W_cat: Tuple[np.ndarray, ...]
    b_cat: Tuple[np.ndarray, ...]
    W_flat: Optional[np.ndarray] = None
    b_flat: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'categories', tuple(self.categories))
        object.__setattr__(self, 'W_cat', tuple(self.W_cat))
        object.__setattr__(self, 'b_cat', tuple(self.b_cat))
        d = self.W_proj.shape[1]
        c = len(self.categories)
        if self.b_proj.shape != (d,):
            raise DimensionMismatch(f"b_proj shape {self.b_proj.shape} != ({d},)")
        if self.W_sc.shape != (d, c + 1) or self.b_sc.shape != (c + 1,):
            raise DimensionMismatch(f"W_sc must be ({d}, {c + 1}), got {self.W_sc.shape}")
        if len(self.W_cat) != c or len(self.b_cat) != c:
            raise DimensionMismatch(f"expected {c} category heads, got {len(self.W_cat)}")
        for name, w, b in zip(self.categories, self.W_cat, self.b_cat):
            if w.ndim != 2 or w.shape[0] != d or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"category head {name!r} has shapes {w.shape}, {b.shape}")
        if (self.W_flat is None) != (self.b_flat is None):
            raise DimensionMismatch("W_flat and b_flat must be given together")
        if self.W_flat is not None and (self.W_flat.shape[0] != d or self.b_flat.shape != (self.W_flat.shape[1],)):
            raise DimensionMismatch(f"flat head has shapes {self.W_flat.shape}, {self.b_flat.shape}")

    @classmethod
    def init(cls, in_dim: int, d: int, hierarchy: RelationHierarchy, seed: int = 0,
             with_flat: bool = False, init_scale: float = 0.01) -> 'HeadParameters':
        """
        Seeded initialization: W_proj ~ N(0, 1/in_dim), heads ~ N(0, init_scale^2),
        zero biases.
        """
        rng = np.random.default_rng(seed)
        c = hierarchy.num_categories
        num_relations = sum(hierarchy.category_sizes)
        return cls(
            categories=hierarchy.super_categories,
            W_proj=rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(in_dim, d)),
            b_proj=np.zeros(d),
            W_sc=rng.normal(0.0, init_scale, size=(d, c + 1)),
            b_sc=np.zeros(c + 1),
            W_cat=tuple(rng.normal(0.0, init_scale, size=(d, n)) for n in hierarchy.category_sizes),
            b_cat=tuple(np.zeros(n) for n in hierarchy.category_sizes),
            W_flat=rng.normal(0.0, init_scale, size=(d, num_relations + 1)) if with_flat else None,
            b_flat=np.zeros(num_relations + 1) if with_flat else None,
        )

    @property
    def d(self) -> int:
        return self.W_proj.shape[1]

    @property
    def in_dim(self) -> int:
        return self.W_proj.shape[0]

    @property
    def category_sizes(self) -> Tuple[int, ...]:
        return tuple(w.shape[1] for w in self.W_cat)

    @property
    def has_flat(self) -> bool:
        return self.W_flat is not None

    def named_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters by checkpoint name, in a fixed order."""
        named = {'W_proj': self.W_proj, 'b_proj': self.b_proj, 'W_sc': self.W_sc, 'b_sc': self.b_sc}
        for name, w, b in zip(self.categories, self.W_cat, self.b_cat):
            suffix = parameter_suffix(name)
            named[f'W_{suffix}'] = w
            named[f'b_{suffix}'] = b
        if self.has_flat:
            named['W_flat'] = self.W_flat
            named['b_flat'] = self.b_flat
        return named

    def replace_arrays(self, arrays: Dict[str, np.ndarray]) -> 'HeadParameters':
        """New parameters with the given named arrays swapped in."""
        current = dict(self.named_arrays())
        unknown = set(arrays) - set(current)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        current.update(arrays)
        return self.from_named_arrays(self.categories, current)

    @classmethod
    def from_named_arrays(cls, categories: Sequence[str], arrays: Dict[str, np.ndarray]) -> 'HeadParameters':
        def get(name):
            try:
                return np.asarray(arrays[name], dtype=np.float64)
            except KeyError:
                raise DimensionMismatch(f"parameter {name} is missing") from None

        suffixes = [parameter_suffix(c) for c in categories]
        has_flat = 'W_flat' in arrays
        return cls(
            categories=tuple(categories),
            W_proj=get('W_proj'), b_proj=get('b_proj'),
            W_sc=get('W_sc'), b_sc=get('b_sc'),
            W_cat=tuple(get(f'W_{s}') for s in suffixes),
            b_cat=tuple(get(f'b_{s}') for s in suffixes),
            W_flat=get('W_flat') if has_flat else None,
            b_flat=get('b_flat') if has_flat else None,
        )

    def check_hierarchy(self, hierarchy: RelationHierarchy) -> None:
        if self.category_sizes != hierarchy.category_sizes:
            raise DimensionMismatch(
                f"head category sizes {self.category_sizes} do not match hierarchy {hierarchy.category_sizes}")


@dataclass(frozen=True, eq=False)
class ComposedDistribution:
    """r_sc (C categories + background) and joint probabilities per category."""
    r_sc: np.ndarray
    joint: Tuple[np.ndarray, ...]

    def __post_init__(self):
        r_sc = np.asarray(self.r_sc, dtype=np.float64)
        joint = tuple(np.asarray(j, dtype=np.float64) for j in self.joint)
        object.__setattr__(self, 'r_sc', r_sc)
        object.__setattr__(self, 'joint', joint)
        if r_sc.shape != (len(joint) + 1,):
            raise DimensionMismatch(f"r_sc must have {len(joint) + 1} entries, got {r_sc.shape}")
        if np.any(r_sc < 0) or abs(r_sc.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"r_sc is not a distribution: {r_sc}")
        for c, j in enumerate(joint):
            if np.any(j < 0) or abs(j.sum() - r_sc[c]) > NORMALIZATION_TOL:
                raise ValueError(f"joint[{c}] does not sum to r_sc[{c}]")

    @property
    def background(self) -> float:
        return float(self.r_sc[-1])

    def total_mass(self) -> float:
        return float(sum(j.sum() for j in self.joint) + self.r_sc[-1])


def pooled_box_feature(fm: FeatureMap, box: BoundingBox) -> np.ndarray:
    """
    Mean of the feature map over the cells a box covers.

    A cell (row, col) is covered when it overlaps the box with positive area.
    Boxes are clamped to the map; an empty mask pools to zeros with a warning.
    """
    c0 = max(0, math.floor(box.x))
    c1 = min(fm.width, math.ceil(box.x2))
    r0 = max(0, math.floor(box.y))
    r1 = min(fm.height, math.ceil(box.y2))
    if c1 <= c0 or r1 <= r0:
        logger.warning("Box %s falls outside the %dx%d feature map; pooling to zeros",
                       box.to_list(), fm.height, fm.width)
        return np.zeros(fm.channels)
    return fm.data[:, r0:r1, c0:c1].mean(axis=(1, 2))


def pair_inputs(fm: FeatureMap, box_i: BoundingBox, box_j: BoundingBox) -> Tuple[np.ndarray, np.ndarray]:
    """Pooled inputs for both directions: [f_i; f_j] and [f_j; f_i]."""
    f_i = pooled_box_feature(fm, box_i)
    f_j = pooled_box_feature(fm, box_j)
    return np.concatenate([f_i, f_j]), np.concatenate([f_j, f_i])


def project(u: np.ndarray, p: HeadParameters) -> np.ndarray:
    """x = u W_proj + b_proj, for one input or a batch of rows."""
    if u.shape[-1] != p.in_dim:
        raise DimensionMismatch(f"pair input has {u.shape[-1]} entries, W_proj expects {p.in_dim}")
    return u @ p.W_proj + p.b_proj


def build_pair_features(fm: FeatureMap, box_i: BoundingBox, box_j: BoundingBox, p: HeadParameters,
                        indices: Tuple[int, int] = (0, 1)) -> Tuple[PairFeature, PairFeature]:
    """Projected pair features X_ij and X_ji for boxes in feature-map coordinates."""
    if 2 * fm.channels != p.in_dim:
        raise DimensionMismatch(
            f"feature map has {fm.channels} channels but W_proj expects {p.in_dim // 2} per box")
    u_ij, u_ji = pair_inputs(fm, box_i, box_j)
    i, j = indices
    return PairFeature(project(u_ij, p), (i, j)), PairFeature(project(u_ji, p), (j, i))


def flat_forward(x: PairFeature, p: HeadParameters) -> np.ndarray:
    """Softmax over R relations plus background (last)."""
    if not p.has_flat:
        raise MissingFlatHead("parameters have no W_flat")
    if x.d != p.d:
        raise DimensionMismatch(f"pair feature has dimension {x.d}, head expects {p.d}")
    return softmax(x.x @ p.W_flat + p.b_flat)


def hierarchical_scores(X: np.ndarray, p: HeadParameters) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Batched r_sc (N, C+1) and conditional softmaxes q_c (N, n_c)."""
    r = softmax(X @ p.W_sc + p.b_sc)
    q = [softmax(X @ w + b) for w, b in zip(p.W_cat, p.b_cat)]
    return r, q


def hierarchical_forward(x: PairFeature, p: HeadParameters, h: RelationHierarchy) -> ComposedDistribution:
    """r_sc = softmax(x W_sc + b_sc); joint[c] = softmax(x W_c + b_c) * r_sc[c]."""
    p.check_hierarchy(h)
    if x.d != p.d:
        raise DimensionMismatch(f"pair feature has dimension {x.d}, head expects {p.d}")
    r, q = hierarchical_scores(x.x[None, :], p)
    r = r[0]
    return ComposedDistribution(r_sc=r, joint=tuple(q_c[0] * r[c] for c, q_c in enumerate(q)))


def edge_candidates(cd: ComposedDistribution, subject_idx: int, object_idx: int,
                    h: RelationHierarchy) -> List[PredicateCandidate]:
    """Best relation of every super-category; ties go to the lowest relation index."""
    candidates = []
    for c, joint in enumerate(cd.joint):
        members = h.within_category_order[c]
        tied = np.flatnonzero(joint == joint.max())
        position = min(tied, key=lambda pos: members[pos])
        candidates.append(PredicateCandidate(
            subject_idx=subject_idx,
            object_idx=object_idx,
            relation=members[position],
            super_category=c,
            confidence=float(min(1.0, joint[position])),
        ))
    return candidates


def rank_graph(candidates: Sequence[PredicateCandidate], k: Optional[int] = None) -> List[PredicateCandidate]:
    """Sort by confidence descending (then subject, object, relation) and keep the top k."""
    ranked = sorted(candidates, key=lambda c: (-c.confidence, c.subject_idx, c.object_idx, c.relation))
    return ranked if k is None else ranked[:k]


def predict_graph(graph: SceneGraph, fm: FeatureMap, p: HeadParameters, h: RelationHierarchy,
                  k: Optional[int] = None) -> SceneGraph:
    """
    Fill pred_candidates for every directed object pair, ranked.

    Boxes are scaled from image pixels to feature-map cells when the graph
    carries width and height; otherwise they are taken as cell coordinates.
    """
    sx = fm.width / graph.width if graph.width else 1.0
    sy = fm.height / graph.height if graph.height else 1.0
    boxes = [obj.box.scaled(sx, sy) for obj in graph.objects]

    candidates: List[PredicateCandidate] = []
    n = len(boxes)
    for i in range(n):
        for j in range(i + 1, n):
            for x in build_pair_features(fm, boxes[i], boxes[j], p, indices=(i, j)):
                cd = hierarchical_forward(x, p, h)
                candidates.extend(edge_candidates(cd, x.direction[0], x.direction[1], h))
    return graph.with_candidates(rank_graph(candidates, k))
