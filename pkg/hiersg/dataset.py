"""
Dataset Module
Readers and writers for scene graphs, vocabularies, hierarchies, embeddings,
triplet sets and training samples.

Scene graphs are streamed as JSONL, one image per line; everything else is a
single JSON document. Errors carry the file and 1-based line number.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Union

import numpy as np
from rapidfuzz import process

from hiersg.clustering import EmbeddingTable
from hiersg.commonsense import AlignmentSets, TripletWhitelist
from hiersg.core_model import (
    BoundingBox,
    ObjectInstance,
    PredicateCandidate,
    RelationHierarchy,
    RelationVocabulary,
    SceneGraph,
    Triplet,
    ensure_valid_hierarchy,
)
from hiersg.error_handler import DatasetFormatError, DimensionMismatch, HierarchyError, HierarchyIssue
from hiersg.training import TrainingSample
from hiersg.utils import read_json, write_json
from hiersg.validation import GraphRecordValidator

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / 'data'
DEFAULT_VOCABULARY_FILE = DATA_DIR / 'vg50_vocabulary.json'
DEFAULT_HIERARCHY_FILE = DATA_DIR / 'vg50_hierarchy.json'

PathLike = Union[str, Path]


def suggest_name(name: str, choices: Sequence[str]) -> str:
    """' (did you mean X?)' for the closest known name, or ''."""
    match = process.extractOne(name, list(choices), score_cutoff=60)
    return f" (did you mean {match[0]!r}?)" if match else ""


# Scene graphs

def _object_from_record(obj: Dict[str, Any]) -> ObjectInstance:
    return ObjectInstance(label=obj['label'], box=BoundingBox.from_list(obj['bbox']),
                          score=float(obj.get('score', 1.0)))


def graph_from_record(record: Dict[str, Any], vocabulary: Optional[RelationVocabulary] = None,
                      hierarchy: Optional[RelationHierarchy] = None,
                      path: Optional[str] = None, line: Optional[int] = None) -> SceneGraph:
    """Validate a decoded record and build its SceneGraph; duplicate gt predicates are dropped."""
    results = GraphRecordValidator(vocabulary, hierarchy).validate_record(record)
    errors = [r for r in results if r.severity == "error" and not r.is_valid]
    if errors:
        detail = '; '.join(f"{r.field}: {r.message}" if r.field else r.message for r in errors)
        raise DatasetFormatError(detail, path, line)

    gt: List[tuple] = []
    for pred in record.get('gt_predicates', []):
        key = tuple(pred)
        if key in gt:
            logger.warning("Dropping duplicate gt predicate %s in image %s", list(key), record['image_id'])
            continue
        gt.append(key)

    gt_objects = record.get('gt_objects')
    return SceneGraph(
        image_id=record['image_id'],
        objects=tuple(_object_from_record(o) for o in record.get('objects', [])),
        gt_predicates=tuple(gt),
        pred_candidates=tuple(
            PredicateCandidate(subject_idx=c['sub'], object_idx=c['obj'], relation=c['rel'],
                               super_category=c['supercat'], confidence=float(c['conf']))
            for c in record.get('pred_candidates', [])
        ),
        width=record.get('width'),
        height=record.get('height'),
        gt_objects=tuple(_object_from_record(o) for o in gt_objects) if gt_objects is not None else None,
    )


def _object_to_record(obj: ObjectInstance) -> Dict[str, Any]:
    return {'label': obj.label, 'bbox': obj.box.to_list(), 'score': obj.score}


def graph_to_record(graph: SceneGraph) -> Dict[str, Any]:
    record: Dict[str, Any] = {'image_id': graph.image_id}
    if graph.width is not None:
        record['width'] = graph.width
    if graph.height is not None:
        record['height'] = graph.height
    record['objects'] = [_object_to_record(o) for o in graph.objects]
    if graph.gt_objects is not None:
        record['gt_objects'] = [_object_to_record(o) for o in graph.gt_objects]
    record['gt_predicates'] = [list(p) for p in graph.gt_predicates]
    record['pred_candidates'] = [
        {'sub': c.subject_idx, 'obj': c.object_idx, 'rel': c.relation,
         'supercat': c.super_category, 'conf': c.confidence}
        for c in graph.pred_candidates
    ]
    return record


def iter_graphs(path: PathLike, vocabulary: Optional[RelationVocabulary] = None,
                hierarchy: Optional[RelationHierarchy] = None) -> Iterator[SceneGraph]:
    """Stream SceneGraphs from a JSONL file, skipping blank lines."""
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"invalid JSON: {e.msg}", str(path), line_no) from e
            yield graph_from_record(record, vocabulary, hierarchy, str(path), line_no)


def read_graphs(path: PathLike, vocabulary: Optional[RelationVocabulary] = None,
                hierarchy: Optional[RelationHierarchy] = None) -> List[SceneGraph]:
    return list(iter_graphs(path, vocabulary, hierarchy))


def write_graphs(path: PathLike, graphs: Iterable[SceneGraph]) -> int:
    """Write graphs as JSONL; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for graph in graphs:
            f.write(json.dumps(graph_to_record(graph), sort_keys=True) + '\n')
            count += 1
    return count


# Vocabulary and hierarchy

def load_vocabulary(path: PathLike) -> RelationVocabulary:
    """{"relations": [...], "objects": [...]}"""
    data = read_json(path)
    if not isinstance(data, dict) or 'relations' not in data:
        raise DatasetFormatError("vocabulary must be an object with 'relations' and 'objects' lists", str(path))
    try:
        return RelationVocabulary(tuple(data['relations']), tuple(data.get('objects', [])))
    except ValueError as e:
        raise DatasetFormatError(str(e), str(path)) from e


def save_vocabulary(path: PathLike, vocabulary: RelationVocabulary) -> Path:
    return write_json(path, {'relations': list(vocabulary.relation_names),
                             'objects': list(vocabulary.object_names)})


def hierarchy_from_names(data: Dict[str, Sequence[str]], vocabulary: RelationVocabulary) -> RelationHierarchy:
    """Build and validate a hierarchy from {category: [relation names]} (file order = index order)."""
    issues = []
    members = []
    for category, names in data.items():
        indices = []
        for name in names:
            if name in vocabulary.relation_names:
                indices.append(vocabulary.relation_index(name))
            else:
                issues.append(HierarchyIssue(
                    'UnknownRelation', name,
                    f"in category {category}{suggest_name(name, vocabulary.relation_names)}"))
        members.append(tuple(indices))
    if issues:
        raise HierarchyError(issues)
    hierarchy = RelationHierarchy(tuple(data.keys()), tuple(members))
    ensure_valid_hierarchy(hierarchy, vocabulary)
    return hierarchy


def load_hierarchy(path: PathLike, vocabulary: RelationVocabulary) -> RelationHierarchy:
    data = read_json(path)
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise DatasetFormatError("hierarchy must map category names to lists of relation names", str(path))
    return hierarchy_from_names(data, vocabulary)


def hierarchy_to_names(hierarchy: RelationHierarchy, vocabulary: RelationVocabulary) -> Dict[str, List[str]]:
    return {
        name: [vocabulary.relation_names[r] for r in members]
        for name, members in zip(hierarchy.super_categories, hierarchy.within_category_order)
    }


def save_hierarchy(path: PathLike, hierarchy: RelationHierarchy, vocabulary: RelationVocabulary) -> Path:
    return write_json(path, hierarchy_to_names(hierarchy, vocabulary))


def load_default_vocabulary() -> RelationVocabulary:
    """The Visual Genome 50-relation, 150-object vocabulary shipped with the package."""
    return load_vocabulary(DEFAULT_VOCABULARY_FILE)


def load_default_hierarchy(vocabulary: Optional[RelationVocabulary] = None) -> RelationHierarchy:
    """Geometric / possessive / semantic partition of the shipped vocabulary."""
    return load_hierarchy(DEFAULT_HIERARCHY_FILE, vocabulary or load_default_vocabulary())


# Embeddings

def load_embeddings(path: PathLike, vocabulary: Optional[RelationVocabulary] = None) -> EmbeddingTable:
    """
    {relation name: [numbers]}. With a vocabulary, rows are reordered to
    vocabulary order and every relation must be present.
    """
    data = read_json(path)
    if not isinstance(data, dict) or not data:
        raise DatasetFormatError("embeddings must map relation names to vectors", str(path))
    if vocabulary is not None:
        missing = [r for r in vocabulary.relation_names if r not in data]
        if missing:
            raise DatasetFormatError(f"embeddings missing relations {missing}", str(path))
        unknown = [r for r in data if r not in vocabulary.relation_names]
        for name in unknown:
            logger.warning("Ignoring embedding for unknown relation %r%s", name,
                           suggest_name(name, vocabulary.relation_names))
        data = {r: data[r] for r in vocabulary.relation_names}
    try:
        return EmbeddingTable({name: np.asarray(vec, dtype=np.float64) for name, vec in data.items()})
    except (TypeError, ValueError, DimensionMismatch) as e:
        raise DatasetFormatError(str(e), str(path)) from e


# Triplet sets

def triplets_to_names(triplets: Iterable[Triplet], vocabulary: RelationVocabulary) -> List[List[str]]:
    return sorted(t.to_names(vocabulary) for t in triplets)


def triplets_from_names(entries: Any, vocabulary: RelationVocabulary, path: Optional[str] = None) -> Set[Triplet]:
    if not isinstance(entries, list):
        raise DatasetFormatError("triplet set must be a list of [subject, relation, object]", path)
    triplets = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, list) or len(entry) != 3:
            raise DatasetFormatError(f"entry {i} is not [subject, relation, object]", path)
        try:
            triplets.add(Triplet.from_names(entry, vocabulary))
        except ValueError:
            raise DatasetFormatError(f"entry {i} {entry} uses names outside the vocabulary", path) from None
    return triplets


def load_triplet_set(path: PathLike, vocabulary: RelationVocabulary) -> Set[Triplet]:
    return triplets_from_names(read_json(path), vocabulary, str(path))


def save_triplet_set(path: PathLike, triplets: Iterable[Triplet], vocabulary: RelationVocabulary) -> Path:
    return write_json(path, triplets_to_names(triplets, vocabulary))


def load_whitelist(path: PathLike, vocabulary: RelationVocabulary) -> TripletWhitelist:
    return TripletWhitelist(frozenset(load_triplet_set(path, vocabulary)))


def load_alignment_sets(path: PathLike, vocabulary: RelationVocabulary) -> AlignmentSets:
    """{"aligned": [...], "violated": [...]}; overlapping sets are rejected."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise DatasetFormatError("alignment sets must be an object with 'aligned' and 'violated'", str(path))
    sets = AlignmentSets(
        aligned=triplets_from_names(data.get('aligned', []), vocabulary, str(path)),
        violated=triplets_from_names(data.get('violated', []), vocabulary, str(path)),
    )
    sets.check_disjoint()
    return sets


def save_alignment_sets(path: PathLike, sets: AlignmentSets, vocabulary: RelationVocabulary) -> Path:
    aligned, violated = sets.snapshot()
    return write_json(path, {'aligned': triplets_to_names(aligned, vocabulary),
                             'violated': triplets_to_names(violated, vocabulary)})


# Training samples

def read_training_samples(path: PathLike, hierarchy: RelationHierarchy) -> List[TrainingSample]:
    """JSONL of {"input": [numbers], "relation": index or null}; null means background."""
    samples = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                relation = record.get('relation')
                samples.append(TrainingSample.for_relation(
                    np.asarray(record['input'], dtype=np.float64), relation, hierarchy))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"invalid training sample: {e}", str(path), line_no) from e
    return samples
