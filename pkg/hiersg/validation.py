"""
Input validation for scene-graph records.

Checks a decoded JSONL record before it becomes a SceneGraph, so that
malformed input is reported with every problem at once instead of the first
exception raised by a constructor.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from hiersg.core_model import RelationHierarchy, RelationVocabulary


@dataclass
class ValidationResult:
    """Result of a validation check."""
    is_valid: bool
    message: str
    field: Optional[str] = None
    severity: str = "error"  # error, warning, info


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_index(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


class GraphRecordValidator:
    """
    Validates scene-graph records.

    Vocabulary and hierarchy are optional; when given, label and relation
    ranges and candidate super-categories are checked against them.
    """

    def __init__(self, vocabulary: Optional[RelationVocabulary] = None,
                 hierarchy: Optional[RelationHierarchy] = None):
        self.vocabulary = vocabulary
        self.hierarchy = hierarchy
        self._assignment = hierarchy.assignment if hierarchy is not None else None

    def _error(self, message: str, field: str) -> ValidationResult:
        return ValidationResult(is_valid=False, message=message, field=field, severity="error")

    def validate_box(self, bbox: Any, field: str) -> List[ValidationResult]:
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            return [self._error("bbox must be a list of 4 numbers [x, y, w, h]", field)]
        if not all(_is_number(v) for v in bbox):
            return [self._error(f"bbox values must be finite numbers (got: {bbox})", field)]
        if bbox[2] <= 0 or bbox[3] <= 0:
            return [self._error(f"bbox width and height must be positive (got: {bbox})", field)]
        return []

    def validate_objects(self, objects: Any, field: str) -> List[ValidationResult]:
        if not isinstance(objects, list):
            return [self._error(f"{field} must be a list", field)]
        results = []
        for i, obj in enumerate(objects):
            where = f"{field}[{i}]"
            if not isinstance(obj, dict):
                results.append(self._error("object must be a JSON object", where))
                continue
            label = obj.get('label')
            if not _is_index(label):
                results.append(self._error(f"label must be a non-negative integer (got: {label!r})", where))
            elif self.vocabulary is not None and not self.vocabulary.has_object(label):
                results.append(self._error(
                    f"label {label} outside vocabulary of {self.vocabulary.num_objects} objects", where))
            results.extend(self.validate_box(obj.get('bbox'), f"{where}.bbox"))
            score = obj.get('score', 1.0)
            if not _is_number(score) or not 0.0 <= score <= 1.0:
                results.append(self._error(f"score must be in [0, 1] (got: {score!r})", where))
        return results

    def _check_relation(self, rel: Any, where: str) -> List[ValidationResult]:
        if not _is_index(rel):
            return [self._error(f"relation must be a non-negative integer (got: {rel!r})", where)]
        if self.vocabulary is not None and not self.vocabulary.has_relation(rel):
            return [self._error(
                f"relation {rel} outside vocabulary of {self.vocabulary.num_relations} relations", where)]
        return []

    def validate_gt_predicates(self, predicates: Any, num_nodes: int) -> List[ValidationResult]:
        if not isinstance(predicates, list):
            return [self._error("gt_predicates must be a list", 'gt_predicates')]
        results = []
        seen = set()
        for i, pred in enumerate(predicates):
            where = f"gt_predicates[{i}]"
            if not isinstance(pred, (list, tuple)) or len(pred) != 3:
                results.append(self._error("gt predicate must be [subject, object, relation]", where))
                continue
            sub, obj, rel = pred
            for name, node in (('subject', sub), ('object', obj)):
                if not _is_index(node) or node >= num_nodes:
                    results.append(self._error(f"{name} index {node!r} references a missing node", where))
            results.extend(self._check_relation(rel, where))
            key = (sub, obj, rel) if all(isinstance(v, int) for v in pred) else None
            if key is not None and key in seen:
                results.append(ValidationResult(
                    is_valid=True, message=f"duplicate gt predicate {list(key)} will be dropped",
                    field=where, severity="warning"))
            seen.add(key)
        return results

    def validate_candidates(self, candidates: Any, num_nodes: int) -> List[ValidationResult]:
        if not isinstance(candidates, list):
            return [self._error("pred_candidates must be a list", 'pred_candidates')]
        results = []
        for i, cand in enumerate(candidates):
            where = f"pred_candidates[{i}]"
            if not isinstance(cand, dict):
                results.append(self._error("candidate must be a JSON object", where))
                continue
            missing = [k for k in ('sub', 'obj', 'rel', 'supercat', 'conf') if k not in cand]
            if missing:
                results.append(self._error(f"candidate is missing fields {missing}", where))
                continue
            sub, obj = cand['sub'], cand['obj']
            for name, node in (('sub', sub), ('obj', obj)):
                if not _is_index(node) or node >= num_nodes:
                    results.append(self._error(f"{name} index {node!r} references a missing node", where))
            if sub == obj:
                results.append(self._error("subject and object must be different nodes", where))
            results.extend(self._check_relation(cand['rel'], where))
            conf = cand['conf']
            if not _is_number(conf) or not 0.0 <= conf <= 1.0:
                results.append(self._error(f"conf must be in [0, 1] (got: {conf!r})", where))
            if not _is_index(cand['supercat']):
                results.append(self._error("supercat must be a non-negative integer", where))
            elif self._assignment is not None and self._assignment.get(cand['rel']) != cand['supercat']:
                results.append(self._error(
                    f"supercat {cand['supercat']} does not match the hierarchy assignment of relation {cand['rel']}",
                    where))
        return results

    def validate_record(self, record: Any) -> List[ValidationResult]:
        """Validate one decoded JSONL record."""
        if not isinstance(record, dict):
            return [self._error("record must be a JSON object", None)]
        results = []
        image_id = record.get('image_id')
        if not isinstance(image_id, str) or not image_id:
            results.append(self._error("image_id must be a non-empty string", 'image_id'))
        for dim in ('width', 'height'):
            value = record.get(dim)
            if value is not None and (not _is_number(value) or value <= 0):
                results.append(self._error(f"{dim} must be a positive number (got: {value!r})", dim))

        objects = record.get('objects', [])
        results.extend(self.validate_objects(objects, 'objects'))
        num_nodes = len(objects) if isinstance(objects, list) else 0

        gt_objects = record.get('gt_objects')
        num_gt_nodes = num_nodes
        if gt_objects is not None:
            results.extend(self.validate_objects(gt_objects, 'gt_objects'))
            num_gt_nodes = len(gt_objects) if isinstance(gt_objects, list) else 0

        results.extend(self.validate_gt_predicates(record.get('gt_predicates', []), num_gt_nodes))
        results.extend(self.validate_candidates(record.get('pred_candidates', []), num_nodes))
        return results


def validate_record(record: Dict[str, Any], vocabulary: Optional[RelationVocabulary] = None,
                    hierarchy: Optional[RelationHierarchy] = None) -> Tuple[bool, List[ValidationResult]]:
    """
    Convenience function to validate one record.

    Returns:
        Tuple of (all_valid, list of results)
    """
    results = GraphRecordValidator(vocabulary, hierarchy).validate_record(record)
    errors = [r for r in results if r.severity == "error" and not r.is_valid]
    return len(errors) == 0, results


def get_validation_summary(results: List[ValidationResult]) -> Dict[str, int]:
    """Counts of validation results by severity."""
    summary = {'errors': 0, 'warnings': 0, 'info': 0, 'total': len(results)}
    for result in results:
        if result.severity == "error" and not result.is_valid:
            summary['errors'] += 1
        elif result.severity == "warning":
            summary['warnings'] += 1
        else:
            summary['info'] += 1
    return summary
