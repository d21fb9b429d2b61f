import numpy as np
import pytest

from hiersg.core_model import (
    BoundingBox,
    ObjectInstance,
    PredicateCandidate,
    RelationHierarchy,
    RelationVocabulary,
    SceneGraph,
    Triplet,
    ensure_valid_hierarchy,
    iou,
    validate_hierarchy,
)
from hiersg.dataset import load_default_hierarchy, load_default_vocabulary
from hiersg.error_handler import HierarchyError


class TestIoU:
    def test_identical_boxes(self):
        b = BoundingBox(3.5, 2.0, 7.0, 4.0)
        assert iou(b, b) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(5, 5, 2, 2)) == 0.0

    def test_touching_edges_do_not_overlap(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(2, 0, 2, 2)) == 0.0

    def test_half_shifted(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) == pytest.approx(1 / 3)

    def test_symmetric_on_random_boxes(self, rng):
        for _ in range(200):
            a = BoundingBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 10, 2))
            b = BoundingBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 10, 2))
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0


class TestBoundingBox:
    @pytest.mark.parametrize("values", [(0, 0, 0, 1), (0, 0, 1, -2), (float('nan'), 0, 1, 1)])
    def test_invalid_boxes_rejected(self, values):
        with pytest.raises(ValueError):
            BoundingBox(*values)

    def test_union(self):
        u = BoundingBox(0, 0, 2, 2).union(BoundingBox(5, 1, 1, 4))
        assert u.to_list() == [0, 0, 6, 5]

    def test_from_list_needs_four_values(self):
        with pytest.raises(ValueError):
            BoundingBox.from_list([1, 2, 3])


class TestHierarchy:
    def test_shipped_visual_genome_partition_is_valid(self):
        v = load_default_vocabulary()
        h = load_default_hierarchy(v)
        assert validate_hierarchy(h, v) == []
        assert v.num_relations == 50
        assert v.num_objects == 150
        assert h.super_categories == ('geometric', 'possessive', 'semantic')
        assert h.category_sizes == (15, 11, 24)
        assert sum(h.category_sizes) == v.num_relations

    def test_missing_relation(self, toy_v):
        h = RelationHierarchy(('geometric', 'possessive', 'semantic'), ((0, 1), (2, 3), (4,)))
        issues = validate_hierarchy(h, toy_v)
        assert [(i.kind, i.subject) for i in issues] == [('MissingRelation', 5)]

    def test_empty_category(self, toy_v):
        h = RelationHierarchy(('geometric', 'possessive', 'semantic'), ((0, 1, 2), (3, 4, 5), ()))
        issues = validate_hierarchy(h, toy_v)
        assert [(i.kind, i.subject) for i in issues] == [('EmptyCategory', 'semantic')]

    def test_duplicate_assignment(self, toy_v):
        h = RelationHierarchy(('geometric', 'possessive', 'semantic'), ((0, 1), (1, 2, 3), (4, 5)))
        kinds = [i.kind for i in validate_hierarchy(h, toy_v)]
        assert kinds == ['DuplicateAssignment']

    def test_ensure_valid_raises_with_all_issues(self, toy_v):
        h = RelationHierarchy(('a', 'b'), ((0, 1, 2), ()))
        with pytest.raises(HierarchyError) as exc:
            ensure_valid_hierarchy(h, toy_v)
        assert {i.kind for i in exc.value.issues} == {'EmptyCategory', 'MissingRelation'}

    def test_assignment_and_positions(self, toy_h):
        assert toy_h.assignment == {0: 0, 1: 0, 2: 1, 3: 1, 4: 2, 5: 2}
        assert toy_h.background_index == 3
        assert toy_h.position_in_category(5) == 1
        assert toy_h.relation_at(1, 0) == 2

    def test_valid_partition_covers_every_relation_once(self):
        v = load_default_vocabulary()
        h = load_default_hierarchy(v)
        flat = [r for members in h.within_category_order for r in members]
        assert sorted(flat) == list(range(v.num_relations))


class TestSceneGraph:
    def test_triplet_render_is_lowercase_single_spaced(self):
        v = RelationVocabulary(('Riding',), ('Girl', 'skate  board'))
        assert Triplet(0, 0, 1).render(v) == 'girl riding skate board'

    def test_candidate_rejects_self_loop(self):
        with pytest.raises(ValueError):
            PredicateCandidate(1, 1, 0, 0, 0.5)

    def test_candidate_confidence_range(self):
        with pytest.raises(ValueError):
            PredicateCandidate(0, 1, 0, 0, 1.5)

    def test_gt_must_reference_existing_nodes(self):
        objects = (ObjectInstance(0, BoundingBox(0, 0, 1, 1)),)
        with pytest.raises(ValueError):
            SceneGraph('img', objects, gt_predicates=((0, 1, 0),))

    def test_gt_triplets_use_object_labels(self):
        objects = (ObjectInstance(4, BoundingBox(0, 0, 1, 1)), ObjectInstance(2, BoundingBox(3, 3, 1, 1)))
        g = SceneGraph('img', objects, gt_predicates=((1, 0, 3),))
        assert g.gt_triplets() == [Triplet(2, 3, 4)]

    def test_objects_are_immutable(self):
        g = SceneGraph('img', [ObjectInstance(0, BoundingBox(0, 0, 1, 1))])
        assert isinstance(g.objects, tuple)
        with pytest.raises(Exception):
            g.image_id = 'other'

    def test_vocabulary_rejects_duplicates(self):
        with pytest.raises(ValueError):
            RelationVocabulary(('on', 'on'), ('a',))

    def test_background_index(self, toy_v):
        assert toy_v.background_index == 6
        assert np.isscalar(toy_v.num_relations)
