import pytest

from hiersg.validation import GraphRecordValidator, get_validation_summary, validate_record


def good_record():
    return {
        'image_id': 'img_1',
        'width': 100,
        'height': 80,
        'objects': [
            {'label': 0, 'bbox': [0, 0, 10, 10], 'score': 0.9},
            {'label': 1, 'bbox': [20, 5, 10, 10]},
        ],
        'gt_predicates': [[0, 1, 0]],
        'pred_candidates': [{'sub': 0, 'obj': 1, 'rel': 0, 'supercat': 0, 'conf': 0.8}],
    }


def messages(results):
    return ' | '.join(r.message for r in results)


def test_valid_record(scene_vocab, scene_hierarchy):
    ok, results = validate_record(good_record(), scene_vocab, scene_hierarchy)
    assert ok
    assert results == []


def test_missing_image_id():
    record = good_record()
    del record['image_id']
    ok, results = validate_record(record)
    assert not ok
    assert results[0].field == 'image_id'


def test_non_object_record():
    ok, results = validate_record(['not', 'a', 'record'])
    assert not ok
    assert "JSON object" in results[0].message


@pytest.mark.parametrize("bbox,fragment", [
    ([0, 0, 10], "list of 4"),
    ([0, 0, 'x', 10], "finite numbers"),
    ([0, 0, 0, 10], "positive"),
])
def test_bad_boxes(bbox, fragment):
    assert fragment in messages(GraphRecordValidator().validate_box(bbox, 'objects[0].bbox'))


def test_label_outside_vocabulary(scene_vocab):
    record = good_record()
    record['objects'][1]['label'] = 6
    ok, results = validate_record(record, scene_vocab)
    assert not ok
    assert "outside vocabulary of 6 objects" in messages(results)


def test_score_range():
    record = good_record()
    record['objects'][0]['score'] = 1.5
    ok, results = validate_record(record)
    assert not ok
    assert results[0].field == 'objects[0]'


def test_gt_predicate_references_missing_node():
    record = good_record()
    record['gt_predicates'] = [[0, 5, 0]]
    ok, results = validate_record(record)
    assert not ok
    assert "missing node" in messages(results)


def test_duplicate_gt_predicate_is_a_warning():
    record = good_record()
    record['gt_predicates'] = [[0, 1, 0], [0, 1, 0]]
    ok, results = validate_record(record)
    assert ok
    assert [r.severity for r in results] == ['warning']


def test_gt_objects_set_node_range():
    record = good_record()
    record['gt_objects'] = [{'label': 0, 'bbox': [0, 0, 5, 5]}] * 3
    record['gt_predicates'] = [[0, 2, 0]]
    ok, _ = validate_record(record)
    assert ok


def test_candidate_missing_fields():
    record = good_record()
    record['pred_candidates'] = [{'sub': 0, 'obj': 1}]
    ok, results = validate_record(record)
    assert not ok
    assert "missing fields ['rel', 'supercat', 'conf']" in messages(results)


def test_candidate_self_loop_and_confidence():
    record = good_record()
    record['pred_candidates'] = [{'sub': 1, 'obj': 1, 'rel': 0, 'supercat': 0, 'conf': 2.0}]
    _, results = validate_record(record)
    text = messages(results)
    assert "different nodes" in text
    assert "conf must be in [0, 1]" in text


def test_candidate_supercat_must_match_hierarchy(scene_vocab, scene_hierarchy):
    record = good_record()
    record['pred_candidates'][0]['rel'] = 4
    ok, results = validate_record(record, scene_vocab, scene_hierarchy)
    assert not ok
    assert "does not match the hierarchy assignment of relation 4" in messages(results)


def test_relation_outside_vocabulary(scene_vocab):
    record = good_record()
    record['gt_predicates'] = [[0, 1, 9]]
    ok, results = validate_record(record, scene_vocab)
    assert not ok
    assert "outside vocabulary of 6 relations" in messages(results)


def test_validation_summary():
    record = good_record()
    record['gt_predicates'] = [[0, 1, 0], [0, 1, 0]]
    record['width'] = -1
    _, results = validate_record(record)
    summary = get_validation_summary(results)
    assert summary == {'errors': 1, 'warnings': 1, 'info': 0, 'total': 2}
