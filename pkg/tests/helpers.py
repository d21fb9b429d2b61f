"""Builders shared by several test modules."""

from hiersg.core_model import BoundingBox, ObjectInstance, PredicateCandidate, SceneGraph


def box(x, y, w=10.0, h=10.0):
    return BoundingBox(float(x), float(y), float(w), float(h))


def make_graph(image_id, labels, gt=(), candidates=(), width=100.0, height=100.0):
    """Graph with one object per label, laid out left to right."""
    objects = tuple(ObjectInstance(label, box(12 * i, 5)) for i, label in enumerate(labels))
    cands = tuple(c if isinstance(c, PredicateCandidate) else PredicateCandidate(*c) for c in candidates)
    return SceneGraph(image_id=image_id, objects=objects, gt_predicates=tuple(gt),
                      pred_candidates=cands, width=width, height=height)


def ranked_graph(hierarchy, n=40, image_id='img'):
    """Six nodes labeled 0..5 and n candidates with distinct triplets, already ranked."""
    combos = [(s, o, r) for s in range(6) for o in range(6) if s != o for r in range(6)][:n]
    cands = [PredicateCandidate(s, o, r, hierarchy.category_of(r), round(1.0 - 0.02 * i, 4))
             for i, (s, o, r) in enumerate(combos)]
    return make_graph(image_id, list(range(6)), candidates=cands)


class FailingClient:
    def __init__(self, error):
        self.error = error
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        raise self.error
