import numpy as np
import pytest

from hiersg.core_model import RelationHierarchy, RelationVocabulary
from hiersg.synthetic import toy_hierarchy, toy_vocabulary


@pytest.fixture
def toy_h():
    return toy_hierarchy((2, 2, 2))


@pytest.fixture
def toy_v():
    return toy_vocabulary((2, 2, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene_vocab():
    """Small named vocabulary for the commonsense pipeline."""
    return RelationVocabulary(
        relation_names=('on', 'near', 'has', 'wearing', 'riding', 'holding'),
        object_names=('girl', 'skateboard', 'tree', 'hand', 'man', 'hat'),
    )


@pytest.fixture
def scene_hierarchy():
    return RelationHierarchy(('geometric', 'possessive', 'semantic'), ((0, 1), (2, 3), (4, 5)))
