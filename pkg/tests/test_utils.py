import hashlib
import json
from enum import Enum
from pathlib import Path

import numpy as np
import pytest

from hiersg.utils import canonical_json, json_default, read_json, sanitize_filename, sha256_hex, write_json


class Color(Enum):
    RED = 'red'


def test_sanitize_filename():
    assert sanitize_filename('img/12:3 a.jpg') == 'img_12_3_a.jpg'
    assert sanitize_filename('plain') == 'plain'
    assert len(sanitize_filename('x' * 300)) == 100


def test_sha256_text_and_bytes():
    assert sha256_hex('abc') == hashlib.sha256(b'abc').hexdigest()
    assert sha256_hex(b'abc') == sha256_hex('abc')


def test_canonical_json_is_key_sorted():
    assert canonical_json({'b': 1, 'a': [1, 2]}) == '{"a":[1,2],"b":1}'
    assert canonical_json({'a': 1, 'b': 2}) == canonical_json({'b': 2, 'a': 1})


def test_json_default():
    assert json_default(Color.RED) == 'red'
    assert json_default(Path('a/b')) == str(Path('a/b'))
    assert json_default({3, 1}) == [1, 3]
    assert json_default(np.float64(0.5)) == 0.5
    assert json_default(np.arange(3)) == [0, 1, 2]
    with pytest.raises(TypeError):
        json_default(object())


def test_write_and_read_json(tmp_path):
    path = write_json(tmp_path / 'nested' / 'out.json', {'value': np.int64(3), 'tags': {'b', 'a'}})
    assert path.exists()
    assert read_json(path) == {'value': 3, 'tags': ['a', 'b']}
    assert path.read_text(encoding='utf-8').endswith('\n')
    json.loads(path.read_text(encoding='utf-8'))
