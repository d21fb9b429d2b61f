"""
Utility functions shared across the hiersg package.
"""

import hashlib
import json
import re
from enum import Enum
from pathlib import Path
from typing import Any, Union


def sanitize_filename(filename: str) -> str:
    """
    Sanitize a filename by removing invalid characters.

    Used to map image ids onto feature-map file names.
    """
    sanitized = re.sub(r'[<>:"/\\|?*]', '_', filename)
    sanitized = re.sub(r'\s+', '_', sanitized)
    return sanitized[:100]


def sha256_hex(data: Union[str, bytes]) -> str:
    """SHA-256 hex digest of text (UTF-8) or bytes."""
    if isinstance(data, str):
        data = data.encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def json_default(value: Any) -> Any:
    """json.dumps fallback for enums, paths, sets and numpy scalars."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if hasattr(value, 'tolist'):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(data: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=json_default)


def write_json(path: Union[str, Path], data: Any) -> Path:
    """Write indented UTF-8 JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, default=json_default)
        f.write('\n')
    return path


def read_json(path: Union[str, Path]) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
