"""
Tensor Files Module
Binary tensor codec and parameter checkpoints.

A tensor file is the 4-byte magic b"SGT1", a little-endian u32 ndim, ndim
little-endian u32 dims, then row-major little-endian float32 values. A
checkpoint is a directory holding one tensor file per parameter and a JSON
manifest naming each of them.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from hiersg.constants import CHECKPOINT_MANIFEST, TENSOR_MAGIC, TENSOR_SUFFIX
from hiersg.error_handler import DatasetFormatError
from hiersg.relhead import FeatureMap, HeadParameters
from hiersg.utils import read_json, sanitize_filename, write_json

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'hiersg-checkpoint-1'


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize an array (any numeric dtype) as an SGT1 tensor."""
    array = np.asarray(array)
    header = np.asarray([array.ndim, *array.shape], dtype='<u4').tobytes()
    return TENSOR_MAGIC + header + np.ascontiguousarray(array, dtype='<f4').tobytes()


def decode_tensor(data: bytes, source: Optional[str] = None) -> np.ndarray:
    """Parse an SGT1 tensor into a float64 array."""
    if len(data) < 8 or data[:4] != TENSOR_MAGIC:
        raise DatasetFormatError("not an SGT1 tensor (bad magic)", source)
    ndim = int(np.frombuffer(data, dtype='<u4', count=1, offset=4)[0])
    header_end = 8 + 4 * ndim
    if len(data) < header_end:
        raise DatasetFormatError(f"truncated header for {ndim} dimensions", source)
    shape = tuple(int(v) for v in np.frombuffer(data, dtype='<u4', count=ndim, offset=8))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    expected = header_end + 4 * count
    if len(data) != expected:
        raise DatasetFormatError(
            f"payload size {len(data) - header_end} bytes does not match shape {shape}", source)
    values = np.frombuffer(data, dtype='<f4', count=count, offset=header_end)
    return values.astype(np.float64).reshape(shape)


def write_tensor(path: Union[str, Path], array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array))
    return path


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


def feature_map_path(features_dir: Union[str, Path], image_id: str, depth: bool = False) -> Path:
    """<features_dir>/<sanitized image id>.sgt, or .depth.sgt for the depth map."""
    stem = sanitize_filename(image_id)
    return Path(features_dir) / (f"{stem}.depth{TENSOR_SUFFIX}" if depth else f"{stem}{TENSOR_SUFFIX}")


def load_feature_map(features_dir: Union[str, Path], image_id: str) -> FeatureMap:
    """Load an image's (h, s, t) feature map, appending its depth map when present."""
    path = feature_map_path(features_dir, image_id)
    fm = FeatureMap(read_tensor(path))
    depth_path = feature_map_path(features_dir, image_id, depth=True)
    if depth_path.exists():
        depth = read_tensor(depth_path)
        if depth.ndim == 3 and depth.shape[0] == 1:
            depth = depth[0]
        fm = fm.with_depth(depth)
    return fm


def save_checkpoint(directory: Union[str, Path], params: HeadParameters) -> Path:
    """Write one tensor file per parameter plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, array in params.named_arrays().items():
        filename = f"{name}{TENSOR_SUFFIX}"
        write_tensor(directory / filename, array)
        tensors[name] = {'file': filename, 'shape': list(array.shape)}

    manifest = {
        'format': CHECKPOINT_FORMAT,
        'd': params.d,
        'in_channels': params.in_dim // 2,
        'categories': list(params.categories),
        'tensors': tensors,
    }
    path = write_json(directory / CHECKPOINT_MANIFEST, manifest)
    logger.info("Saved checkpoint with %d tensors to %s", len(tensors), directory)
    return path


def load_checkpoint(directory: Union[str, Path]) -> HeadParameters:
    """Read a checkpoint directory written by save_checkpoint."""
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    manifest = read_json(manifest_path)
    if manifest.get('format') != CHECKPOINT_FORMAT:
        raise DatasetFormatError(f"unsupported checkpoint format {manifest.get('format')!r}", str(manifest_path))

    arrays = {}
    for name, entry in manifest.get('tensors', {}).items():
        array = read_tensor(directory / entry['file'])
        if list(array.shape) != list(entry['shape']):
            raise DatasetFormatError(
                f"tensor {name} has shape {list(array.shape)}, manifest says {entry['shape']}", str(manifest_path))
        arrays[name] = array
    return HeadParameters.from_named_arrays(manifest['categories'], arrays)


def checkpoint_categories(directory: Union[str, Path]) -> Tuple[str, ...]:
    manifest = read_json(Path(directory) / CHECKPOINT_MANIFEST)
    return tuple(manifest['categories'])
