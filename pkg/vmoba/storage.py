import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from vmoba.errors import (
    BadMagicError,
    ExtentOverflowError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from vmoba.tensor.value_objects import DType, Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"VMTB"
FORMAT_VERSION = 1
# magic, version, dtype tag, ndim
_HEADER = struct.Struct("<4sIII")
_MAX_PAYLOAD_BYTES = 2**63 - 1


# ============================================================================
# MAPPERS: Tensor ↔ bytes
# ============================================================================

def _tensor_to_bytes(tensor: Tensor) -> bytes:
    dtype = tensor.dtype
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, dtype.value, tensor.ndim)
    extents = struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
    payload = np.ascontiguousarray(tensor.data, dtype=dtype.numpy.newbyteorder("<")).tobytes()
    return header + extents + payload


def _bytes_to_tensor(raw: bytes) -> Tensor:
    if len(raw) < _HEADER.size:
        if len(raw) >= 4 and raw[:4] != MAGIC:
            raise BadMagicError(f"bad magic {raw[:4]!r}")
        raise TruncatedPayloadError(f"header needs {_HEADER.size} bytes, file has {len(raw)}")

    magic, version, tag, ndim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported")
    try:
        dtype = DType(tag)
    except ValueError:
        raise TensorFormatError(f"unknown dtype tag {tag}")

    offset = _HEADER.size
    extents_end = offset + 8 * ndim
    if len(raw) < extents_end:
        raise TruncatedPayloadError(f"extent table needs {8 * ndim} bytes after the header")
    shape = struct.unpack_from(f"<{ndim}Q", raw, offset)

    # python ints: the product cannot wrap around
    count = 1
    for extent in shape:
        count *= extent
    itemsize = dtype.numpy.itemsize
    if count * itemsize > _MAX_PAYLOAD_BYTES:
        raise ExtentOverflowError(f"extents {shape} overflow the addressable payload size")

    payload = raw[extents_end:]
    expected = count * itemsize
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, extents {shape} need {expected}")
    if len(payload) > expected:
        raise TensorFormatError(f"{len(payload) - expected} trailing bytes after the payload")

    data = np.frombuffer(payload, dtype=dtype.numpy.newbyteorder("<")).astype(dtype.numpy)
    try:
        return Tensor(tuple(shape), data.reshape(shape))
    except ValueError as e:
        raise TensorFormatError(str(e))


# ============================================================================
# TENSOR STORAGE
# ============================================================================

class TensorStorage:
    @staticmethod
    def encode(tensor: Tensor) -> bytes:
        return _tensor_to_bytes(tensor)

    @staticmethod
    def decode(raw: bytes) -> Tensor:
        return _bytes_to_tensor(raw)

    @staticmethod
    def save(path: PathLike, tensor: Tensor) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(_tensor_to_bytes(tensor))
        logger.debug("wrote tensor %s (%s) to %s", tensor.shape, tensor.dtype.name, path)

    @staticmethod
    def load(path: PathLike) -> Tensor:
        return _bytes_to_tensor(Path(path).read_bytes())


# ============================================================================
# REPORT STORAGE
# ============================================================================

class ReportStorage:
    """JSON summaries and CSV tables written under a run's output directory."""

    @staticmethod
    def save_json(path: PathLike, payload: Dict[str, Any]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")
        logger.debug("wrote %s", path)
        return path

    @staticmethod
    def load_json(path: PathLike) -> Dict[str, Any]:
        return json.loads(Path(path).read_text(encoding="utf-8"))

    @staticmethod
    def save_csv(path: PathLike, rows: List[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=list(columns) if columns is not None else None)
        frame.to_csv(path, index=False)
        logger.debug("wrote %d rows to %s", len(frame), path)
        return path

    @staticmethod
    def load_csv(path: PathLike) -> pd.DataFrame:
        return pd.read_csv(path)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
