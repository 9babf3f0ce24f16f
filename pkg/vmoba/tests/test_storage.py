import struct

import numpy as np
import pytest

from vmoba.errors import (
    BadMagicError,
    ExtentOverflowError,
    TensorFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from vmoba.storage import ReportStorage, TensorStorage
from vmoba.tensor import DType, Tensor, read_tensor, write_tensor


def make_header(magic=b"VMTB", version=1, tag=0, extents=()):
    return struct.pack("<4sIII", magic, version, tag, len(extents)) + struct.pack(f"<{len(extents)}Q", *extents)


# --- TENSOR FILES ---
def test_scalar_tensor_round_trips(tmp_path):
    path = tmp_path / "scalar.vmtb"
    write_tensor(path, Tensor((), np.array(2.5, dtype=np.float32)))
    back = read_tensor(path)
    assert back.shape == ()
    assert back.data.item() == 2.5


@pytest.mark.parametrize("dtype", [DType.F32, DType.F64])
def test_random_4d_tensor_round_trips_bit_exactly(tmp_path, dtype):
    t = Tensor.random((2, 3, 4, 5), seed=11, dtype=dtype)
    path = tmp_path / "t.vmtb"
    write_tensor(path, t)
    back = read_tensor(path)
    assert back.dtype is dtype
    assert back.shape == t.shape
    assert back.data.tobytes() == t.data.tobytes()
    assert path.read_bytes() == TensorStorage.encode(back)


def test_zero_extent_round_trips(tmp_path):
    path = tmp_path / "empty.vmtb"
    write_tensor(path, Tensor.zeros((3, 0, 2)))
    assert read_tensor(path).shape == (3, 0, 2)


def test_layout_of_header_and_payload():
    raw = TensorStorage.encode(Tensor.of([[1.0, 2.0]], DType.F64))
    assert raw[:4] == b"VMTB"
    assert struct.unpack_from("<III", raw, 4) == (1, 1, 2)
    assert struct.unpack_from("<2Q", raw, 16) == (1, 2)
    assert struct.unpack_from("<2d", raw, 32) == (1.0, 2.0)
    assert len(raw) == 32 + 16


def test_wrong_magic_rejected():
    raw = TensorStorage.encode(Tensor.of([1.0]))
    with pytest.raises(BadMagicError):
        TensorStorage.decode(b"XXXX" + raw[4:])


def test_unsupported_version_rejected():
    with pytest.raises(UnsupportedVersionError):
        TensorStorage.decode(make_header(version=2, extents=(1,)) + b"\x00" * 4)


def test_truncated_payload_rejected():
    raw = TensorStorage.encode(Tensor.random((4, 4), seed=1))
    with pytest.raises(TruncatedPayloadError):
        TensorStorage.decode(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        TensorStorage.decode(raw[:10])


def test_extent_overflow_rejected():
    with pytest.raises(ExtentOverflowError):
        TensorStorage.decode(make_header(tag=1, extents=(2**40, 2**40)))


def test_unknown_dtype_and_trailing_bytes_rejected():
    with pytest.raises(TensorFormatError):
        TensorStorage.decode(make_header(tag=9, extents=(1,)) + b"\x00" * 8)
    raw = TensorStorage.encode(Tensor.of([1.0]))
    with pytest.raises(TensorFormatError):
        TensorStorage.decode(raw + b"\x00")


def test_nan_payload_rejected():
    raw = make_header(tag=0, extents=(1,)) + struct.pack("<f", float("nan"))
    with pytest.raises(TensorFormatError):
        TensorStorage.decode(raw)


# --- REPORTS ---
def test_report_storage_json_handles_numpy(tmp_path):
    path = ReportStorage.save_json(tmp_path / "r" / "report.json", {"a": np.float32(1.5), "b": np.arange(3)})
    assert ReportStorage.load_json(path) == {"a": 1.5, "b": [0, 1, 2]}


def test_report_storage_csv_keeps_column_order(tmp_path):
    rows = [{"b": 1, "a": 2}, {"a": 4, "b": 3}]
    path = ReportStorage.save_csv(tmp_path / "t.csv", rows, ["a", "b"])
    frame = ReportStorage.load_csv(path)
    assert list(frame.columns) == ["a", "b"]
    assert frame["a"].tolist() == [2, 4]
