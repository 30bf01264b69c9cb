"""Tensor files: one JSON header line, then a raw little-endian payload.

The header records the shape, dimension names and dtype, so a file can be
decoded without any outside knowledge. Complex payloads are stored as
interleaved (real, imag) pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = "tddhybrid-tensor/1"

_DTYPES = {
    "complex64": np.dtype("<c8"),
    "complex128": np.dtype("<c16"),
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
}


class TensorFileError(IOError):
    pass


@dataclass
class DatasetHeader:
    shape: tuple[int, ...]
    dims: tuple[str, ...]
    dtype: str = "complex64"
    config: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.shape = tuple(int(s) for s in self.shape)
        self.dims = tuple(self.dims)
        if len(self.shape) != len(self.dims):
            raise ValueError(f"shape {self.shape} and dims {self.dims} differ in rank")
        if self.dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def count(self) -> int:
        return self.shape[0] if self.shape else 1

    @property
    def payload_nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * _DTYPES[self.dtype].itemsize

    def to_json(self) -> str:
        doc = {
            "format": MAGIC,
            "shape": list(self.shape),
            "dims": list(self.dims),
            "dtype": self.dtype,
            "layout": "C-order, little-endian, complex as interleaved real/imag",
            "count": self.count,
            "config": self.config,
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True)


def save_tensor(path: str | Path, header: DatasetHeader, payload: np.ndarray) -> None:
    payload = np.asarray(payload)
    if payload.shape != header.shape:
        raise ValueError(f"payload shape {payload.shape} != header shape {header.shape}")
    data = np.ascontiguousarray(payload, dtype=_DTYPES[header.dtype])
    line = header.to_json().encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(line)
        fh.write(data.tobytes())


def load_tensor(path: str | Path) -> tuple[DatasetHeader, np.ndarray]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise TensorFileError(f"{path}: missing header line")
    try:
        doc = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"{path}: corrupt header ({exc})") from exc
    if doc.get("format") != MAGIC:
        raise TensorFileError(f"{path}: not a tensor file")
    header = DatasetHeader(shape=doc["shape"], dims=doc["dims"], dtype=doc["dtype"],
                           config=doc.get("config", {}), meta=doc.get("meta", {}))
    body = raw[nl + 1:]
    if len(body) < header.payload_nbytes:
        raise TensorFileError(
            f"{path}: truncated payload ({len(body)} of {header.payload_nbytes} bytes)")
    if len(body) > header.payload_nbytes:
        raise TensorFileError(
            f"{path}: payload size mismatch ({len(body)} bytes, header implies "
            f"{header.payload_nbytes})")
    data = np.frombuffer(body, dtype=_DTYPES[header.dtype]).reshape(header.shape).copy()
    return header, data


# aliases used for channel datasets
save_dataset = save_tensor
load_dataset = load_tensor
