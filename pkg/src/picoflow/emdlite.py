"""Byte-exact codec for the EMD-lite container format (``.emdl``).

An EMD-lite stream holds one experiment-metadata JSON block followed by any
number of N-dimensional datasets, and is sealed with a SHA-256 digest of
everything that precedes it.  Layout (all integers little-endian)::

    "EMDLITE1"                      8 bytes ASCII magic
    u32  metadata JSON length
    ...  metadata JSON (UTF-8, canonical key order)
    u32  dataset count
    per dataset:
        u32  name length
        ...  name (UTF-8)
        u8   dtype code
        u8   ndim
        u64  x ndim   dims
        u8   x ndim   axis codes
        u64  payload length
        ...  payload (row-major, last axis fastest, little-endian)
    sha256 digest of all preceding bytes   32 bytes

Encoding is deterministic: the same file value always produces the same
bytes, so digests double as content identity.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime
from enum import IntEnum
from pathlib import Path

import numpy as np

MAGIC = b"EMDLITE1"
DIGEST_LEN = 32
FILE_SUFFIX = ".emdl"

# magic + json-length + dataset-count + digest
_MIN_STREAM_LEN = len(MAGIC) + 4 + 4 + DIGEST_LEN


class EmdLiteError(Exception):
    """Base class for all codec failures."""


class FormatError(EmdLiteError):
    """Stream is structurally not EMD-lite (bad magic, bad JSON, trailing junk)."""


class CorruptionError(EmdLiteError):
    """Trailing digest does not match the stream content."""


class TruncationError(EmdLiteError):
    """Stream ends before a declared field or payload is complete."""


class UnsupportedError(EmdLiteError):
    """Unknown dtype or axis code."""


class EncodeError(EmdLiteError):
    """Value violates a container invariant and cannot be encoded."""


class DType(IntEnum):
    F64 = 0
    F32 = 1
    U16 = 2
    U8 = 3

    @property
    def width(self) -> int:
        return _DTYPE_WIDTH[self]

    @property
    def numpy_dtype(self) -> np.dtype:
        return _DTYPE_NUMPY[self]

    @property
    def label(self) -> str:
        return self.name.lower()


_DTYPE_WIDTH = {DType.F64: 8, DType.F32: 4, DType.U16: 2, DType.U8: 1}
_DTYPE_NUMPY = {
    DType.F64: np.dtype("<f8"),
    DType.F32: np.dtype("<f4"),
    DType.U16: np.dtype("<u2"),
    DType.U8: np.dtype("u1"),
}
# (numpy kind, itemsize) -> dtype code; byte order handled at conversion time
_CODE_BY_KIND = {("f", 8): DType.F64, ("f", 4): DType.F32,
                 ("u", 2): DType.U16, ("u", 1): DType.U8}


class AxisKind(IntEnum):
    WIDTH = 0
    HEIGHT = 1
    ENERGY = 2
    TIME = 3

    @property
    def label(self) -> str:
        return self.name.lower()


HYPERSPECTRAL_AXES = (AxisKind.WIDTH, AxisKind.HEIGHT, AxisKind.ENERGY)
SPATIOTEMPORAL_AXES = (AxisKind.TIME, AxisKind.HEIGHT, AxisKind.WIDTH)


def parse_iso8601(value: str) -> datetime:
    """Parse an ISO-8601 timestamp, accepting a trailing 'Z' for UTC."""
    if not isinstance(value, str) or not value:
        raise ValueError("timestamp must be a nonempty string")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    return datetime.fromisoformat(text)


def _require_finite_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{path}: expected a number, got {type(value).__name__}")
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(f"{path}: must be finite")
    return out


@dataclass
class StagePosition:
    """Specimen stage coordinates: x/y/z in micrometers, tilts in degrees."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def validate(self) -> None:
        for name in ("x", "y", "z", "alpha", "beta"):
            _require_finite_number(getattr(self, name), f"stage_position.{name}")

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z,
                "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "StagePosition":
        return cls(**{k: d[k] for k in ("x", "y", "z", "alpha", "beta")})


@dataclass
class DetectorInfo:
    name: str = "unknown"
    position: str = "unknown"

    def to_dict(self) -> dict:
        return {"name": self.name, "position": self.position}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorInfo":
        return cls(name=d["name"], position=d["position"])


@dataclass
class SoftwareInfo:
    name: str = "picoflow"
    version: str = "0"

    def to_dict(self) -> dict:
        return {"name": self.name, "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "SoftwareInfo":
        return cls(name=d["name"], version=d["version"])


@dataclass
class SampleInfo:
    description: str = ""
    elements: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not isinstance(self.elements, list):
            raise ValueError("sample.elements: must be a list")
        for i, el in enumerate(self.elements):
            if not isinstance(el, str) or not el:
                raise ValueError(f"sample.elements[{i}]: must be a nonempty string")

    def to_dict(self) -> dict:
        return {"description": self.description, "elements": list(self.elements)}

    @classmethod
    def from_dict(cls, d: dict) -> "SampleInfo":
        return cls(description=d["description"], elements=list(d["elements"]))


@dataclass
class ExperimentMetadata:
    """Acquisition context carried inside every EMD-lite file.

    The schema is a fixed core (timestamp, optics, stage, detector, software,
    sample) plus an open ``extra`` map for fields this codec does not model.
    """

    acquisition_datetime: str
    beam_energy: float = 300.0
    magnification: float = 1.0
    stage_position: StagePosition = field(default_factory=StagePosition)
    detector: DetectorInfo = field(default_factory=DetectorInfo)
    software: SoftwareInfo = field(default_factory=SoftwareInfo)
    sample: SampleInfo = field(default_factory=SampleInfo)
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        try:
            parse_iso8601(self.acquisition_datetime)
        except ValueError as exc:
            raise ValueError(f"acquisition_datetime: {exc}") from exc
        _require_finite_number(self.beam_energy, "beam_energy")
        _require_finite_number(self.magnification, "magnification")
        self.stage_position.validate()
        self.sample.validate()
        for info, label in ((self.detector, "detector"), (self.software, "software")):
            for attr in ("name", "position") if label == "detector" else ("name", "version"):
                if not isinstance(getattr(info, attr), str):
                    raise ValueError(f"{label}.{attr}: must be a string")
        if not isinstance(self.extra, dict):
            raise ValueError("extra: must be a JSON object")

    def to_dict(self) -> dict:
        return {
            "acquisition_datetime": self.acquisition_datetime,
            "beam_energy": self.beam_energy,
            "magnification": self.magnification,
            "stage_position": self.stage_position.to_dict(),
            "detector": self.detector.to_dict(),
            "software": self.software.to_dict(),
            "sample": self.sample.to_dict(),
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentMetadata":
        try:
            meta = cls(
                acquisition_datetime=d["acquisition_datetime"],
                beam_energy=d["beam_energy"],
                magnification=d["magnification"],
                stage_position=StagePosition.from_dict(d["stage_position"]),
                detector=DetectorInfo.from_dict(d["detector"]),
                software=SoftwareInfo.from_dict(d["software"]),
                sample=SampleInfo.from_dict(d["sample"]),
                extra=dict(d.get("extra", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"metadata missing or malformed field: {exc}") from exc
        meta.validate()
        return meta


@dataclass(frozen=True)
class DatasetDescriptor:
    """Shape/type header of one dataset; payload length is derived, not stored."""

    name: str
    dtype: DType
    dims: tuple[int, ...]
    axes: tuple[AxisKind, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "axes", tuple(AxisKind(a) for a in self.axes))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def payload_len(self) -> int:
        return self.dtype.width * math.prod(self.dims)

    def validate(self) -> None:
        if self.ndim < 1:
            raise ValueError(f"dataset {self.name!r}: ndim must be >= 1")
        if len(self.axes) != self.ndim:
            raise ValueError(f"dataset {self.name!r}: {len(self.axes)} axes for {self.ndim} dims")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dataset {self.name!r}: every extent must be >= 1")
        if self.ndim > 255:
            raise ValueError(f"dataset {self.name!r}: ndim exceeds u8 range")


@dataclass
class Dataset:
    descriptor: DatasetDescriptor
    payload: bytes

    def validate(self) -> None:
        self.descriptor.validate()
        if len(self.payload) != self.descriptor.payload_len:
            raise ValueError(
                f"dataset {self.descriptor.name!r}: payload is {len(self.payload)} bytes, "
                f"descriptor declares {self.descriptor.payload_len}"
            )

    def to_array(self) -> np.ndarray:
        """View the payload as a row-major numpy array of the declared shape."""
        arr = np.frombuffer(self.payload, dtype=self.descriptor.dtype.numpy_dtype)
        return arr.reshape(self.descriptor.dims)

    @classmethod
    def from_array(cls, name: str, array: np.ndarray,
                   axes: tuple[AxisKind, ...]) -> "Dataset":
        arr = np.ascontiguousarray(array)
        code = _CODE_BY_KIND.get((arr.dtype.kind, arr.dtype.itemsize))
        if code is None:
            raise EncodeError(f"unsupported array dtype {array.dtype}")
        desc = DatasetDescriptor(name=name, dtype=code, dims=arr.shape, axes=axes)
        payload = arr.astype(code.numpy_dtype, copy=False).tobytes(order="C")
        ds = cls(descriptor=desc, payload=payload)
        ds.validate()
        return ds


@dataclass
class EmdLiteFile:
    metadata: ExperimentMetadata
    datasets: list[Dataset] = field(default_factory=list)

    def validate(self) -> None:
        self.metadata.validate()
        for ds in self.datasets:
            ds.validate()


def _metadata_json_bytes(metadata: ExperimentMetadata) -> bytes:
    # Canonical form: sorted keys, no whitespace.  Keeps encode deterministic.
    return json.dumps(metadata.to_dict(), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode(file: EmdLiteFile) -> bytes:
    """Serialize to the normative byte layout, appending the SHA-256 seal."""
    try:
        file.validate()
    except ValueError as exc:
        raise EncodeError(str(exc)) from exc

    parts = [MAGIC]
    meta = _metadata_json_bytes(file.metadata)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(file.datasets)))
    for ds in file.datasets:
        name = ds.descriptor.name.encode("utf-8")
        parts.append(struct.pack("<I", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BB", int(ds.descriptor.dtype), ds.descriptor.ndim))
        parts.append(struct.pack(f"<{ds.descriptor.ndim}Q", *ds.descriptor.dims))
        parts.append(bytes(int(a) for a in ds.descriptor.axes))
        parts.append(struct.pack("<Q", ds.descriptor.payload_len))
        parts.append(ds.payload)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Cursor:
    """Bounds-checked reader over the digest-verified body."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"stream ends inside {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def decode(data: bytes) -> EmdLiteFile:
    """Parse an EMD-lite stream; hostile input is rejected, never trusted.

    The trailing digest is verified before any payload is interpreted, so a
    flipped bit anywhere past the magic surfaces as :class:`CorruptionError`.
    """
    if len(data) < len(MAGIC):
        raise TruncationError("stream shorter than magic")
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, not an EMD-lite stream")
    if len(data) < _MIN_STREAM_LEN:
        raise TruncationError("stream shorter than minimal container")

    body, digest = data[:-DIGEST_LEN], data[-DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError("trailing SHA-256 digest mismatch")

    cur = _Cursor(body)
    cur.take(len(MAGIC), "magic")
    meta_len = cur.u32("metadata length")
    meta_raw = cur.take(meta_len, "metadata JSON")
    try:
        meta_doc = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata block is not valid JSON: {exc}") from exc
    try:
        metadata = ExperimentMetadata.from_dict(meta_doc)
    except ValueError as exc:
        raise FormatError(f"invalid metadata: {exc}") from exc

    datasets = []
    count = cur.u32("dataset count")
    for i in range(count):
        name_len = cur.u32(f"dataset[{i}] name length")
        try:
            name = cur.take(name_len, f"dataset[{i}] name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"dataset[{i}] name is not UTF-8") from exc
        dtype_code = cur.u8(f"dataset[{i}] dtype")
        try:
            dtype = DType(dtype_code)
        except ValueError:
            raise UnsupportedError(f"dataset[{i}]: unknown dtype code {dtype_code}")
        ndim = cur.u8(f"dataset[{i}] ndim")
        dims = tuple(cur.u64(f"dataset[{i}] dim {d}") for d in range(ndim))
        axes = []
        for d in range(ndim):
            axis_code = cur.u8(f"dataset[{i}] axis {d}")
            try:
                axes.append(AxisKind(axis_code))
            except ValueError:
                raise UnsupportedError(f"dataset[{i}]: unknown axis code {axis_code}")
        payload_len = cur.u64(f"dataset[{i}] payload length")
        desc = DatasetDescriptor(name=name, dtype=dtype, dims=dims, axes=tuple(axes))
        try:
            desc.validate()
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
        if payload_len != desc.payload_len:
            raise FormatError(
                f"dataset[{i}]: payload length field {payload_len} != "
                f"dtype x dims product {desc.payload_len}"
            )
        payload = cur.take(payload_len, f"dataset[{i}] payload")
        datasets.append(Dataset(descriptor=desc, payload=payload))

    if cur.pos != len(body):
        raise FormatError(f"{len(body) - cur.pos} trailing bytes after last dataset")
    return EmdLiteFile(metadata=metadata, datasets=datasets)


def encoded_size(file: EmdLiteFile) -> int:
    """Exact serialized length without building the stream.

    48 header+digest bytes (8 magic + 4 json-len + 4 count + 32 digest) plus
    the metadata JSON, plus per dataset 14 fixed bytes (4 name-len + 1 dtype
    + 1 ndim + 8 payload-len) + name + 9 bytes per axis + payload.
    """
    n = _MIN_STREAM_LEN + len(_metadata_json_bytes(file.metadata))
    for ds in file.datasets:
        name_len = len(ds.descriptor.name.encode("utf-8"))
        n += 14 + name_len + 9 * ds.descriptor.ndim + ds.descriptor.payload_len
    return n


def extract_metadata(file: EmdLiteFile) -> dict:
    """Flatten file metadata plus per-dataset summaries into one JSON document.

    Key order is fixed by construction, so ``json.dumps`` of the result is
    deterministic for a given file.
    """
    doc = file.metadata.to_dict()
    doc["datasets"] = [
        {
            "name": ds.descriptor.name,
            "dtype": ds.descriptor.dtype.label,
            "dims": list(ds.descriptor.dims),
            "axes": [a.label for a in ds.descriptor.axes],
            "payload_bytes": ds.descriptor.payload_len,
        }
        for ds in file.datasets
    ]
    return doc


def metadata_json(file: EmdLiteFile) -> str:
    return json.dumps(extract_metadata(file), separators=(",", ":"), ensure_ascii=False)


def read_file(path: str | Path) -> EmdLiteFile:
    return decode(Path(path).read_bytes())


def write_file(file: EmdLiteFile, path: str | Path) -> int:
    data = encode(file)
    Path(path).write_bytes(data)
    return len(data)
