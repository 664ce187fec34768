"""
Single-file container for adapters and weight matrices.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic, ASCII "TLAB"
    4       2     format version, u16, currently 1
    6       4     header_len, u32
    10      N     manifest, UTF-8 JSON, right-padded with spaces so that
                  10 + header_len is a multiple of 8
    10+N    ...   payload: raw IEEE-754 little-endian tensors

Manifest keys are written in this exact order, with ``separators=(",", ":")``::

    format_version  int, equals the header version
    kind            "lora" | "trilora" | "weight"
    r1, r2          int (LoRA: both equal the rank; weight: null)
    diagonal_mode   bool (weight: null)
    scale           float (weight: null)
    seed            int or null, the seed the adapter was created from
    tensors         list of tensor records, ascending by offset

Each tensor record has keys ``name, role, shape, dtype, offset, length``.
``role`` is one of ``A, B`` (lora), ``U, Sigma, Vt`` (trilora) or ``W0``
(weight), each present exactly once. ``dtype`` is ``"f64"`` or ``"f32"``.
``offset`` is relative to the payload start and a multiple of 8; gaps
between tensors are zero bytes; ``length`` equals the element count times
the item size. The payload ends exactly at the end of the last tensor.

Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .adapters import Adapter, LoRAAdapter, TriLoRAAdapter
from .errors import (
    AdapterIOError,
    BadMagicError,
    FormatError,
    ManifestError,
    NonFiniteTensorError,
    OverlappingOffsetsError,
    ParameterError,
    ShapeError,
    ShapeRoleMismatchError,
    TrailingBytesError,
    TruncatedHeaderError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "decode",
    "encode",
    "load",
    "load_adapter",
    "load_weight",
    "save_adapter",
    "save_weight",
]

MAGIC = b"TLAB"
FORMAT_VERSION = 1
ALIGN = 8
_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}
_ROLES = {"lora": ("A", "B"), "trilora": ("U", "Sigma", "Vt"), "weight": ("W0",)}
_MANIFEST_KEYS = ("format_version", "kind", "r1", "r2", "diagonal_mode", "scale", "seed", "tensors")
_TENSOR_KEYS = ("name", "role", "shape", "dtype", "offset", "length")


def _pad(n: int) -> int:
    return -n % ALIGN


def _seed_of(adapter):
    return None if adapter.seed is None else int(adapter.seed)


def _tensors_of(obj) -> tuple[dict, dict]:
    if isinstance(obj, LoRAAdapter):
        meta = {"kind": "lora", "r1": obj.rank, "r2": obj.rank, "diagonal_mode": False,
                "scale": obj.scale, "seed": _seed_of(obj)}
        return meta, {"A": obj.A, "B": obj.B}
    if isinstance(obj, TriLoRAAdapter):
        meta = {"kind": "trilora", "r1": obj.r1, "r2": obj.r2, "diagonal_mode": obj.diagonal_mode,
                "scale": obj.scale, "seed": _seed_of(obj)}
        return meta, {"U": obj.U, "Sigma": obj.Sigma, "Vt": obj.Vt}
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"weight must be 2-D, got shape {arr.shape}")
    meta = {"kind": "weight", "r1": None, "r2": None, "diagonal_mode": None, "scale": None, "seed": None}
    return meta, {"W0": arr}


def encode(obj: Union[Adapter, np.ndarray], dtype: str = "f64") -> bytes:
    """Serialize an adapter or a 2-D weight matrix to container bytes."""
    if dtype not in _DTYPES:
        raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    meta, tensors = _tensors_of(obj)
    np_dtype = _DTYPES[dtype]

    records, chunks, offset = [], [], 0
    for role, value in tensors.items():
        raw = np.ascontiguousarray(value, dtype=np.float64).astype(np_dtype)
        if not np.all(np.isfinite(raw)):
            raise ParameterError(f"tensor {role} is not representable as {dtype}")
        data = raw.tobytes()
        records.append({"name": role, "role": role, "shape": list(value.shape), "dtype": dtype,
                        "offset": offset, "length": len(data)})
        chunks.append(data)
        offset += len(data)
        if len(records) < len(tensors):
            gap = _pad(offset)
            chunks.append(b"\0" * gap)
            offset += gap

    manifest = {"format_version": FORMAT_VERSION, **meta, "tensors": records}
    header = json.dumps(manifest, separators=(",", ":"), allow_nan=False).encode("utf-8")
    header += b" " * _pad(_PREFIX.size + len(header))
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def _write_atomic(path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise AdapterIOError(f"cannot write {path}: {exc.strerror or exc}", path) from exc


def save_adapter(adapter: Adapter, path, dtype: str = "f64") -> None:
    if not isinstance(adapter, (LoRAAdapter, TriLoRAAdapter)):
        raise TypeError(f"expected an adapter, got {type(adapter).__name__}")
    _write_atomic(path, encode(adapter, dtype))


def save_weight(w: np.ndarray, path, dtype: str = "f64") -> None:
    _write_atomic(path, encode(w, dtype))


# -- decoding -----------------------------------------------------------------


def _reject_constant(name):
    raise ManifestError(f"manifest contains non-standard JSON constant {name}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_manifest(header: bytes) -> dict:
    try:
        text = header.decode("utf-8")
        manifest = json.loads(text, parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise ManifestError(f"manifest is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(manifest, dict) or tuple(manifest) != _MANIFEST_KEYS:
        raise ManifestError(f"manifest must be an object with keys {list(_MANIFEST_KEYS)}")

    kind = manifest["kind"]
    if not isinstance(kind, str) or kind not in _ROLES:
        raise ManifestError(f"unknown adapter kind {kind!r}")
    if kind == "weight":
        for key in ("r1", "r2", "diagonal_mode", "scale", "seed"):
            if manifest[key] is not None:
                raise ManifestError(f"weight files must have null {key}")
    else:
        for key in ("r1", "r2"):
            if not _is_int(manifest[key]) or manifest[key] < 1:
                raise ManifestError(f"{key} must be a positive integer")
        if not isinstance(manifest["diagonal_mode"], bool):
            raise ManifestError("diagonal_mode must be a boolean")
        scale = manifest["scale"]
        if not isinstance(scale, (int, float)) or isinstance(scale, bool) or abs(scale) > 1e308 \
                or not math.isfinite(scale):
            raise ManifestError("scale must be a finite number")
        seed = manifest["seed"]
        if seed is not None and (not _is_int(seed) or not 0 <= seed < 1 << 64):
            raise ManifestError("seed must be null or an unsigned 64-bit integer")

    tensors = manifest["tensors"]
    if not isinstance(tensors, list):
        raise ManifestError("tensors must be a list")
    names = set()
    for rec in tensors:
        if not isinstance(rec, dict) or tuple(rec) != _TENSOR_KEYS:
            raise ManifestError(f"tensor records must have keys {list(_TENSOR_KEYS)}")
        if not isinstance(rec["name"], str) or not rec["name"] or rec["name"] in names:
            raise ManifestError("tensor names must be unique non-empty strings")
        names.add(rec["name"])
        if not isinstance(rec["dtype"], str) or rec["dtype"] not in _DTYPES:
            raise ManifestError(f"unsupported dtype {rec['dtype']!r}")
        shape = rec["shape"]
        if not isinstance(shape, list) or not shape or len(shape) > 2 or not all(
            _is_int(s) and s >= 1 for s in shape
        ):
            raise ManifestError(f"bad shape {shape!r} for tensor {rec['name']}")
        for key in ("offset", "length"):
            if not _is_int(rec[key]) or rec[key] < 0:
                raise ManifestError(f"{key} of tensor {rec['name']} must be a non-negative integer")
        if rec["offset"] % ALIGN:
            raise ManifestError(f"tensor {rec['name']} offset {rec['offset']} is not {ALIGN}-byte aligned")
        expected = math.prod(shape) * _DTYPES[rec["dtype"]].itemsize
        if rec["length"] != expected:
            raise ManifestError(
                f"tensor {rec['name']} length {rec['length']} does not match shape {shape} ({expected} bytes)"
            )
    return manifest


def _check_layout(tensors: list, payload_len: int) -> None:
    end = 0
    for rec in tensors:
        if rec["offset"] < end:
            raise OverlappingOffsetsError(
                f"tensor {rec['name']} at offset {rec['offset']} overlaps or precedes byte {end}"
            )
        end = rec["offset"] + rec["length"]
    if end > payload_len:
        raise TruncatedPayloadError(
            f"truncated payload: expected {end} bytes, found {payload_len}", expected=end, actual=payload_len
        )
    if end < payload_len:
        raise TrailingBytesError(f"payload has {payload_len - end} bytes past the last tensor")


def _check_shapes(manifest: dict, arrays: dict) -> None:
    kind = manifest["kind"]
    shapes = {role: arr.shape for role, arr in arrays.items()}
    if kind == "weight":
        if len(shapes["W0"]) != 2:
            raise ShapeRoleMismatchError(f"W0 must be 2-D, got {shapes['W0']}")
        return
    r1, r2 = manifest["r1"], manifest["r2"]
    if kind == "lora":
        ok = (r1 == r2 and len(shapes["A"]) == 2 and len(shapes["B"]) == 2
              and shapes["A"][1] == r1 and shapes["B"][0] == r1
              and manifest["diagonal_mode"] is False)
    else:
        sigma = (r1,) if manifest["diagonal_mode"] else (r2, r1)
        ok = (len(shapes["U"]) == 2 and len(shapes["Vt"]) == 2
              and shapes["U"][1] == r2 and shapes["Vt"][0] == r1 and shapes["Sigma"] == sigma
              and (not manifest["diagonal_mode"] or r1 == r2))
    if not ok:
        raise ShapeRoleMismatchError(f"tensor shapes {shapes} inconsistent with {kind} r1={r1} r2={r2}")


def decode(data: bytes) -> Union[Adapter, np.ndarray]:
    """Parse container bytes; raises a :class:`FormatError` subclass on any defect."""
    if len(data) < _PREFIX.size:
        raise TruncatedHeaderError(f"file is {len(data)} bytes, shorter than the {_PREFIX.size}-byte prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    start = _PREFIX.size + header_len
    if start > len(data):
        raise TruncatedHeaderError(f"header claims {header_len} bytes but only {len(data) - _PREFIX.size} remain")
    if start % ALIGN:
        raise ManifestError(f"payload start {start} is not {ALIGN}-byte aligned")
    manifest = _parse_manifest(data[_PREFIX.size:start])
    if manifest["format_version"] != version:
        raise ManifestError(f"manifest version {manifest['format_version']!r} differs from header {version}")

    tensors = manifest["tensors"]
    roles = [rec["role"] for rec in tensors]
    if sorted(map(str, roles)) != sorted(_ROLES[manifest["kind"]]):
        raise ShapeRoleMismatchError(
            f"{manifest['kind']} needs roles {list(_ROLES[manifest['kind']])}, got {roles}"
        )
    payload = memoryview(data)[start:]
    _check_layout(tensors, len(payload))

    arrays = {}
    for rec in tensors:
        raw = payload[rec["offset"]:rec["offset"] + rec["length"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[rec["dtype"]]).astype(np.float64).reshape(rec["shape"])
        if not np.all(np.isfinite(arr)):
            raise NonFiniteTensorError(f"tensor {rec['name']} contains NaN or Inf")
        arrays[rec["role"]] = arr
    _check_shapes(manifest, arrays)

    kind = manifest["kind"]
    try:
        if kind == "weight":
            return arrays["W0"]
        if kind == "lora":
            return LoRAAdapter(arrays["A"], arrays["B"], manifest["scale"], manifest["seed"])
        return TriLoRAAdapter(
            arrays["U"], arrays["Sigma"], arrays["Vt"],
            manifest["diagonal_mode"], manifest["scale"], manifest["seed"],
        )
    except (ShapeError, ParameterError) as exc:
        raise ShapeRoleMismatchError(str(exc)) from exc


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise AdapterIOError(f"cannot read {path}: {exc.strerror or exc}", path) from exc


def load(path) -> Union[Adapter, np.ndarray]:
    """Load whatever the file holds: an adapter or a weight matrix."""
    return decode(_read(path))


def load_adapter(path) -> Adapter:
    obj = load(path)
    if isinstance(obj, np.ndarray):
        raise FormatError(f"{path} holds a weight matrix, not an adapter")
    return obj


def load_weight(path) -> np.ndarray:
    obj = load(path)
    if not isinstance(obj, np.ndarray):
        raise FormatError(f"{path} holds a {obj.kind} adapter, not a weight matrix")
    return obj
