"""Tensor container reading/writing and the quantized checkpoint format.

The container format is an 8-byte little-endian header length, a JSON header
mapping tensor names to dtype, shape, and byte offsets, and the raw tensor
data; files written by the safetensors library read directly.  Tensors load
lazily so containers larger than memory stream one tensor at a time.

The checkpoint format is a little-endian binary file: magic ``LFTQ``, a
format version, a JSON echo of the quantization plan, and one section per
tensor holding the packed codes, float32 block scales, the serialized
codebook, float32 adapter factors, and summary metadata.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .codebooks import codebook_from_bytes, codebook_to_bytes
from .errors import FormatError
from .quantizer import QuantizedMatrix, dequantize_matrix

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "QuantizedCheckpoint",
    "TensorContainer",
    "TensorRecord",
    "export_adapters",
    "make_record",
    "read_checkpoint",
    "read_tensors",
    "reconstruct_backbone",
    "write_checkpoint",
    "write_tensors",
]

_DTYPES = {
    "F16": np.dtype("<f2"),
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
}
_TAG_FOR_KIND = {np.float16: "F16", np.float32: "F32", np.float64: "F64"}

CHECKPOINT_MAGIC = b"LFTQ"
CHECKPOINT_VERSION = 1


@dataclass
class _Entry:
    dtype: str
    shape: tuple
    start: int
    end: int


class TensorContainer:
    """Lazy reader over a validated tensor container file."""

    def __init__(self, path, entries, data_start):
        self._path = os.fspath(path)
        self._entries = entries
        self._data_start = data_start

    def names(self):
        return list(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def shape(self, name):
        return self._entries[name].shape

    def dtype_tag(self, name):
        return self._entries[name].dtype

    def load_raw(self, name) -> np.ndarray:
        """Read one tensor in its stored dtype."""
        entry = self._entries[name]
        with open(self._path, "rb") as fh:
            fh.seek(self._data_start + entry.start)
            raw = fh.read(entry.end - entry.start)
        if len(raw) != entry.end - entry.start:
            raise FormatError(f"tensor '{name}': file truncated")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry.dtype])
        return arr.reshape(entry.shape)

    def load(self, name) -> np.ndarray:
        """Read one tensor as float64."""
        return self.load_raw(name).astype(np.float64)


def read_tensors(path) -> TensorContainer:
    """Open a tensor container and validate its header.

    Checks that every tensor's dtype is supported, its byte span matches its
    shape, and that the spans exactly tile the data region.  Failures raise
    FormatError naming the offending tensor.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise FormatError("container too short for header length")
        (header_len,) = struct.unpack("<Q", head)
        if 8 + header_len > size:
            raise FormatError("container header length exceeds file size")
        header_raw = fh.read(header_len)
    try:
        header = json.loads(header_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"container header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("container header must be a JSON object")

    data_len = size - 8 - header_len
    entries = {}
    for name, entry in header.items():
        if name == "__metadata__":
            continue
        try:
            dtype = entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            start, end = (int(v) for v in entry["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"tensor '{name}': malformed header entry") from exc
        if dtype not in _DTYPES:
            raise FormatError(f"tensor '{name}': unsupported dtype {dtype!r}")
        if any(d < 0 for d in shape):
            raise FormatError(f"tensor '{name}': negative dimension in {shape}")
        count = 1
        for d in shape:
            count *= d
        if not 0 <= start <= end <= data_len:
            raise FormatError(f"tensor '{name}': data offsets out of range")
        if end - start != count * _DTYPES[dtype].itemsize:
            raise FormatError(
                f"tensor '{name}': byte span {end - start} does not match "
                f"shape {shape} of dtype {dtype}"
            )
        entries[name] = _Entry(dtype=dtype, shape=shape, start=start, end=end)

    spans = sorted((e.start, e.end, n) for n, e in entries.items())
    cursor = 0
    for start, end, name in spans:
        if start != cursor:
            raise FormatError(
                f"tensor '{name}': data offsets do not tile the data region"
            )
        cursor = end
    if cursor != data_len:
        raise FormatError("container data region has trailing bytes")
    return TensorContainer(path, entries, 8 + header_len)


def write_tensors(path, tensors, metadata=None):
    """Write a name -> array mapping as a tensor container.

    Arrays must be float16/32/64.  Tensors are laid out in sorted name order
    so equal inputs produce byte-identical files.
    """
    entries = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        kind = arr.dtype.type
        if kind not in _TAG_FOR_KIND:
            raise ValueError(
                f"tensor '{name}': unsupported dtype {arr.dtype}; "
                "expected float16, float32, or float64"
            )
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries[name] = {
            "dtype": _TAG_FOR_KIND[kind],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payloads.append(raw)
        offset += len(raw)
    if metadata is not None:
        entries["__metadata__"] = dict(metadata)
    header = json.dumps(entries, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


@dataclass
class TensorRecord:
    """One quantized tensor: packed backbone, float32 adapters, metadata."""

    q: QuantizedMatrix
    a: np.ndarray
    b: np.ndarray
    steps: int
    variant: str
    objective: float

    def validate(self):
        self.q.validate()
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        if a.dtype != np.float32 or b.dtype != np.float32:
            raise FormatError("adapter factors must be float32")
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
            raise FormatError(
                f"adapter shapes {a.shape} and {b.shape} are inconsistent"
            )
        if a.shape[0] != self.q.rows or b.shape[0] != self.q.cols:
            raise FormatError(
                f"adapter shapes {a.shape} and {b.shape} do not match "
                f"backbone shape {self.q.rows}x{self.q.cols}"
            )
        if self.variant not in _VARIANT_TAGS:
            raise FormatError(f"unknown variant {self.variant!r}")
        if self.steps < 0:
            raise FormatError(f"negative step count {self.steps}")


@dataclass
class QuantizedCheckpoint:
    """An ordered set of TensorRecords plus the plan echo they came from."""

    records: dict
    plan_echo: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def make_record(w, q: QuantizedMatrix, a, b, steps: int, variant: str) -> TensorRecord:
    """Cast adapters to float32 and store the objective at stored precision.

    The recorded objective is recomputed from the float32 adapters and packed
    backbone, so re-deriving it from the written file reproduces it up to
    BLAS rounding.
    """
    a32 = np.ascontiguousarray(a, dtype=np.float32)
    b32 = np.ascontiguousarray(b, dtype=np.float32)
    approx = dequantize_matrix(q) + a32.astype(np.float64) @ b32.astype(np.float64).T
    obj = float(np.linalg.norm(np.asarray(w, dtype=np.float64) - approx))
    return TensorRecord(q=q, a=a32, b=b32, steps=steps, variant=variant, objective=obj)


_VARIANT_TAGS = {"standard": 0, "swapped": 1}
_TAG_VARIANTS = {tag: name for name, tag in _VARIANT_TAGS.items()}
_SCALE_TAGS = {"minmax": 0, "absmax": 1}


def write_checkpoint(path, ckpt: QuantizedCheckpoint):
    """Serialize a checkpoint; equal inputs produce byte-identical files."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<H", ckpt.version)
    plan_raw = json.dumps(ckpt.plan_echo, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    out += struct.pack("<I", len(plan_raw))
    out += plan_raw
    out += struct.pack("<I", len(ckpt.records))
    for name, rec in ckpt.records.items():
        rec.validate()
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        out += struct.pack("<H", len(raw_name))
        out += raw_name
        q = rec.q
        out += struct.pack("<III", q.rows, q.cols, q.block_size)
        out += codebook_to_bytes(q.codebook)
        scales = np.ascontiguousarray(q.scales, dtype="<f4")
        scale_tag = _SCALE_TAGS[q.codebook.normalization.value]
        out += struct.pack("<BI", scale_tag, q.block_count)
        out += scales.tobytes()
        out += struct.pack("<I", len(q.packed_codes))
        out += q.packed_codes
        rank = rec.a.shape[1]
        out += struct.pack("<I", rank)
        out += np.ascontiguousarray(rec.a, dtype="<f4").tobytes()
        out += np.ascontiguousarray(rec.b, dtype="<f4").tobytes()
        out += struct.pack("<IBd", rec.steps, _VARIANT_TAGS[rec.variant], rec.objective)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Cursor:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}")
        view = self.buf[self.pos : self.pos + n]
        self.pos += n
        return view

    def unpack(self, fmt, what):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return vals[0] if len(vals) == 1 else vals


def read_checkpoint(path) -> QuantizedCheckpoint:
    """Parse and validate a checkpoint file written by write_checkpoint."""
    with open(path, "rb") as fh:
        buf = fh.read()
    cur = _Cursor(buf)
    if bytes(cur.take(4, "magic")) != CHECKPOINT_MAGIC:
        raise FormatError("not a quantized checkpoint (bad magic)")
    version = cur.unpack("<H", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    plan_len = cur.unpack("<I", "plan length")
    plan_raw = cur.take(plan_len, "plan echo")
    try:
        plan_echo = json.loads(bytes(plan_raw).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"plan echo is not valid JSON: {exc}") from exc
    n_tensors = cur.unpack("<I", "tensor count")
    records = {}
    for _ in range(n_tensors):
        name_len = cur.unpack("<H", "name length")
        try:
            name = bytes(cur.take(name_len, "tensor name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid UTF-8") from exc
        rows, cols, block_size = cur.unpack("<III", f"'{name}' header")
        rest = memoryview(buf)[cur.pos :]
        cb, consumed = codebook_from_bytes(rest)
        cur.pos += consumed
        scale_tag, n_blocks = cur.unpack("<BI", f"'{name}' scale header")
        if scale_tag not in (0, 1):
            raise FormatError(f"tensor '{name}': unknown scale kind {scale_tag}")
        per_block = 2 if scale_tag == 0 else 1
        raw = cur.take(4 * per_block * n_blocks, f"'{name}' scales")
        scales = np.frombuffer(raw, dtype="<f4").copy()
        if per_block == 2:
            scales = scales.reshape(n_blocks, 2)
        code_len = cur.unpack("<I", f"'{name}' code length")
        packed = bytes(cur.take(code_len, f"'{name}' codes"))
        rank = cur.unpack("<I", f"'{name}' rank")
        a_raw = cur.take(4 * rows * rank, f"'{name}' A factor")
        b_raw = cur.take(4 * cols * rank, f"'{name}' B factor")
        steps, variant_tag, objective = cur.unpack("<IBd", f"'{name}' metadata")
        if variant_tag not in _TAG_VARIANTS:
            raise FormatError(f"tensor '{name}': unknown variant tag {variant_tag}")
        if rank < 1:
            raise FormatError(f"tensor '{name}': invalid rank {rank}")
        q = QuantizedMatrix(
            rows=rows,
            cols=cols,
            block_size=block_size,
            codebook=cb,
            packed_codes=packed,
            scales=scales,
        )
        rec = TensorRecord(
            q=q,
            a=np.frombuffer(a_raw, dtype="<f4").copy().reshape(rows, rank),
            b=np.frombuffer(b_raw, dtype="<f4").copy().reshape(cols, rank),
            steps=steps,
            variant=_TAG_VARIANTS[variant_tag],
            objective=objective,
        )
        try:
            rec.validate()
        except FormatError as exc:
            raise FormatError(f"tensor '{name}': {exc}") from exc
        if name in records:
            raise FormatError(f"duplicate tensor '{name}' in checkpoint")
        records[name] = rec
    if cur.pos != len(buf):
        raise FormatError("checkpoint has trailing bytes")
    return QuantizedCheckpoint(records=records, plan_echo=plan_echo, version=version)


def reconstruct_backbone(ckpt: QuantizedCheckpoint, name: str) -> np.ndarray:
    """Dequantize one stored backbone to float64."""
    return dequantize_matrix(ckpt.records[name].q)


def export_adapters(path, ckpt: QuantizedCheckpoint):
    """Write all adapter factors as plain float32 tensors in a container."""
    tensors = {}
    for name, rec in ckpt.records.items():
        tensors[f"{name}.lora_a"] = rec.a
        tensors[f"{name}.lora_b"] = rec.b
    write_tensors(path, tensors)
