"""Binary model files.

Layout (little-endian)::

    b"HPPI" | u16 version | u16 layer count
    u32 length | JSON metadata (name, inputs, labels, input shape, meta)
    per layer:
        u16 length | UTF-8 name
        u8 type tag (index into LAYER_KINDS, high bit set when any tensor is int8)
        u32 length | JSON {"inputs": [...], "hyper": {...}}
        u8 alias flag, then u16 length | source layer name when set
        otherwise u8 tensor count and per tensor:
            u16 length | tensor name
            u8 dtype (0 = f64, 1 = int8 preceded by an f64 scale)
            u8 ndim | u32 dims... | u32 payload bytes | raw payload

JSON blocks are written with sorted keys and no whitespace so the same graph
always serialises to the same bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import LAYER_KINDS, LayerSpec, ModelGraph
from .quant import QuantizedTensor, dequantize, quantize_tensor_int8

MAGIC = b"HPPI"
VERSION = 1
QUANT_FLAG = 0x80
F64, INT8 = 0, 1

# tensors left in float64 by weight-only quantization
FLOAT_KEEP = frozenset({"b", "db", "pb", "gamma", "beta", "running_mean", "running_var"})


class ModelFormatError(ValueError):
    """Base class for malformed model files."""


class BadMagic(ModelFormatError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


class TruncatedTensor(ModelFormatError):
    pass


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _str16(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def quantizes(pname: str) -> bool:
    return pname not in FLOAT_KEEP


def _tensor_bytes(pname: str, arr: np.ndarray, q: QuantizedTensor | None) -> bytes:
    out = [_str16(pname)]
    if q is None:
        out.append(struct.pack("<B", F64))
        data = np.ascontiguousarray(arr, dtype="<f8")
    else:
        out.append(struct.pack("<Bd", INT8, q.scale))
        data = np.ascontiguousarray(q.values, dtype="i1")
    payload = data.tobytes()
    out.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
    out.append(struct.pack("<I", len(payload)) + payload)
    return b"".join(out)


def _cached_quant(graph: ModelGraph, layer: str, pname: str, arr: np.ndarray) -> QuantizedTensor:
    """Reuse the int8 record a tensor was loaded from if it still holds those values."""
    q = graph.qcache.get((layer, pname))
    if q is not None and np.array_equal(dequantize(q), arr):
        return q
    return quantize_tensor_int8(arr)


def to_bytes(graph: ModelGraph, quantized: bool = False) -> bytes:
    header = {
        "name": graph.name,
        "inputs": list(graph.inputs),
        "class_labels": list(graph.class_labels),
        "input_shape": list(graph.input_shape),
        "meta": graph.meta,
    }
    meta = _json(header)
    chunks = [MAGIC, struct.pack("<HH", VERSION, len(graph.layers)), struct.pack("<I", len(meta)), meta]
    for spec in graph.layers:
        tensors = list(graph.params.get(spec.name, {}).items())
        alias = spec.name in graph.alias_of
        is_q = quantized and not alias and any(quantizes(p) for p, _ in tensors)
        tag = LAYER_KINDS.index(spec.kind) | (QUANT_FLAG if is_q else 0)
        block = _json({"inputs": list(spec.inputs), "hyper": spec.hyper})
        chunks += [_str16(spec.name), struct.pack("<B", tag), struct.pack("<I", len(block)), block]
        if alias:
            chunks += [struct.pack("<B", 1), _str16(graph.alias_of[spec.name])]
            continue
        chunks.append(struct.pack("<BB", 0, len(tensors)))
        for pname, arr in sorted(tensors):
            q = _cached_quant(graph, spec.name, pname, arr) if quantized and quantizes(pname) else None
            chunks.append(_tensor_bytes(pname, arr, q))
    return b"".join(chunks)


def save_model(graph: ModelGraph, path: str | Path, quantized: bool = False) -> int:
    """Write ``graph`` to ``path``; returns the number of bytes written."""
    data = to_bytes(graph, quantized)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str = "header") -> bytes:
        if self.pos + n > len(self.data):
            err = TruncatedTensor if what == "tensor" else ModelFormatError
            raise err(f"file ends inside {what} ({n} bytes needed at offset {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str = "header"):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def str16(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def json32(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))


def from_bytes(data: bytes, base: ModelGraph | None = None) -> ModelGraph:
    """Parse a model file. Alias records are resolved against ``base``'s tensors."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic("not a model file (bad magic bytes)")
    version, n_layers = r.unpack("<HH")
    if version != VERSION:
        raise UnsupportedVersion(f"model file version {version} is not supported (expected {VERSION})")
    header = r.json32()
    layers, params, alias_of, qcache = [], {}, {}, {}
    for _ in range(n_layers):
        name = r.str16()
        (tag,) = r.unpack("<B")
        kind_index = tag & ~QUANT_FLAG
        if kind_index >= len(LAYER_KINDS):
            raise ModelFormatError(f"unknown layer type tag {tag}")
        block = r.json32()
        layers.append(LayerSpec(name, LAYER_KINDS[kind_index], tuple(block["inputs"]), block["hyper"]))
        (is_alias,) = r.unpack("<B")
        if is_alias:
            source = r.str16()
            if base is None or source not in base.params:
                raise ModelFormatError(f"layer {name!r} aliases {source!r}, which the base graph does not provide")
            params[name] = base.params[source]
            alias_of[name] = source
            continue
        (count,) = r.unpack("<B")
        tensors = {}
        for _ in range(count):
            pname = r.str16()
            (dtype,) = r.unpack("<B", "tensor")
            scale = r.unpack("<d", "tensor")[0] if dtype == INT8 else None
            if dtype not in (F64, INT8):
                raise ModelFormatError(f"unknown tensor dtype {dtype}")
            (ndim,) = r.unpack("<B", "tensor")
            dims = r.unpack(f"<{ndim}I", "tensor")
            (nbytes,) = r.unpack("<I", "tensor")
            expected = int(np.prod(dims, dtype=np.int64)) * (8 if dtype == F64 else 1)
            if nbytes != expected:
                raise TruncatedTensor(f"tensor {name}.{pname}: dims {dims} need {expected} bytes, record declares {nbytes}")
            raw = r.take(nbytes, "tensor")
            if dtype == F64:
                tensors[pname] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
            else:
                q = QuantizedTensor(scale, np.frombuffer(raw, dtype="i1").reshape(dims).copy())
                tensors[pname] = dequantize(q)
                qcache[(name, pname)] = q
        if tensors:
            params[name] = tensors
    if r.pos != len(data):
        raise TruncatedTensor(f"{len(data) - r.pos} bytes after the last record")
    return ModelGraph(
        header["name"],
        layers,
        params,
        tuple(header["inputs"]),
        tuple(header["class_labels"]),
        tuple(header["input_shape"]),
        alias_of,
        header["meta"],
        qcache,
    )


def load_model(path: str | Path, base: ModelGraph | None = None) -> ModelGraph:
    return from_bytes(Path(path).read_bytes(), base)
