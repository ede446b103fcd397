"""Checkpoint serialization.

File layout: 8-byte magic "ALTCKPT1", an 8-byte little-endian length, a
UTF-8 JSON metadata block (format version, model descriptor, training
metadata, and the tensor name/shape table), then the tensor payloads as
little-endian float64 in exactly the declared order. Round trips are
bit-exact and re-saving a loaded checkpoint reproduces the bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ALTCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Named parameter-tensor map plus architecture metadata; treat as
    immutable once written."""

    model_kind: str
    model_spec: dict
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def param_count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def checkpoint_from_model(model, metadata: dict | None = None) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in model.parameters().items()}
    desc = model.describe()
    return Checkpoint(model_kind=desc.pop("kind"), model_spec=desc,
                      tensors=tensors, metadata=dict(metadata or {}))


def save_checkpoint(ckpt_or_model, path, metadata: dict | None = None) -> Checkpoint:
    """Write a checkpoint (or snapshot a model first) to ``path``."""
    if isinstance(ckpt_or_model, Checkpoint):
        ckpt = ckpt_or_model
    else:
        ckpt = checkpoint_from_model(ckpt_or_model, metadata)
    header = {
        "format_version": ckpt.format_version,
        "model_kind": ckpt.model_kind,
        "model_spec": ckpt.model_spec,
        "metadata": ckpt.metadata,
        "tensors": [{"name": name, "shape": list(arr.shape)}
                    for name, arr in ckpt.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in ckpt.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise FormatError(f"checkpoint {path} is truncated before the header")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"checkpoint {path} has bad magic {raw[:8]!r}")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + header_len
    if len(raw) < header_end:
        raise FormatError(f"checkpoint {path} is truncated inside the header")
    try:
        header = json.loads(raw[len(MAGIC) + 8: header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint {path} header is not valid JSON: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"checkpoint {path} has unsupported format version {version!r}")

    entries = header["tensors"]
    payload = raw[header_end:]
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in entries) * 8
    if len(payload) != expected:
        raise FormatError(
            f"checkpoint {path} payload is {len(payload)} bytes, expected {expected}")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(shape)
        offset += count * 8
    return Checkpoint(model_kind=header["model_kind"], model_spec=header["model_spec"],
                      tensors=tensors, metadata=header["metadata"],
                      format_version=version)


def restore_model(ckpt: Checkpoint, graph):
    """Rebuild a model on ``graph`` and load the stored tensors into it."""
    from .baselines import BaselineNet, BaselineSpec
    from .network import AltConvLSTMNet, NetSpec

    if ckpt.model_kind == "alt":
        spec = NetSpec.from_dict(ckpt.model_spec["net_spec"])
        model = AltConvLSTMNet(graph, spec, seed=int(ckpt.model_spec.get("seed", 0)))
    elif ckpt.model_kind.startswith("convlstm-"):
        bspec = BaselineSpec.from_dict(ckpt.model_spec["baseline_spec"])
        model = BaselineNet(graph, bspec, seed=int(ckpt.model_spec.get("seed", 0)))
    else:
        raise FormatError(f"unknown model kind {ckpt.model_kind!r} in checkpoint")

    params = model.parameters()
    if set(params) != set(ckpt.tensors):
        missing = set(params) ^ set(ckpt.tensors)
        raise FormatError(f"checkpoint tensor names do not match the model: {sorted(missing)}")
    for name, t in params.items():
        stored = ckpt.tensors[name]
        if stored.shape != t.data.shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {stored.shape}, model needs {t.data.shape}")
        t.data[...] = stored
    return model
