"""Model checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"TPLNCKPT"
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 length H of the JSON header
    bytes 20..    H bytes of UTF-8 JSON, keys sorted
    then          parameter blobs, float64 little-endian, C order,
                  concatenated in the order listed in the header

The JSON header holds ``{"layers": [...], "seed": int, "sections": {...}}``.
Each layer entry is ``{"kind", "config", "params": [{"name", "shape",
"offset", "nbytes"}]}``, offsets relative to the start of the blob area.
A ``filterbank`` section, when present, records a blob reference plus
the bank's sample rate and training metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import Malformed
from .layers import Conv1d, CosineConv1d, Dense, MaxPool1d, OneMaxPool, ReLU
from .model import ModelGraph

MAGIC = b"TPLNCKPT"
VERSION = 1


def _layer_from(kind: str, config: dict, params: dict):
    if kind == "conv":
        return Conv1d(params["weight"], config["stride"])
    if kind == "cosine_conv":
        return CosineConv1d(params["weight"], config["mode"])
    if kind == "maxpool":
        return MaxPool1d(config["window"])
    if kind == "onemax":
        return OneMaxPool()
    if kind == "relu":
        return ReLU()
    if kind == "dense":
        return Dense(params["weight"], params["bias"])
    raise Malformed(f"unknown layer kind {kind!r}")


def dumps(model: ModelGraph | None, sections: dict | None = None) -> bytes:
    """Serialise a model (and optional extra array sections) to bytes.

    ``sections`` maps a section name to ``(array, metadata_dict)``.
    """
    blobs: list[bytes] = []
    offset = 0

    def add(arr) -> dict:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        ref = {"shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
        return ref

    header: dict = {"layers": [], "seed": 0, "sections": {}}
    if model is not None:
        header["seed"] = int(model.seed)
        for layer in model.layers:
            entry = {"kind": layer.kind, "config": layer.config(), "params": []}
            for name, value in layer.params.items():
                entry["params"].append({"name": name, **add(value)})
            header["layers"].append(entry)
    for name, (arr, meta) in (sections or {}).items():
        header["sections"][name] = {"blob": add(arr), "meta": meta}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(text)) + text + b"".join(blobs)


def loads(data: bytes):
    """Inverse of :func:`dumps`: returns ``(model or None, sections)``."""
    if data[:8] != MAGIC:
        raise Malformed("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise Malformed(f"unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen

    def get(ref) -> np.ndarray:
        start = base + ref["offset"]
        raw = data[start : start + ref["nbytes"]]
        if len(raw) != ref["nbytes"]:
            raise Malformed("checkpoint truncated")
        return np.frombuffer(raw, dtype="<f8").reshape(ref["shape"]).astype(np.float64)

    model = None
    if header["layers"]:
        layers = []
        for entry in header["layers"]:
            params = {p["name"]: get(p) for p in entry["params"]}
            layers.append(_layer_from(entry["kind"], entry["config"], params))
        model = ModelGraph(layers, header["seed"])
    sections = {name: (get(s["blob"]), s["meta"]) for name, s in header["sections"].items()}
    return model, sections


def save(path, model: ModelGraph | None, sections: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model, sections))


def load(path):
    return loads(Path(path).read_bytes())
