"""Versioned binary checkpoints and content hashing.

One envelope for both model kinds: magic, format version, kind byte, a JSON
header (layer sizes, schema hash, block order), then row-major little-endian
float64 parameter blocks exactly in header order. Byte-identical for
identical models, which is what the determinism and freeze-discipline
checks hash.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .adapter import MlpModel
from .ebm import DbmModel, RbmLayer

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "save_dbm",
    "load_dbm",
    "save_mlp",
    "load_mlp",
    "file_hash",
    "array_hash",
    "config_hash",
    "wm_info",
]

MAGIC = b"PWMC"
FORMAT_VERSION = 1
_KIND_DBM = b"D"
_KIND_MLP = b"A"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_hash(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_envelope(path, kind: bytes, header: dict, blocks: list) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(kind)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for block in blocks:
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_envelope(path, expect_kind: bytes):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a panelwm checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        kind = f.read(1)
        if kind != expect_kind:
            raise ValueError(f"{path}: checkpoint kind {kind!r}, expected {expect_kind!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    return header, np.frombuffer(payload, dtype="<f8")


def save_dbm(model: DbmModel, path) -> None:
    sizes = list(model.layer_sizes)
    header = {
        "layer_sizes": sizes,
        "frozen": bool(model.frozen),
        "schema_hash": model.schema_hash,
        "blocks": ["b_v"]
        + [name for i in range(1, len(sizes)) for name in (f"W{i}", f"b{i}")],
    }
    blocks = [model.visible_bias]
    for ell in range(1, model.n_hidden_layers + 1):
        blocks += [model.weight(ell), model.hidden_bias(ell)]
    _write_envelope(path, _KIND_DBM, header, blocks)


def load_dbm(path) -> DbmModel:
    header, flat = _read_envelope(path, _KIND_DBM)
    sizes = header["layer_sizes"]
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = flat[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    b_v = take((sizes[0],))
    layers = []
    lower_bias = b_v
    for i in range(1, len(sizes)):
        w = take((sizes[i - 1], sizes[i]))
        b = take((sizes[i],))
        layers.append(RbmLayer(w, lower_bias, b))
        lower_bias = np.zeros(sizes[i])  # upper layers carry no lower bias of their own
    if pos != flat.size:
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return DbmModel(layers, frozen=header["frozen"], schema_hash=header["schema_hash"])


def save_mlp(model: MlpModel, path) -> None:
    header = {
        "dims": list(model.dims),
        "input_kind": model.input_kind,
        "schema_hash": model.schema_hash,
        "blocks": [name for i in range(len(model.weights)) for name in (f"W{i}", f"b{i}")],
    }
    blocks = []
    for w, b in zip(model.weights, model.biases):
        blocks += [w, b]
    _write_envelope(path, _KIND_MLP, header, blocks)


def load_mlp(path) -> MlpModel:
    header, flat = _read_envelope(path, _KIND_MLP)
    dims = header["dims"]
    pos = 0
    weights, biases = [], []
    for lo, hi in zip(dims, dims[1:]):
        size = lo * hi
        weights.append(flat[pos : pos + size].reshape(lo, hi).copy())
        pos += size
        biases.append(flat[pos : pos + hi].copy())
        pos += hi
    if pos != flat.size:
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return MlpModel(weights, biases, header["input_kind"], header["schema_hash"])


def wm_info(path) -> dict:
    """Layer sizes, parameter norms and schema hash of a world-model checkpoint."""
    model = load_dbm(path)
    norms = {"b_v": float(np.linalg.norm(model.visible_bias))}
    for ell in range(1, model.n_hidden_layers + 1):
        norms[f"W{ell}"] = float(np.linalg.norm(model.weight(ell)))
        norms[f"b{ell}"] = float(np.linalg.norm(model.hidden_bias(ell)))
    return {
        "layer_sizes": list(model.layer_sizes),
        "frozen": bool(model.frozen),
        "schema_hash": model.schema_hash,
        "param_norms": norms,
        "checkpoint_sha256": file_hash(path),
    }
