"""Versioned JSON checkpoint container with base64 float64 tensors.

Byte-stable: keys are sorted and tensors are stored as raw little-endian
bytes, so save(load(x)) reproduces the file exactly.
"""
from __future__ import annotations

import base64
import json

import numpy as np

FORMAT = "dance-checkpoint"
VERSION = 1


def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    doc = {"format": FORMAT, "version": VERSION, "meta": meta or {},
           "tensors": {k: _encode(v) for k, v in tensors.items()}}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(data)
    if doc.get("format") != FORMAT:
        raise ValueError("not a dance checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return {k: _decode(v) for k, v in doc["tensors"].items()}, doc["meta"]


def save_checkpoint(path, tensors, meta=None) -> bytes:
    data = dumps(tensors, meta)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())


def pack_training_state(module, optimizer=None, rng=None, meta: dict | None = None) -> bytes:
    """Parameters, BN buffers, optimizer slots and generator state in one container."""
    tensors = {f"model.{k}": v for k, v in module.state_dict().items()}
    if optimizer is not None:
        tensors.update({f"optim.{k}": np.asarray(v, dtype=float)
                        for k, v in optimizer.state_dict().items()})
    info = dict(meta or {})
    if rng is not None:
        info["rng_state"] = rng.bit_generator.state
    return dumps(tensors, info)


def unpack_training_state(data: bytes, module, optimizer=None, rng=None) -> dict:
    """Inverse of :func:`pack_training_state`; restores in place and returns the meta dict."""
    tensors, meta = loads(data)
    module.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    if optimizer is not None:
        optimizer.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("optim.")})
    if rng is not None:
        if "rng_state" not in meta:
            raise ValueError("checkpoint holds no generator state")
        rng.bit_generator.state = meta["rng_state"]
    return meta
