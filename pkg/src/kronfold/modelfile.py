"""JSON model files.

A model file is one JSON document::

    {"schema_version": 1, "method": ..., "dims": {...}, "flags": {...},
     "arrays": {name: {"shape": [...], "data": [row-major floats]}},
     "history": [...], "singular_values": [...], "seed": ..., "fingerprint": ...}

Floats are written with Python's shortest round-trip repr, so loading a file
restores every array bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .glram import GlramModel
from .kronecker import KronPairList
from .mpglram import MpglramConfig, MpglramModel
from .svd_baseline import SvdModel

SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    pass


def _pack(arr):
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}


def _unpack(block, name):
    try:
        shape = tuple(int(s) for s in block["shape"])
        data = np.asarray(block["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"array {name!r} is malformed") from exc
    if data.size != int(np.prod(shape)):
        raise ModelFileError(f"array {name!r} has {data.size} values for shape {shape}")
    return data.reshape(shape)


def model_document(model, fingerprint, seed=0, method=None):
    """Build the JSON-ready dict for a fitted model or a bare pair list."""
    if isinstance(model, SvdModel):
        n1, n2 = model.shape
        arrays = {"W": _pack(model.W)}
        if model.mean is not None:
            arrays["mean"] = _pack(model.mean)
        return _document(method or "svd", (n1, n2, 0, 0, 0, model.d), model.centered, arrays,
                         seed, fingerprint, singular_values=model.singular_values.tolist(),
                         residual_energy=model.residual_energy)
    if isinstance(model, GlramModel):
        n1, n2, k1, k2 = model.dims
        arrays = {"L": _pack(model.L), "R": _pack(model.R), "cores": _pack(model.cores)}
        return _document(method or "glram", (n1, n2, k1, k2, 1, k1 * k2), False, arrays, seed,
                         fingerprint, history=list(model.objective_history),
                         iterations=model.iterations)
    if isinstance(model, MpglramModel):
        n1, n2, k1, k2 = model.dims
        arrays = {"Ls": _pack(model.pairs.Ls), "Rs": _pack(model.pairs.Rs),
                  "cores": _pack(model.cores)}
        extra = {}
        if model.config is not None:
            extra["config"] = {
                "k": model.config.k, "k1": model.config.k1, "k2": model.config.k2,
                "outer_iters": model.config.outer_iters, "tol": model.config.tol,
                "seed": model.config.seed, "init_mode": model.config.init_mode,
                "ridge_rel": model.config.ridge_rel, "update_order": model.config.update_order,
            }
        return _document(method or "mpglram", (n1, n2, k1, k2, model.k, k1 * k2), False, arrays,
                         seed, fingerprint, history=list(model.objective_history),
                         iterations=model.sweeps, **extra)
    if isinstance(model, KronPairList):
        n1, n2, k1, k2 = model.dims
        arrays = {"Ls": _pack(model.Ls), "Rs": _pack(model.Rs)}
        return _document(method or "kron-pairs", (n1, n2, k1, k2, model.k, k1 * k2), False,
                         arrays, seed, fingerprint)
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _document(method, dims, centered, arrays, seed, fingerprint, **extra):
    n1, n2, k1, k2, k_pairs, d = dims
    doc = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "dims": {"n1": n1, "n2": n2, "k1": k1, "k2": k2, "k_pairs": k_pairs, "d": d},
        "flags": {"centered": bool(centered)},
        "arrays": arrays,
        "seed": int(seed),
        "fingerprint": fingerprint,
    }
    doc.update(extra)
    return doc


def save_model(model, path, fingerprint, seed=0, method=None):
    doc = model_document(model, fingerprint, seed, method)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_document(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a JSON document") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFileError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    for key in ("method", "dims", "arrays", "fingerprint"):
        if key not in doc:
            raise ModelFileError(f"{path}: missing field {key!r}")
    return doc


def model_from_document(doc):
    """Rebuild the in-memory model described by a model document."""
    arrays = {name: _unpack(block, name) for name, block in doc["arrays"].items()}
    dims = doc["dims"]
    method = doc["method"]
    try:
        if "W" in arrays:
            W = arrays["W"]
            if W.shape != (dims["n1"] * dims["n2"], dims["d"]):
                raise ModelFileError(f"W has shape {W.shape}, dims say {dims}")
            return SvdModel(W, np.asarray(doc.get("singular_values", []), dtype=float),
                            (dims["n1"], dims["n2"]), arrays.get("mean"),
                            float(doc.get("residual_energy", 0.0)))
        if "L" in arrays:
            return GlramModel(arrays["L"], arrays["R"], arrays["cores"],
                              list(doc.get("history", [])), int(doc.get("iterations", 0)))
        pairs = KronPairList(arrays["Ls"], arrays["Rs"])
        if pairs.dims != (dims["n1"], dims["n2"], dims["k1"], dims["k2"]) or pairs.k != dims["k_pairs"]:
            raise ModelFileError(f"pair arrays do not match dims {dims}")
        if "cores" not in arrays:
            return pairs
        config = MpglramConfig(**doc["config"]) if "config" in doc else None
        return MpglramModel(pairs, arrays["cores"], list(doc.get("history", [])), config,
                            int(doc.get("iterations", 0)))
    except KeyError as exc:
        raise ModelFileError(f"{method} model is missing {exc}") from exc


def load_model(path):
    return model_from_document(load_document(path))
