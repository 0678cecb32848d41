"""Binary checkpoint format (little-endian).

    magic        4 bytes  b"BGTF"
    version      u32
    config_len   u64, then config_len bytes of canonical JSON (UTF-8, sorted keys)
    n_entries    u64
    per entry:   u32 name_len, name (UTF-8), u32 rank, rank x u64 dims,
                 prod(dims) x f64 payload

Tree models store their node arrays as float64 tensors named
``tree.<i>.<field>``; integer fields are exact in float64 at these sizes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import FeatureSpec, Scaler
from .numerics import Tensor
from .pipeline import FittedModel, NEURAL_KINDS
from .regressor import HybridConfig, ModelParams
from . import trees

MAGIC = b"BGTF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=True).encode("utf-8")


def _tree_tensors(prefix: str, t: trees.Tree) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": getattr(t, k).astype(np.float64)
            for k in ("feature", "threshold", "left", "right", "value")}


def _tree_from(prefix: str, tensors: dict[str, np.ndarray]) -> trees.Tree:
    ints = {k: tensors[f"{prefix}.{k}"].astype(np.int64) for k in ("feature", "left", "right")}
    return trees.Tree(threshold=tensors[f"{prefix}.threshold"].copy(),
                      value=tensors[f"{prefix}.value"].copy(), **ints)


def _payload(model: FittedModel) -> tuple[dict, dict[str, np.ndarray]]:
    config = {"kind": model.kind, "options": model.options, "feature_spec": model.spec.to_dict(),
              "scaler": model.scaler.to_dict(), "split": model.split}
    if model.kind in NEURAL_KINDS:
        return config, {k: t.data for k, t in model.params.named().items()}
    m = model.tree
    tensors: dict[str, np.ndarray] = {}
    if model.kind == "cart":
        tensors.update(_tree_tensors("tree.0", m.tree))
    else:
        for i, t in enumerate(m.trees):
            tensors.update(_tree_tensors(f"tree.{i}", t))
    config["extra"] = {"n_features": m.n_features, "n_trees": 1 if model.kind == "cart" else len(m.trees)}
    if model.kind == "rf":
        config["extra"].update(seeds=m.seeds, feature_fraction=m.feature_fraction)
    elif model.kind == "adaboost":
        config["extra"].update(fallback=m.fallback, mean_losses=m.mean_losses)
        tensors["adaboost.weights"] = np.asarray(m.weights, dtype=np.float64)
    elif model.kind == "gbt":
        config["extra"].update(base=m.base, eta=m.eta)
    return config, tensors


def dumps(model: FittedModel) -> bytes:
    config, tensors = _payload(model)
    blob = _canonical(config)
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(blob)), blob,
           struct.pack("<Q", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    return b"".join(out)


def save(model: FittedModel, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> FittedModel:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (clen,) = r.unpack("<Q")
    config = json.loads(r.take(clen).decode("utf-8"))
    (count,) = r.unpack("<Q")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after tensor table")

    kind = config["kind"]
    spec = FeatureSpec.from_dict(config["feature_spec"])
    scaler = Scaler.from_dict(config["scaler"])
    model = FittedModel(kind, spec, scaler, config["options"], config.get("split", {}))
    if kind in NEURAL_KINDS:
        cfg = HybridConfig(**config["options"])
        named = {k: Tensor(v, name=k) for k, v in tensors.items()}
        model.params = ModelParams.from_named(named, kind, cfg)
        return model

    extra = config["extra"]
    ts = [_tree_from(f"tree.{i}", tensors) for i in range(extra["n_trees"])]
    F = extra["n_features"]
    if kind == "cart":
        model.tree = trees.CartModel(ts[0], F)
    elif kind == "rf":
        model.tree = trees.ForestModel(ts, F, extra["seeds"], extra["feature_fraction"])
    elif kind == "adaboost":
        model.tree = trees.AdaBoostModel(ts, list(tensors["adaboost.weights"]), F,
                                         extra["mean_losses"], extra["fallback"])
    elif kind == "gbt":
        model.tree = trees.BoostModel(ts, extra["base"], extra["eta"], F)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    return model


def load(path: str | Path) -> FittedModel:
    return loads(Path(path).read_bytes())
