"""Checkpoint directories: ``manifest.json`` plus a named-tensor ``tensors.bin``.

Each record of ``tensors.bin`` is: u32 little-endian name length, the UTF-8
name, u8 rank, u32 little-endian extents, then the values as little-endian
float32 in row-major order.  Records are written in name order so that
re-serializing a loaded checkpoint reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TripleStore
from .errors import CheckpointError
from .model import KBCModel, build_model, model_spec

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
TENSORS = "tensors.bin"
REQUIRED_KEYS = ("format_version", "model", "encoder", "dim", "n_entities", "n_relations", "conve_reshape", "words")
GRU_TENSORS = ("words", "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h", "fallback")
BN_TENSORS = ("weight", "bias", "running_mean", "running_var")


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]

    @property
    def model_kind(self) -> str:
        return self.manifest["model"]

    @property
    def encoder_kind(self) -> str:
        return self.manifest["encoder"]

    @property
    def dim(self) -> int:
        return self.manifest["dim"]

    @property
    def words(self) -> list[str]:
        return self.manifest["words"]

    def scorer_tensors(self) -> dict[str, np.ndarray]:
        return {k[len("scorer."):]: v for k, v in self.tensors.items() if k.startswith("scorer.")}


def relation_dim(manifest: dict) -> int:
    return 2 * manifest["dim"] if manifest["model"] == "5star" else manifest["dim"]


def expected_shapes(manifest: dict) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every tensor a checkpoint with this manifest holds."""
    d = manifest["dim"]
    rd = relation_dim(manifest)
    shapes: dict[str, tuple[int, ...]] = {}
    if manifest["encoder"] == "noencoder":
        shapes["entity_encoder.table"] = (manifest["n_entities"], d)
        shapes["relation_encoder.table"] = (manifest["n_relations"], rd)
    elif manifest["encoder"] == "gru":
        V, dw = len(manifest["words"]), manifest["word_dim"]
        for prefix, h in (("entity_encoder", d), ("relation_encoder", rd)):
            shapes[f"{prefix}.words"] = (V, dw)
            for g in ("z", "r", "h"):
                shapes[f"{prefix}.W_{g}"] = (dw, h)
                shapes[f"{prefix}.U_{g}"] = (h, h)
                shapes[f"{prefix}.b_{g}"] = (h,)
            shapes[f"{prefix}.fallback"] = (h,)
    else:
        raise CheckpointError(f"unknown encoder kind {manifest['encoder']!r}")

    def bn(name, n):
        for k in BN_TENSORS:
            shapes[f"scorer.{name}.{k}"] = (n,)

    kind = manifest["model"]
    if kind == "tucker":
        shapes["scorer.W"] = (d, d, d)
        bn("bn0", d)
        bn("bn1", d)
    elif kind == "conve":
        rows, cols = manifest["conve_reshape"]
        C = manifest.get("conve_channels") or 32
        bn("bn0", 1)
        shapes["scorer.conv.weight"] = (C, 1, 3, 3)
        shapes["scorer.conv.bias"] = (C,)
        bn("bn1", C)
        shapes["scorer.fc.weight"] = (C * 2 * rows * cols, d)
        shapes["scorer.fc.bias"] = (d,)
        bn("bn2", d)
        shapes["scorer.b"] = (manifest["n_entities"],)
    elif kind != "5star":
        raise CheckpointError(f"unknown model kind {kind!r}")
    return shapes


def checkpoint_from_model(model: KBCModel, extra: dict | None = None) -> Checkpoint:
    manifest = {"format_version": FORMAT_VERSION}
    manifest.update(model_spec(model))
    if extra:
        manifest.update(extra)
    tensors = {k: np.asarray(v, dtype=np.float32) for k, v in model.state_dict().items()}
    return Checkpoint(manifest, tensors)


def _encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def _decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    tensors = {}
    pos = 0
    n = len(blob)

    def need(count, what):
        if pos + count > n:
            raise CheckpointError(f"{TENSORS} truncated while reading {what} (offset {pos})")

    while pos < n:
        need(4, "a name length")
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(length, "a tensor name")
        try:
            name = blob[pos:pos + length].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{TENSORS} holds a malformed tensor name at offset {pos}") from None
        pos += length
        need(1, f"the rank of {name!r}")
        rank = blob[pos]
        pos += 1
        need(4 * rank, f"the extents of {name!r}")
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape, dtype=np.int64))
        need(4 * count, f"the values of {name!r} {tuple(shape)}")
        if name in tensors:
            raise CheckpointError(f"tensor {name!r} appears more than once")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    return tensors


def write_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    (path / MANIFEST).write_text(json.dumps(ckpt.manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                                 encoding="utf-8")
    (path / TENSORS).write_bytes(_encode_tensors(ckpt.tensors))
    return path


def save_checkpoint(model: KBCModel, path, extra: dict | None = None) -> Path:
    """Serialize model parameters, batch-norm statistics and vocabulary."""
    return write_checkpoint(checkpoint_from_model(model, extra), path)


def load_checkpoint(path, expect_model: str | None = None, expect_encoder: str | None = None) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
        blob = (path / TENSORS).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {path}: {exc.filename} missing") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version!r}, this build reads {FORMAT_VERSION}")
    missing_keys = [k for k in REQUIRED_KEYS if k not in manifest]
    if missing_keys:
        raise CheckpointError(f"manifest lacks keys {missing_keys}")
    if expect_model is not None and manifest["model"] != expect_model:
        raise CheckpointError(f"checkpoint holds a {manifest['model']!r} model, expected {expect_model!r}")
    if expect_encoder is not None and manifest["encoder"] != expect_encoder:
        raise CheckpointError(f"checkpoint uses {manifest['encoder']!r} encoders, expected {expect_encoder!r}")
    tensors = _decode_tensors(blob)
    expected = expected_shapes(manifest)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors {missing}")
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors {extra}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, manifest implies {shape}")
    return Checkpoint(manifest, tensors)


def model_from_checkpoint(ckpt: Checkpoint, store: TripleStore, dropout: float = 0.0) -> KBCModel:
    """Rebuild the saved model over ``store``, whose counts must match."""
    m = ckpt.manifest
    if (store.n_entities, store.n_relations) != (m["n_entities"], m["n_relations"]):
        raise CheckpointError(
            f"checkpoint was built for {m['n_entities']} entities / {m['n_relations']} relations, "
            f"store has {store.n_entities} / {store.n_relations}")
    model = build_model(
        m["model"], m["encoder"], m["dim"], store,
        vocab=m["words"] if m["encoder"] == "gru" else None,
        word_dim=m.get("word_dim"), dropout=dropout,
        conve_reshape=m["conve_reshape"], conve_channels=m.get("conve_channels") or 32,
        pooling=m.get("pooling") or "last", seed=m.get("seed", 0),
    )
    model.load_state_dict(ckpt.tensors)
    return model
