"""Binary checkpoint container.

Layout: one version byte, a little-endian uint32 manifest byte length,
the UTF-8 JSON manifest, then the tensor payloads as little-endian
float32 concatenated in manifest order (names sorted).  The manifest
carries a kind tag, the model config, vocab fingerprints, and a tensor
index of name/shape/byte-offset, so it can be inspected without reading
the payloads.  Training runs in float64; checkpoints quantize to
float32, and save-load-save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .model import EMBEDDING_TENSORS, PredictorConfig, PredictorParams

CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<BI")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


class CheckpointPayloadError(CheckpointError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(tensors)
    index = []
    offset = 0
    payloads = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    manifest = dict(meta)
    manifest["tensors"] = index
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for p in payloads:
            f.write(p)


def _read_manifest(f, path) -> dict:
    head = f.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise CheckpointVersionError(f"{path}: file too short to be a checkpoint")
    version, blob_len = _HEADER.unpack(head)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    blob = f.read(blob_len)
    if len(blob) < blob_len:
        raise CheckpointManifestError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointManifestError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise CheckpointManifestError(f"{path}: manifest lacks a tensor index")
    return manifest


def read_checkpoint_manifest(path) -> dict:
    """Manifest only, without touching the tensor payloads."""
    with open(path, "rb") as f:
        return _read_manifest(f, path)


def load_tensors(path):
    with open(path, "rb") as f:
        manifest = _read_manifest(f, path)
        payload = f.read()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        except (TypeError, KeyError) as exc:
            raise CheckpointManifestError(f"{path}: malformed tensor index entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointPayloadError(
                f"{path}: payload for tensor {name!r} runs past end of file"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors, manifest


def save_predictor(path, params: PredictorParams) -> None:
    meta = {
        "kind": "predictor",
        "arch": params.config.arch,
        "config": asdict(params.config),
        "src_vocab_hash": params.src_vocab_hash,
        "tgt_vocab_hash": params.tgt_vocab_hash,
    }
    save_tensors(path, params.tensors, meta)


def load_predictor(path) -> PredictorParams:
    tensors, manifest = load_tensors(path)
    if manifest.get("kind") != "predictor":
        raise CheckpointManifestError(f"{path}: not a predictor checkpoint (kind={manifest.get('kind')!r})")
    try:
        config = PredictorConfig(**manifest["config"])
    except (TypeError, KeyError) as exc:
        raise CheckpointManifestError(f"{path}: bad predictor config in manifest: {exc}") from exc
    config.validate()
    return PredictorParams(config, tensors, manifest["src_vocab_hash"], manifest["tgt_vocab_hash"])


def load_pretrained_excluding_embeddings(receiver: PredictorParams, path) -> PredictorParams:
    """Transfer every donor tensor except the embedding tables.

    The receiver keeps its own (freshly initialized) src_embed and
    tgt_embed, so the donor may have been trained on any vocabulary.
    All other tensors must match in shape.
    """
    donor = load_predictor(path)
    if donor.config.arch != receiver.config.arch:
        raise ValueError(
            f"architecture mismatch: checkpoint is {donor.config.arch!r}, "
            f"model is {receiver.config.arch!r}"
        )
    donor_names = {k for k in donor.tensors if k not in EMBEDDING_TENSORS}
    recv_names = {k for k in receiver.tensors if k not in EMBEDDING_TENSORS}
    problems = []
    for name in sorted(donor_names ^ recv_names):
        problems.append(f"{name}: present only in {'checkpoint' if name in donor_names else 'model'}")
    for name in sorted(donor_names & recv_names):
        if donor.tensors[name].shape != receiver.tensors[name].shape:
            problems.append(
                f"{name}: checkpoint {donor.tensors[name].shape} vs model {receiver.tensors[name].shape}"
            )
    if problems:
        raise ValueError("cannot transfer weights:\n  " + "\n  ".join(problems))
    tensors = {k: v.copy() for k, v in receiver.tensors.items() if k in EMBEDDING_TENSORS}
    for name in donor_names:
        tensors[name] = donor.tensors[name]
    return PredictorParams(receiver.config, tensors, receiver.src_vocab_hash, receiver.tgt_vocab_hash)
