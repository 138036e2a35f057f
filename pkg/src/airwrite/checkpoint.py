"""Versioned binary checkpoints.

Layout: magic ``AWCK``, little-endian u32 format version, u32 header
length, a UTF-8 JSON header, then the payload.  The header carries the
model configuration, the label vocabulary, training metadata, and a
manifest of (path, shape, offset) entries that must partition the payload
exactly.  Arrays are stored as little-endian float32, so loading quantizes
a float64 model once; load/save round trips after that are lossless.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigMismatchError, IntegrityError, VersionError
from .model import CharacterModel, ModelConfig

MAGIC = b"AWCK"
FORMAT_VERSION = 1

_HEAD = struct.Struct("<4sII")


@dataclass
class LoadedCheckpoint:
    model: CharacterModel
    metadata: dict
    adam_step: int | None
    adam_moments: dict[str, tuple[np.ndarray, np.ndarray]] | None


def _manifest_and_payload(arrays: dict[str, np.ndarray], kinds: dict[str, str]) -> tuple[list, bytes]:
    manifest = []
    chunks = []
    offset = 0
    for path in sorted(arrays):
        data = np.ascontiguousarray(arrays[path], dtype="<f4")
        raw = data.tobytes()
        manifest.append(
            {
                "path": path,
                "kind": kinds[path],
                "shape": list(data.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    return manifest, b"".join(chunks)


def checkpoint_save(
    model: CharacterModel,
    path,
    adam=None,
    metadata: dict | None = None,
) -> str:
    """Write the model (and optionally Adam moments) to ``path``.

    Returns the payload digest, which is also stored in the header as
    ``metadata.model_version``.
    """
    arrays: dict[str, np.ndarray] = {}
    kinds: dict[str, str] = {}
    for p, a in model.state_arrays().items():
        arrays[p] = a
        kinds[p] = "state"
    adam_step = None
    if adam is not None:
        adam_step = adam.step
        for p, a in adam.m.items():
            arrays[f"adam.m.{p}"] = a
            kinds[f"adam.m.{p}"] = "adam_m"
        for p, a in adam.v.items():
            arrays[f"adam.v.{p}"] = a
            kinds[f"adam.v.{p}"] = "adam_v"

    manifest, payload = _manifest_and_payload(arrays, kinds)
    digest = hashlib.sha256(payload).hexdigest()[:12]
    meta = dict(metadata or {})
    meta["model_version"] = digest

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "labels": list(model.labels),
        "model_seed": model.seed,
        "manifest": manifest,
        "payload_bytes": len(payload),
        "adam_step": adam_step,
        "metadata": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return digest


def checkpoint_load(path, expected_config: ModelConfig | None = None) -> LoadedCheckpoint:
    """Read a checkpoint; every structural defect raises before a model exists."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise IntegrityError("file too short to hold a checkpoint header")
    magic, version, header_len = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise IntegrityError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    header_end = _HEAD.size + header_len
    if len(blob) < header_end:
        raise IntegrityError("truncated header")
    try:
        header = json.loads(blob[_HEAD.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"corrupt header: {exc}") from exc

    payload = blob[header_end:]
    if len(payload) != header.get("payload_bytes"):
        raise IntegrityError(
            f"payload is {len(payload)} bytes, header promises {header.get('payload_bytes')}"
        )

    manifest = header.get("manifest", [])
    offset = 0
    for entry in manifest:
        size = int(np.prod(entry["shape"], dtype=np.int64) if entry["shape"] else 1) * 4
        if entry["offset"] != offset or entry["nbytes"] != size:
            raise IntegrityError(f"manifest entry {entry['path']} does not tile the payload")
        offset += entry["nbytes"]
    if offset != len(payload):
        raise IntegrityError("manifest does not cover the payload exactly")

    config = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise ConfigMismatchError(
            f"checkpoint config {config.to_dict()} != expected {expected_config.to_dict()}"
        )

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["path"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float64)

    model = CharacterModel(config, header["labels"], seed=header.get("model_seed", 0))
    state = {p: a for p, a in arrays.items() if not p.startswith("adam.")}
    model.load_state_arrays(state)

    adam_moments = None
    if header.get("adam_step") is not None:
        adam_moments = {}
        for p in model.state_arrays():
            mk, vk = f"adam.m.{p}", f"adam.v.{p}"
            if mk in arrays and vk in arrays:
                adam_moments[p] = (arrays[mk], arrays[vk])
    return LoadedCheckpoint(
        model=model,
        metadata=header.get("metadata", {}),
        adam_step=header.get("adam_step"),
        adam_moments=adam_moments,
    )
