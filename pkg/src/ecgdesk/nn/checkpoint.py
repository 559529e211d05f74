"""Hashed model checkpoints and a version-monotonic registry.

File layout: 4-byte magic ``EDCK``, u32 LE manifest length, UTF-8 JSON
manifest {model_id, version, config, tensors: [{name, shape, offset}]},
contiguous little-endian float32 blobs, then a trailing sha256 digest over
everything before it. Loading recomputes the digest and refuses corrupted
files.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"EDCK"
MODEL_IDS = ("delineation", "beat", "rhythm", "quality", "gan")


class CheckpointError(ValueError):
    """Corrupted checkpoint, bad manifest, or registry violation."""


def _config_dict(config) -> dict:
    if isinstance(config, dict):
        return config
    return config.to_dict()


def parse_semver(version: str) -> tuple[int, int, int]:
    parts = version.split(".")
    if len(parts) != 3:
        raise CheckpointError(f"not a semantic version: {version}")
    try:
        return tuple(int(p) for p in parts)  # type: ignore[return-value]
    except ValueError as e:
        raise CheckpointError(f"not a semantic version: {version}") from e


@dataclass
class ModelCheckpoint:
    """Named float32 weights plus the config needed to rebuild the model."""

    model_id: str
    version: str
    config: object  # ModelConfig or a plain config dict (e.g. the GAN mlp)
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise CheckpointError(f"unknown model_id: {self.model_id}")
        parse_semver(self.version)
        self.weights = {
            k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.weights.items()
        }

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.model_id.encode())
        h.update(self.version.encode())
        h.update(json.dumps(_config_dict(self.config), sort_keys=True).encode())
        for name in sorted(self.weights):
            arr = self.weights[name]
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.astype("<f4").tobytes())
        return h.hexdigest()


def checkpoint_save(ckpt: ModelCheckpoint, destination: str | Path) -> str:
    """Write the checkpoint; returns its content hash."""
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.weights):
        arr = np.ascontiguousarray(ckpt.weights[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "model_id": ckpt.model_id,
        "version": ckpt.version,
        "config": _config_dict(ckpt.config),
        "tensors": tensors,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(mbytes)) + mbytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    Path(destination).write_bytes(body + digest)
    return ckpt.content_hash


def checkpoint_load(source: str | Path) -> ModelCheckpoint:
    """Read and hash-verify a checkpoint; raises on any corruption."""
    data = Path(source).read_bytes()
    if len(data) < 40 or data[:4] != MAGIC:
        raise CheckpointError("corrupted checkpoint: bad magic")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("corrupted checkpoint: hash mismatch")
    (mlen,) = struct.unpack_from("<I", body, 4)
    try:
        manifest = json.loads(body[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted checkpoint: {e}") from e
    blob = body[8 + mlen :]
    weights = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = t["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(shape)
        weights[t["name"]] = arr.copy()
    config = manifest["config"]
    if isinstance(config, dict) and config.get("kind") == "conv_transformer":
        from ecgdesk.nn.model import ModelConfig

        config = ModelConfig.from_dict(config)
    return ModelCheckpoint(
        model_id=manifest["model_id"],
        version=manifest["version"],
        config=config,
        weights=weights,
    )


class CheckpointRegistry:
    """Directory of checkpoints with strictly increasing versions per model."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "registry.json"

    def _index(self) -> dict:
        if self.index_path.exists():
            return json.loads(self.index_path.read_text())
        return {}

    def _write_index(self, idx: dict) -> None:
        self.index_path.write_text(json.dumps(idx, indent=2, sort_keys=True))

    def register(self, ckpt: ModelCheckpoint) -> Path:
        idx = self._index()
        versions = idx.get(ckpt.model_id, [])
        if versions:
            latest = max(parse_semver(v) for v in versions)
            if parse_semver(ckpt.version) <= latest:
                raise CheckpointError(
                    f"version regression: {ckpt.version} not above "
                    f"{'.'.join(map(str, latest))} for {ckpt.model_id}"
                )
        path = self.root / f"{ckpt.model_id}-{ckpt.version}.ckpt"
        checkpoint_save(ckpt, path)
        idx.setdefault(ckpt.model_id, []).append(ckpt.version)
        self._write_index(idx)
        return path

    def versions(self, model_id: str) -> list[str]:
        return sorted(self._index().get(model_id, []), key=parse_semver)

    def latest_version(self, model_id: str) -> str | None:
        versions = self.versions(model_id)
        return versions[-1] if versions else None

    def load(self, model_id: str, version: str | None = None) -> ModelCheckpoint:
        if version is None:
            version = self.latest_version(model_id)
            if version is None:
                raise CheckpointError(f"missing checkpoint: {model_id}")
        path = self.root / f"{model_id}-{version}.ckpt"
        if not path.exists():
            raise CheckpointError(f"missing checkpoint: {model_id}")
        return checkpoint_load(path)

    def model_versions(self) -> dict[str, str]:
        """Latest version per registered model id."""
        return {mid: self.latest_version(mid) for mid in self._index()}
