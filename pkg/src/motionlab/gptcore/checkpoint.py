"""Model checkpoint file format.

Layout: 4-byte magic ``HMGW``, little-endian uint32 header length, UTF-8
JSON header (format version, model config, provenance, discretizer, input
normalization, tensor directory with offsets/counts), then the concatenated
little-endian float32 tensor blobs in directory order.

Weights train in float64 but are stored as float32; a fresh save/load
round-trip therefore quantizes once, after which round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from motionlab.errors import FormatError, MotionLabError
from motionlab.gptcore.discretize import Discretizer
from motionlab.gptcore.model import (
    HEAD_ACTION,
    HEAD_OBSERVATION,
    ModelConfig,
    param_shapes,
)
from motionlab.util import atomic_write_bytes

CHECKPOINT_MAGIC = b"HMGW"
CHECKPOINT_VERSION = 1

PHASE_PRETRAINED = "pretrained"
PHASE_FINETUNED = "finetuned"
PHASE_SCRATCH = "scratch"


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    discretizer: Discretizer
    obs_mean: np.ndarray
    obs_std: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def phase(self) -> str:
        return self.provenance.get("phase", "untrained")

    @property
    def head_kind(self) -> str:
        return self.config.head_kind

    def normalize_obs(self, obs: np.ndarray) -> np.ndarray:
        """z-score raw observations with the training-split statistics."""
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / self.obs_std

    def checkpoint_id(self) -> str:
        prov = self.provenance
        return prov.get("name") or f"{self.phase}-{prov.get('dataset_id', 'unknown')}-s{prov.get('seed', 0)}"

    def validate_shapes(self) -> None:
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = set(expected) ^ set(self.params)
            raise FormatError(f"checkpoint tensor set mismatch: {sorted(missing)}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise FormatError(
                    f"tensor {name} has shape {self.params[name].shape}, expected {shape}")


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    ckpt.validate_shapes()
    names = sorted(ckpt.params)
    directory = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset,
                          "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size * 4
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_doc(),
        "provenance": ckpt.provenance,
        "discretizer": ckpt.discretizer.to_doc(),
        "obs_mean": ckpt.obs_mean.tolist(),
        "obs_std": ckpt.obs_std.tolist(),
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    atomic_write_bytes(Path(path), payload)


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise MotionLabError(f"checkpoint file not found: {path}")
    buf = path.read_bytes()
    if len(buf) < 8 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path.name}: bad checkpoint magic (expected {CHECKPOINT_MAGIC!r})")
    (head_len,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + head_len:
        raise FormatError(f"{path.name}: truncated checkpoint header")
    try:
        header = json.loads(buf[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path.name}: corrupt checkpoint header: {e}") from e
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path.name}: checkpoint version {header.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})")

    base = 8 + head_len
    params = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        end = start + entry["count"] * 4
        if end > len(buf):
            raise FormatError(f"{path.name}: truncated tensor blob for {entry['name']}")
        arr = np.frombuffer(buf, dtype="<f4", count=entry["count"], offset=start)
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])

    ckpt = ModelCheckpoint(
        config=ModelConfig.from_doc(header["config"]),
        params=params,
        discretizer=Discretizer.from_doc(header["discretizer"]),
        obs_mean=np.asarray(header["obs_mean"]),
        obs_std=np.asarray(header["obs_std"]),
        provenance=header["provenance"],
    )
    ckpt.validate_shapes()
    return ckpt
