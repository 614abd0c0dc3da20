"""Small shared helpers: stable seeding, atomic file writes, canonical JSON."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path


def stable_seed(*parts) -> int:
    """Derive a 63-bit seed from arbitrary parts, stable across runs and
    platforms (python's hash() is salted; this one is not)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write via temp file + rename so readers never observe partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def atomic_write_json(path: Path, obj) -> None:
    atomic_write_bytes(Path(path), (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def read_json(path: Path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
