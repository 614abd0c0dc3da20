"""Persistent store for rollout datasets.

Layout on disk::

    <root>/<dataset_id>/manifest.json
    <root>/<dataset_id>/episodes/<episode_id>.bin

Episode files are little-endian float32: a 32-byte header (magic ``HMGE``,
version, T, D_obs, D_act, reserved) followed by the row-major observation
block and the action block. The manifest carries per-episode metadata
including the float64 initial simulator state, so full state trajectories
are reconstructed by deterministic replay of the stored actions (applied
actions are float32-rounded at generation time, which makes the replay
bit-exact against the stored data).

Normalization statistics are computed over the training split only, in
sorted-episode-id order, so they are independent of write order.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from motionlab.errors import DimensionError, FormatError, MotionLabError
from motionlab.physim.body import BodyModel
from motionlab.physim.sim import SimState, Simulator
from motionlab.util import atomic_write_bytes, atomic_write_json, read_json, stable_seed

EPISODE_MAGIC = b"HMGE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII12x")
STD_FLOOR = 1e-6


def state_to_doc(state: SimState) -> dict:
    return {
        "root_pos": [float(x) for x in state.root_pos],
        "root_angle": state.root_angle,
        "root_vel": [float(x) for x in state.root_vel],
        "root_angvel": state.root_angvel,
        "joint_q": [float(x) for x in state.joint_q],
        "joint_qd": [float(x) for x in state.joint_qd],
        "foot_forces": [float(x) for x in state.foot_forces],
        "joint_torques": [float(x) for x in state.joint_torques],
        "time": state.time,
    }


def state_from_doc(doc: dict) -> SimState:
    return SimState(
        root_pos=np.asarray(doc["root_pos"], dtype=float),
        root_angle=float(doc["root_angle"]),
        root_vel=np.asarray(doc["root_vel"], dtype=float),
        root_angvel=float(doc["root_angvel"]),
        joint_q=np.asarray(doc["joint_q"], dtype=float),
        joint_qd=np.asarray(doc["joint_qd"], dtype=float),
        foot_forces=np.asarray(doc["foot_forces"], dtype=float),
        joint_torques=np.asarray(doc["joint_torques"], dtype=float),
        time=float(doc["time"]),
    )


def encode_episode(obs: np.ndarray, act: np.ndarray) -> bytes:
    t, d_obs = obs.shape
    d_act = act.shape[1]
    header = _HEADER.pack(EPISODE_MAGIC, FORMAT_VERSION, t, d_obs, d_act)
    return header + obs.astype("<f4").tobytes() + act.astype("<f4").tobytes()


def decode_episode(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(buf) < _HEADER.size:
        raise FormatError("episode file shorter than its header")
    magic, version, t, d_obs, d_act = _HEADER.unpack_from(buf)
    if magic != EPISODE_MAGIC:
        raise FormatError(f"bad episode magic {magic!r}, expected {EPISODE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"episode format version {version} unsupported (expected {FORMAT_VERSION})")
    expect = _HEADER.size + 4 * t * (d_obs + d_act)
    if len(buf) != expect:
        raise FormatError(f"episode payload is {len(buf)} bytes, expected {expect}")
    obs = np.frombuffer(buf, dtype="<f4", count=t * d_obs, offset=_HEADER.size).reshape(t, d_obs)
    act = np.frombuffer(buf, dtype="<f4", count=t * d_act,
                        offset=_HEADER.size + 4 * t * d_obs).reshape(t, d_act)
    return obs.copy(), act.copy()


@dataclass(frozen=True)
class DatasetFraction:
    """Stratified per-behavior subset of a dataset's training split."""

    base_dataset_id: str
    fraction: float
    seed: int
    episode_ids: tuple[str, ...]


class DatasetStore:
    """One dataset directory. Concurrent readers are fine; writes go through
    writer(), which holds an advisory lock file."""

    MANIFEST_FLUSH_EVERY = 32

    def __init__(self, path: Path, manifest: dict):
        self.path = Path(path)
        self.manifest = manifest
        self._writing = False
        self._dirty_writes = 0

    # -------------------------------------------------------------- #
    @staticmethod
    def create(root, dataset_id: str, *, d_obs: int, d_act: int, seed: int,
               noise_scale: float, body_model: BodyModel) -> "DatasetStore":
        path = Path(root) / dataset_id
        if (path / "manifest.json").exists():
            raise MotionLabError(f"dataset {dataset_id} already exists at {path}")
        (path / "episodes").mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "dataset_id": dataset_id,
            "seed": seed,
            "noise_scale": noise_scale,
            "d_obs": d_obs,
            "d_act": d_act,
            "behaviors": {},
            "episodes": [],
            "normalization": None,
            "body_model": body_model.to_json(),
        }
        return DatasetStore(path, manifest)

    @staticmethod
    def open(path) -> "DatasetStore":
        path = Path(path)
        mf = path / "manifest.json"
        if not mf.exists():
            raise MotionLabError(f"no dataset manifest at {mf}")
        manifest = read_json(mf)
        if manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"manifest format version {manifest.get('format_version')} unsupported")
        return DatasetStore(path, manifest)

    @property
    def dataset_id(self) -> str:
        return self.manifest["dataset_id"]

    @property
    def d_obs(self) -> int:
        return self.manifest["d_obs"]

    @property
    def d_act(self) -> int:
        return self.manifest["d_act"]

    def body_model(self) -> BodyModel:
        return BodyModel.from_json(self.manifest["body_model"])

    # -------------------------------------------------------------- #
    @contextmanager
    def writer(self):
        """Advisory single-writer lock for the dataset directory."""
        import fcntl

        lock_path = self.path / ".lock"
        with open(lock_path, "w") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX | fcntl.LOCK_NB)
            self._writing = True
            try:
                yield self
            finally:
                self._writing = False
                if self._dirty_writes:
                    self.save_manifest()
                fcntl.flock(lock, fcntl.LOCK_UN)

    def write_episode(self, episode, episode_id: str, split: str) -> None:
        """Append one episode (atomic file write, manifest count update)."""
        obs = np.asarray(episode.observations)
        act = np.asarray(episode.actions)
        if obs.shape[1] != self.d_obs:
            raise DimensionError(f"episode obs dim {obs.shape[1]} != dataset d_obs {self.d_obs}")
        if act.shape[1] != self.d_act:
            raise DimensionError(f"episode action dim {act.shape[1]} != dataset d_act {self.d_act}")
        if obs.shape[0] != act.shape[0]:
            raise DimensionError("observations and actions disagree on episode length")
        if any(e["id"] == episode_id for e in self.manifest["episodes"]):
            raise MotionLabError(f"duplicate episode id {episode_id}")

        atomic_write_bytes(self._episode_path(episode_id), encode_episode(obs, act))
        self.manifest["episodes"].append({
            "id": episode_id,
            "behavior": episode.behavior,
            "length": int(obs.shape[0]),
            "terminated_by_fall": bool(episode.terminated_by_fall),
            "seed": int(episode.noise_seed),
            "split": split,
            "initial_state": state_to_doc(episode.states[0]),
        })
        counts = self.manifest["behaviors"]
        counts[episode.behavior] = counts.get(episode.behavior, 0) + 1
        # The episode file itself is atomic; the manifest (the source of
        # truth) is flushed in batches and on writer() exit, so a crash can
        # only lose trailing episodes, never corrupt the store.
        self._dirty_writes += 1
        if self._dirty_writes >= self.MANIFEST_FLUSH_EVERY:
            self.save_manifest()

    def finalize(self) -> None:
        """Compute train-split normalization statistics and persist."""
        self.manifest["normalization"] = self._compute_normalization()
        self.save_manifest()

    def save_manifest(self) -> None:
        atomic_write_json(self.path / "manifest.json", self.manifest)
        self._dirty_writes = 0

    # -------------------------------------------------------------- #
    def episode_ids(self, split: str | None = None) -> list[str]:
        eps = self.manifest["episodes"]
        if split is not None:
            eps = [e for e in eps if e["split"] == split]
        return sorted(e["id"] for e in eps)

    def meta(self, episode_id: str) -> dict:
        for e in self.manifest["episodes"]:
            if e["id"] == episode_id:
                return e
        raise MotionLabError(f"unknown episode id {episode_id}")

    def _episode_path(self, episode_id: str) -> Path:
        return self.path / "episodes" / f"{episode_id}.bin"

    def read_episode(self, episode_id: str) -> tuple[np.ndarray, np.ndarray]:
        """(observations, actions) exactly as stored (float32)."""
        p = self._episode_path(episode_id)
        if not p.exists():
            raise MotionLabError(f"episode file missing: {p}")
        return decode_episode(p.read_bytes())

    def load_window(self, episode_id: str, start: int, length: int):
        """Contiguous (observations, actions) slice exactly as stored."""
        meta = self.meta(episode_id)
        if start < 0 or length < 1 or start + length > meta["length"]:
            raise MotionLabError(
                f"window [{start}, {start + length}) out of range for episode "
                f"{episode_id} of length {meta['length']}")
        obs, act = self.read_episode(episode_id)
        return obs[start:start + length], act[start:start + length]

    def initial_state(self, episode_id: str) -> SimState:
        return state_from_doc(self.meta(episode_id)["initial_state"])

    def replay_states(self, episode_id: str, sim: Simulator | None = None) -> list[SimState]:
        """Reconstruct the state trajectory by re-simulating stored actions
        from the stored initial state (bit-exact against generation)."""
        sim = sim or Simulator(self.body_model())
        _, act = self.read_episode(episode_id)
        state = self.initial_state(episode_id)
        states = [state]
        for t in range(act.shape[0] - 1):
            state = sim.step(state, act[t].astype(np.float64))
            states.append(state)
        return states

    # -------------------------------------------------------------- #
    def _compute_normalization(self) -> dict:
        ids = self.episode_ids(split="train")
        if not ids:
            raise MotionLabError("cannot compute normalization: train split is empty")
        acc = {}
        for key, dim in (("obs", self.d_obs), ("act", self.d_act)):
            acc[key] = dict(n=0, s=np.zeros(dim), ss=np.zeros(dim),
                            lo=np.full(dim, np.inf), hi=np.full(dim, -np.inf))
        for eid in ids:
            obs, act = self.read_episode(eid)
            for key, arr in (("obs", obs), ("act", act)):
                a = acc[key]
                x = arr.astype(np.float64)
                a["n"] += x.shape[0]
                a["s"] += x.sum(axis=0)
                a["ss"] += (x * x).sum(axis=0)
                a["lo"] = np.minimum(a["lo"], x.min(axis=0))
                a["hi"] = np.maximum(a["hi"], x.max(axis=0))
        out = {}
        for key in ("obs", "act"):
            a = acc[key]
            mean = a["s"] / a["n"]
            var = np.maximum(a["ss"] / a["n"] - mean**2, 0.0)
            std = np.maximum(np.sqrt(var), STD_FLOOR)
            out[f"{key}_mean"] = mean.tolist()
            out[f"{key}_std"] = std.tolist()
            out[f"{key}_min"] = a["lo"].tolist()
            out[f"{key}_max"] = a["hi"].tolist()
        return out

    def normalization(self) -> dict[str, np.ndarray]:
        norm = self.manifest.get("normalization")
        if not norm:
            raise MotionLabError("dataset has no normalization stats (finalize() not run)")
        return {k: np.asarray(v) for k, v in norm.items()}

    # -------------------------------------------------------------- #
    def make_fraction(self, fraction: float, seed: int) -> DatasetFraction:
        """Stratified per-behavior subset of the training split: a seeded
        shuffle prefix with round-half-up counts (at least one episode), so
        smaller fractions nest inside larger ones for the same seed."""
        if not (0.0 < fraction <= 1.0):
            raise MotionLabError(f"fraction must be in (0, 1], got {fraction}")
        by_behavior: dict[str, list[str]] = {}
        for e in self.manifest["episodes"]:
            if e["split"] == "train":
                by_behavior.setdefault(e["behavior"], []).append(e["id"])
        selected: list[str] = []
        for behavior in sorted(by_behavior):
            ids = sorted(by_behavior[behavior])
            rng = np.random.default_rng(stable_seed("fraction", seed, behavior))
            order = rng.permutation(len(ids))
            count = max(1, int(np.floor(fraction * len(ids) + 0.5)))
            selected.extend(ids[i] for i in order[:count])
        return DatasetFraction(
            base_dataset_id=self.dataset_id,
            fraction=fraction,
            seed=seed,
            episode_ids=tuple(sorted(selected)),
        )

    def export_csv(self, episode_id: str) -> str:
        """Episode as CSV for inspection, with named observation columns."""
        sim = Simulator(self.body_model())
        obs, act = self.read_episode(episode_id)
        cols = (["step"] + sim.layout.column_names()
                + [f"action.{j}" for j in sim.layout.joint_names])
        lines = [",".join(cols)]
        for t in range(obs.shape[0]):
            row = [str(t)] + [repr(float(x)) for x in obs[t]] + [repr(float(x)) for x in act[t]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"
