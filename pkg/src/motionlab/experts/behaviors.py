"""Scripted reference behaviors.

A behavior is a pure function of time: per-joint target angles plus a nominal
root velocity. Everything is represented as piecewise-linear knot tracks so
behaviors round-trip through JSON; the built-in library is produced by
sampling closed-form gait recipes into knots.

The planar mapping of the behavior names: "left" means the -x direction and
"side-step" is stepping in place with alternating weight shifts, since the
model lives in the sagittal plane. "arm-gesture-stand" is a standing torso
sway (the biped has no arms).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from motionlab.constants import EPISODE_CAP_STEPS, CONTROL_HZ
from motionlab.errors import MotionLabError
from motionlab.physim.body import STAND_ANKLE

CYCLIC_MODERATE = "cyclic-moderate"
CYCLIC_FAST = "cyclic-fast"
NON_CYCLIC = "non-cyclic"

DURATION_S = EPISODE_CAP_STEPS / CONTROL_HZ  # 15 s

# Fixed split by behavior name; held-out noise seeds of the train behaviors
# are added to the validation split by the dataset builder.
VALIDATION_BEHAVIOR_NAMES = ("walk-backward", "run-left")
TRAIN_BEHAVIOR_NAMES = (
    "stand", "walk-forward", "walk-random-turns", "run-forward",
    "arm-gesture-stand", "side-step",
)


@dataclass(frozen=True)
class KnotTrack:
    """Piecewise-linear track; periodic tracks wrap at ``period``."""

    times: np.ndarray
    values: np.ndarray
    periodic: bool = False
    period: float = 0.0

    def value_at(self, t: float) -> float:
        if self.periodic:
            t = math.fmod(t, self.period)
        return float(np.interp(t, self.times, self.values))

    def to_doc(self) -> dict:
        return {
            "times": [float(x) for x in self.times],
            "values": [float(x) for x in self.values],
            "periodic": self.periodic,
            "period": self.period,
        }

    @staticmethod
    def from_doc(doc: dict) -> "KnotTrack":
        return KnotTrack(
            times=np.asarray(doc["times"], dtype=float),
            values=np.asarray(doc["values"], dtype=float),
            periodic=bool(doc.get("periodic", False)),
            period=float(doc.get("period", 0.0)),
        )

    @staticmethod
    def constant(value: float) -> "KnotTrack":
        return KnotTrack(times=np.array([0.0, DURATION_S]), values=np.array([value, value]))

    @staticmethod
    def sampled(fn, *, period: float = 0.0, knots_per_cycle: int = 64) -> "KnotTrack":
        """Sample a scalar function of time into knots. With a period the
        track wraps; otherwise it spans the full episode duration."""
        if period > 0.0:
            ts = np.linspace(0.0, period, knots_per_cycle + 1)
            return KnotTrack(times=ts, values=np.array([fn(t) for t in ts]),
                             periodic=True, period=period)
        ts = np.arange(0.0, DURATION_S + 1e-9, 1.0 / CONTROL_HZ)
        return KnotTrack(times=ts, values=np.array([fn(t) for t in ts]))


@dataclass(frozen=True)
class BehaviorSpec:
    name: str
    category: str
    duration: float                    # s
    joint_tracks: tuple[KnotTrack, ...]
    root_velocity: KnotTrack           # nominal forward speed, m/s

    def action_at(self, t: float) -> np.ndarray:
        """Target joint angles at time t; t must lie in [0, duration]."""
        if t < 0.0 or t > self.duration:
            raise MotionLabError(
                f"behavior {self.name}: time {t:.4f}s outside reference domain [0, {self.duration}]")
        return np.array([tr.value_at(t) for tr in self.joint_tracks])

    def to_json(self) -> str:
        return json.dumps({
            "format_version": 1,
            "name": self.name,
            "category": self.category,
            "duration": self.duration,
            "joint_tracks": [tr.to_doc() for tr in self.joint_tracks],
            "root_velocity": self.root_velocity.to_doc(),
        }, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "BehaviorSpec":
        try:
            doc = json.loads(text)
            return BehaviorSpec(
                name=doc["name"],
                category=doc["category"],
                duration=float(doc["duration"]),
                joint_tracks=tuple(KnotTrack.from_doc(d) for d in doc["joint_tracks"]),
                root_velocity=KnotTrack.from_doc(doc["root_velocity"]),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise MotionLabError(f"malformed behavior JSON: {e}") from e


# --------------------------------------------------------------------- #
# built-in gait recipes
#
# Joint order: hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r.
# Stance baseline is the crouched standing pose; gaits modulate around it.

CROUCH = 0.3
STAND_POSE = (CROUCH, -2 * CROUCH, STAND_ANKLE + CROUCH)


def _leg_wave(hip_amp, knee_amp, ankle_amp, period, *, lean=0.0, knee_phase=0.5 * math.pi,
              ankle_phase=-0.5 * math.pi, knee_lift_only=True):
    """Per-leg target functions for a cyclic gait. The right leg runs half a
    period out of phase. Positive hip amplitude first swings the left leg
    forward, so positive values walk toward +x."""
    hip0, knee0, ankle0 = STAND_POSE

    def leg(t, phase):
        ph = 2.0 * math.pi * t / period + phase
        hip = hip0 + lean + hip_amp * math.sin(ph)
        flex = math.sin(ph + knee_phase)
        if knee_lift_only:
            flex = max(0.0, flex)
        knee = knee0 - knee_amp * flex
        ankle = ankle0 - lean + ankle_amp * math.sin(ph + ankle_phase)
        return hip, knee, ankle

    return leg


def _cyclic_behavior(name, category, leg_fn, period, speed):
    tracks = []
    for side_phase in (0.0, math.pi):
        for idx in range(3):
            tracks.append(KnotTrack.sampled(
                lambda t, i=idx, p=side_phase: leg_fn(t, p)[i], period=period))
    return BehaviorSpec(
        name=name, category=category, duration=DURATION_S,
        joint_tracks=tuple(tracks),
        root_velocity=KnotTrack.constant(speed),
    )


def _scheduled_behavior(name, category, leg_fn_of_t, speed_fn):
    """Non-periodic behavior: leg_fn_of_t(t, phase) may depend on absolute t."""
    tracks = []
    for side_phase in (0.0, math.pi):
        for idx in range(3):
            tracks.append(KnotTrack.sampled(
                lambda t, i=idx, p=side_phase: leg_fn_of_t(t, p)[i]))
    return BehaviorSpec(
        name=name, category=category, duration=DURATION_S,
        joint_tracks=tuple(tracks),
        root_velocity=KnotTrack.sampled(speed_fn),
    )


# Tuned gait parameters: every built-in expert must reach the 480-step cap
# with zero noise (gating test) and locomote where the name promises.
# Order: hip_amp, knee_amp, ankle_amp, lean, knee_phase, ankle_phase.
WALK_FWD = dict(hip_amp=0.2553, knee_amp=0.2370, ankle_amp=0.0381,
                lean=-0.0957, knee_phase=5.7284, ankle_phase=1.5049, period=1.0)
WALK_BWD = dict(hip_amp=-0.1899, knee_amp=0.3507, ankle_amp=-0.2854,
                lean=0.0345, knee_phase=1.5175, ankle_phase=2.5621, period=1.0)
RUN_FWD = dict(hip_amp=0.2820, knee_amp=0.0088, ankle_amp=0.3958,
               lean=0.0290, knee_phase=-0.1147, ankle_phase=1.4774, period=0.5)
RUN_LEFT = dict(hip_amp=-0.3479, knee_amp=0.4357, ankle_amp=0.0321,
                lean=-0.1184, knee_phase=1.5196, ankle_phase=0.4180, period=0.5)
SIDE = dict(hip_amp=0.0776, knee_amp=0.1825, ankle_amp=-0.0413,
            lean=-0.0630, knee_phase=5.0498, ankle_phase=-3.0202, period=0.8)
GESTURE = dict(hip=0.12, knee=0.03, ankle=-0.03)


# walk-random-turns: fixed irregular forward/backward segments; direction
# only flips while the envelope is at zero (a brief stand), because the
# forward and backward gaits are separately tuned and do not blend.
_TURN_SEGMENTS = ((0.0, 3.2, +1), (3.9, 6.8, -1), (7.5, 10.1, +1), (10.8, 15.01, -1))
_TURN_RAMP = 0.35


def _turn_envelope(t: float) -> tuple[float, int]:
    """(blend weight in [0,1], direction) at time t."""
    for t0, t1, d in _TURN_SEGMENTS:
        if t0 <= t < t1:
            e = min(1.0, min(t - t0, t1 - t) / _TURN_RAMP) if t1 - t0 > 2 * _TURN_RAMP else 1.0
            return max(0.0, e), d
    return 0.0, +1


def _sway(t: float) -> float:
    """Non-cyclic gesture profile: bounded, non-repeating over 15 s."""
    return (0.5 * math.sin(2.0 * math.pi * t / 4.7 + 0.4)
            + 0.35 * math.sin(2.0 * math.pi * t / 1.9 + 1.7)
            + 0.15 * math.sin(2.0 * math.pi * t / 0.83 + 3.1))


def builtin_behaviors() -> dict[str, BehaviorSpec]:
    hip0, knee0, ankle0 = STAND_POSE
    lib: dict[str, BehaviorSpec] = {}

    stand_tracks = tuple(KnotTrack.constant(v) for v in (hip0, knee0, ankle0) * 2)
    lib["stand"] = BehaviorSpec(
        name="stand", category=NON_CYCLIC, duration=DURATION_S,
        joint_tracks=stand_tracks, root_velocity=KnotTrack.constant(0.0))

    def cyclic(name, category, params, speed):
        p = dict(params)
        period = p.pop("period")
        return _cyclic_behavior(name, category, _leg_wave(**p, period=period), period, speed)

    lib["walk-forward"] = cyclic("walk-forward", CYCLIC_MODERATE, WALK_FWD, 0.27)
    lib["walk-backward"] = cyclic("walk-backward", CYCLIC_MODERATE, WALK_BWD, -0.27)
    lib["run-forward"] = cyclic("run-forward", CYCLIC_FAST, RUN_FWD, 0.53)
    lib["run-left"] = cyclic("run-left", CYCLIC_FAST, RUN_LEFT, -0.51)
    lib["side-step"] = cyclic("side-step", CYCLIC_MODERATE, SIDE, 0.0)

    fwd_p = dict(WALK_FWD)
    bwd_p = dict(WALK_BWD)
    fwd_leg = _leg_wave(**{k: v for k, v in fwd_p.items() if k != "period"}, period=fwd_p["period"])
    bwd_leg = _leg_wave(**{k: v for k, v in bwd_p.items() if k != "period"}, period=bwd_p["period"])
    stand_targets = (hip0, knee0, ankle0)

    def turning_leg(t, phase):
        e, d = _turn_envelope(t)
        gait = fwd_leg(t, phase) if d > 0 else bwd_leg(t, phase)
        return tuple(s + e * (g - s) for g, s in zip(gait, stand_targets))

    def turning_speed(t):
        e, d = _turn_envelope(t)
        return e * d * 0.27

    lib["walk-random-turns"] = _scheduled_behavior(
        "walk-random-turns", CYCLIC_MODERATE, turning_leg, turning_speed)

    def gesture_leg(t, phase):
        s = _sway(t + (0.35 if phase > 0 else 0.0))
        hip = hip0 + GESTURE["hip"] * s
        knee = knee0 - GESTURE["knee"] * abs(s)
        ankle = ankle0 + GESTURE["ankle"] * s
        return hip, knee, ankle

    lib["arm-gesture-stand"] = _scheduled_behavior(
        "arm-gesture-stand", NON_CYCLIC, gesture_leg, lambda t: 0.0)

    return lib
