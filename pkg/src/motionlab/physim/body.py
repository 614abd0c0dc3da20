"""Planar articulated-body description.

Geometry conventions (all angles in radians, CCW positive, world x right /
z up, gravity along -z):

* Every link is a segment starting at its pivot and extending along its axis;
  the axis direction is phi = parent phi + mount + joint angle. The root link
  hangs off the floating base: phi_root = root_angle + mount_root.
* A joint sits ``anchor`` metres along the parent link axis from the parent
  pivot; the child link pivots there.
* The link's centre of mass lies ``com`` metres along its own axis; contact
  points (feet) are offsets along the foot axis, so a heel can sit behind the
  ankle (negative offset).

The default biped: torso (root, pointing up), two legs of thigh/shank/foot.
Joint zero conventions: hip 0 = thigh straight down, knee 0 = shank aligned
with thigh, ankle 0 = foot aligned with shank (pointing down). A flat foot
therefore needs an ankle angle near +pi/2 - the all-zeros action is a tiptoe
pose, not a standing pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

from motionlab.errors import FormatError


@dataclass(frozen=True)
class Link:
    name: str
    mass: float        # kg
    length: float      # m
    inertia: float     # kg m^2 about the COM
    com: float         # m along the link axis from the pivot
    mount: float = 0.0  # rad offset added to the parent axis direction


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int        # parent link index
    child: int         # child link index
    anchor: float      # m along the parent axis from the parent pivot
    lo: float          # rad
    hi: float          # rad
    kp: float          # N m / rad
    kd: float          # N m s / rad
    torque_limit: float  # N m


@dataclass(frozen=True)
class FootGeometry:
    link: int                  # foot link index
    contacts: tuple[float, float]  # (heel, toe) offsets along the foot axis, m


@dataclass(frozen=True)
class BodyModel:
    name: str
    links: tuple[Link, ...]
    joints: tuple[Joint, ...]
    feet: tuple[FootGeometry, ...]
    root_link: int = 0
    standing_height: float = 0.8   # m, root height in the standing pose
    standing_pose: tuple[float, ...] = ()  # rad per actuated joint
    gravity: float = 9.81          # m/s^2, downward
    root_free: bool = True         # False pins the floating base (tests)
    contact_stiffness: float = 1.0e4   # N/m per contact point
    contact_damping: float = 1.0e2     # N s/m
    friction_mu: float = 1.0

    def __post_init__(self):
        if any(l.mass <= 0 or l.length <= 0 or l.inertia <= 0 for l in self.links):
            raise FormatError("link masses, lengths, inertias must be strictly positive")
        for j in self.joints:
            if not j.lo < j.hi:
                raise FormatError(f"joint {j.name}: limits must satisfy lo < hi")
            if j.kp < 0 or j.kd < 0:
                raise FormatError(f"joint {j.name}: kp, kd must be >= 0")
        seen = {self.root_link}
        for j in self.joints:
            if j.parent not in seen or j.child in seen:
                raise FormatError("joints must form a tree rooted at the root link, topologically ordered")
            seen.add(j.child)
        if len(seen) != len(self.links):
            raise FormatError("every link must be connected to the tree")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def joint_limits(self):
        lo = [j.lo for j in self.joints]
        hi = [j.hi for j in self.joints]
        return lo, hi

    def with_gains(self, kp: float, kd: float) -> "BodyModel":
        """Copy with every joint's PD gains replaced (handy for tests)."""
        joints = tuple(replace(j, kp=kp, kd=kd) for j in self.joints)
        return replace(self, joints=joints)

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "name": self.name,
            "gravity": self.gravity,
            "standing_height": self.standing_height,
            "standing_pose": list(self.standing_pose),
            "root_link": self.root_link,
            "root_free": self.root_free,
            "contact": {
                "stiffness": self.contact_stiffness,
                "damping": self.contact_damping,
                "friction_mu": self.friction_mu,
            },
            "links": [asdict(l) for l in self.links],
            "joints": [asdict(j) for j in self.joints],
            "feet": [{"link": f.link, "contacts": list(f.contacts)} for f in self.feet],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "BodyModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"body model is not valid JSON: {e}") from e
        try:
            contact = doc.get("contact", {})
            return BodyModel(
                name=doc["name"],
                links=tuple(Link(**l) for l in doc["links"]),
                joints=tuple(Joint(**j) for j in doc["joints"]),
                feet=tuple(FootGeometry(link=f["link"], contacts=tuple(f["contacts"])) for f in doc["feet"]),
                root_link=doc.get("root_link", 0),
                standing_height=doc["standing_height"],
                standing_pose=tuple(doc.get("standing_pose", ())),
                gravity=doc.get("gravity", 9.81),
                root_free=doc.get("root_free", True),
                contact_stiffness=contact.get("stiffness", 1.0e4),
                contact_damping=contact.get("damping", 1.0e2),
                friction_mu=contact.get("friction_mu", 1.0),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"body model JSON missing or malformed field: {e}") from e

    @staticmethod
    def load(path: str | Path) -> "BodyModel":
        return BodyModel.from_json(Path(path).read_text(encoding="utf-8"))


# Joint order of the default biped; modules that need per-joint names use this.
BIPED_JOINTS = ("hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r")

STAND_ANKLE = math.pi / 2  # flat foot


def default_biped() -> BodyModel:
    """Planar 9-DoF biped: 3 root DoF + 6 actuated joints (2 hips, 2 knees,
    2 ankles). Standing: straight legs, flat feet, root 0.8 m above ground."""
    torso = Link("torso", mass=16.0, length=0.60, inertia=0.48, com=0.30, mount=math.pi / 2)
    thigh = dict(mass=4.0, length=0.40, inertia=4.0 * 0.40**2 / 12, com=0.20, mount=math.pi)
    shank = dict(mass=3.0, length=0.40, inertia=3.0 * 0.40**2 / 12, com=0.20, mount=0.0)
    # foot inertia is above the thin-rod value; feet carry most of the
    # balance authority, so they are long and not too light
    foot = dict(mass=1.0, length=0.32, inertia=0.02, com=0.06, mount=0.0)
    links = (
        torso,
        Link("thigh_l", **thigh), Link("shank_l", **shank), Link("foot_l", **foot),
        Link("thigh_r", **thigh), Link("shank_r", **shank), Link("foot_r", **foot),
    )
    hip = dict(anchor=0.0, lo=-1.6, hi=1.6, kp=500.0, kd=35.0, torque_limit=120.0)
    knee = dict(anchor=0.40, lo=-2.4, hi=0.25, kp=500.0, kd=30.0, torque_limit=120.0)
    ankle = dict(anchor=0.40, lo=0.15, hi=2.6, kp=700.0, kd=20.0, torque_limit=60.0)
    joints = (
        Joint("hip_l", parent=0, child=1, **hip),
        Joint("knee_l", parent=1, child=2, **knee),
        Joint("ankle_l", parent=2, child=3, **ankle),
        Joint("hip_r", parent=0, child=4, **hip),
        Joint("knee_r", parent=4, child=5, **knee),
        Joint("ankle_r", parent=5, child=6, **ankle),
    )
    feet = (FootGeometry(link=3, contacts=(-0.10, 0.22)),
            FootGeometry(link=6, contacts=(-0.10, 0.22)))
    # slight crouch keeps the knees off their straight-leg singularity
    crouch = 0.3
    stand = (crouch, -2 * crouch, STAND_ANKLE + crouch)
    return BodyModel(
        name="biped-6dof",
        links=links,
        joints=joints,
        feet=feet,
        standing_height=0.8 * math.cos(crouch),
        standing_pose=stand * 2,
    )
