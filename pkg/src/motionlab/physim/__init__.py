from motionlab.physim.body import BodyModel, Link, Joint, FootGeometry, default_biped
from motionlab.physim.sim import SimState, Simulator, ObservationLayout
from motionlab.physim.svg import render_svg

__all__ = [
    "BodyModel",
    "Link",
    "Joint",
    "FootGeometry",
    "default_biped",
    "SimState",
    "Simulator",
    "ObservationLayout",
    "render_svg",
]
