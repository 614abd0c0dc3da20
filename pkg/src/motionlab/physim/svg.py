"""Stick-figure SVG export: a horizontal strip of frames, optionally with a
reference sequence drawn underneath at reduced opacity (the gray ghost).
Uses only SVG 1.1 lines and circles so any viewer renders it.
"""

from __future__ import annotations

import numpy as np

from motionlab.errors import MotionLabError
from motionlab.physim.body import BodyModel
from motionlab.physim.sim import Simulator, SimState

_GEN_COLOR = "#b5651d"
_REF_COLOR = "#7a7a7a"


def _frame_lines(sim: Simulator, state: SimState, ox: float, scale: float,
                 base_y: float, color: str, opacity: float) -> list[str]:
    segs = sim.link_segments(state)
    out = []
    for (x0, z0), (x1, z1) in segs:
        out.append(
            f'<line x1="{ox + x0 * scale:.2f}" y1="{base_y - z0 * scale:.2f}" '
            f'x2="{ox + x1 * scale:.2f}" y2="{base_y - z1 * scale:.2f}" '
            f'stroke="{color}" stroke-width="3" stroke-linecap="round" opacity="{opacity:.2f}"/>'
        )
    # joint dots plus a head circle on the torso tip
    for (x0, z0), _ in segs[1:]:
        out.append(
            f'<circle cx="{ox + x0 * scale:.2f}" cy="{base_y - z0 * scale:.2f}" r="2.5" '
            f'fill="{color}" opacity="{opacity:.2f}"/>'
        )
    hx, hz = segs[sim.model.root_link][1]
    out.append(
        f'<circle cx="{ox + hx * scale:.2f}" cy="{base_y - hz * scale:.2f}" r="{0.09 * scale:.2f}" '
        f'fill="none" stroke="{color}" stroke-width="3" opacity="{opacity:.2f}"/>'
    )
    return out


def render_svg(states, model: BodyModel, reference=None, *, max_frames: int = 12,
               scale: float = 70.0) -> str:
    """Render a sequence of SimStates as side-by-side stick figures.

    ``reference`` (optional) is a second sequence drawn first at reduced
    opacity; it is sampled at the same frame indices as ``states``.
    """
    states = list(states)
    if not states:
        raise MotionLabError("render_svg needs a non-empty state sequence")
    reference = list(reference) if reference is not None else None

    sim = Simulator(model)
    n = min(max_frames, len(states))
    idx = np.unique(np.linspace(0, len(states) - 1, n).round().astype(int))

    frame_w = 2.4 * scale
    height = int(2.2 * scale)
    base_y = height - 0.25 * scale
    width = int(frame_w * len(idx))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<line x1="0" y1="{base_y:.2f}" x2="{width}" y2="{base_y:.2f}" '
        f'stroke="#222222" stroke-width="1" opacity="1.00"/>',
    ]
    for fi, si in enumerate(idx):
        # keep each figure centred in its frame regardless of travel
        def centered(seq, i):
            st = seq[min(i, len(seq) - 1)]
            ox = frame_w * fi + frame_w / 2 - st.root_pos[0] * scale
            return st, ox

        if reference:
            st, ox = centered(reference, si)
            parts += _frame_lines(sim, st, ox, scale, base_y, _REF_COLOR, 0.35)
        st, ox = centered(states, si)
        parts += _frame_lines(sim, st, ox, scale, base_y, _GEN_COLOR, 1.0)
    parts.append("</svg>")
    return "\n".join(parts)
