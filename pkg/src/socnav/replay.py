"""Render an episode and its navigation log to a standalone SVG.

The drawing shows the map (obstacles, labelled objects), pedestrian script
paths, the agent's decision-to-decision route, start/goal marks, and an X at
every pose where a collision event was logged.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

from .agent import EpisodeLog
from .world import (Episode, GroupDiscuss, Pace, Stand, WalkPath,
                    pedestrian_state_at)

SCALE = 40.0   # px per meter
MARGIN = 20.0  # px

_PED_COLORS = ("#c0392b", "#8e44ad", "#b9770e", "#117864", "#6c3483")


def _script_polyline(script, dt: float = 0.25, horizon_steps: int = 240):
    """Representative world-frame polyline for a pedestrian script."""
    if isinstance(script, Stand):
        return [tuple(script.position)]
    if isinstance(script, Pace):
        return [tuple(script.a), tuple(script.b)]
    if isinstance(script, WalkPath):
        pts = [tuple(p) for p in script.points]
        return pts + [pts[0]] if script.loop else pts
    if isinstance(script, GroupDiscuss):
        st = pedestrian_state_at(script, 0, dt)
        return [tuple(st.position)]
    return []


def render_svg(episode: Episode, log: EpisodeLog | None = None) -> str:
    wmap = episode.wmap
    x0, y0, x1, y1 = wmap.bounds

    def px(p):
        return (MARGIN + (p[0] - x0) * SCALE, MARGIN + (y1 - p[1]) * SCALE)

    width = MARGIN * 2 + (x1 - x0) * SCALE
    height = MARGIN * 2 + (y1 - y0) * SCALE
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
           f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
           f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" '
           'fill="#fdfdfd"/>']
    bx, by = px((x0, y1))
    out.append(f'<rect x="{bx:.1f}" y="{by:.1f}" '
               f'width="{(x1 - x0) * SCALE:.1f}" '
               f'height="{(y1 - y0) * SCALE:.1f}" fill="#ffffff" '
               'stroke="#333333" stroke-width="2"/>')
    for ox0, oy0, ox1, oy1 in wmap.obstacles:
        cx, cy = px((ox0, oy1))
        out.append(f'<rect x="{cx:.1f}" y="{cy:.1f}" '
                   f'width="{(ox1 - ox0) * SCALE:.1f}" '
                   f'height="{(oy1 - oy0) * SCALE:.1f}" fill="#9aa5b1"/>')
    for obj in wmap.objects:
        cx, cy = px(obj.position)
        out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="3" fill="#2e86c1"/>')
        out.append(f'<text x="{cx + 5:.1f}" y="{cy - 4:.1f}" font-size="10" '
                   f'fill="#2e86c1">{escape(obj.label)}</text>')

    for i, ped in enumerate(episode.pedestrians):
        color = _PED_COLORS[i % len(_PED_COLORS)]
        pts = _script_polyline(ped.script)
        if len(pts) == 1:
            cx, cy = px(pts[0])
            out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="6" '
                       f'fill="none" stroke="{color}" stroke-width="2"/>')
        elif pts:
            path = " ".join(f"{c[0]:.1f},{c[1]:.1f}" for c in map(px, pts))
            out.append(f'<polyline points="{path}" fill="none" '
                       f'stroke="{color}" stroke-width="2" '
                       'stroke-dasharray="6,4"/>')
        cx, cy = px(pts[0])
        out.append(f'<text x="{cx + 6:.1f}" y="{cy + 12:.1f}" font-size="10" '
                   f'fill="{color}">{escape(ped.activity)}</text>')

    sx, sy = px(episode.start[:2])
    gx, gy = px(episode.goal)
    out.append(f'<circle cx="{sx:.1f}" cy="{sy:.1f}" r="5" fill="#1e8449"/>')
    out.append(f'<circle cx="{gx:.1f}" cy="{gy:.1f}" r="7" fill="none" '
               'stroke="#1e8449" stroke-width="3"/>')

    if log is not None:
        route = [episode.start[:2]] + [s.pose[:2] for s in log.steps]
        path = " ".join(f"{c[0]:.1f},{c[1]:.1f}" for c in map(px, route))
        out.append(f'<polyline points="{path}" fill="none" stroke="#212f3d" '
                   'stroke-width="2.5"/>')
        for s in log.steps:
            cx, cy = px(s.pose[:2])
            out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="2.5" '
                       'fill="#212f3d"/>')
            for _ in s.events:
                out.append(
                    f'<path d="M {cx - 5:.1f} {cy - 5:.1f} L {cx + 5:.1f} '
                    f'{cy + 5:.1f} M {cx - 5:.1f} {cy + 5:.1f} L {cx + 5:.1f} '
                    f'{cy - 5:.1f}" stroke="#e74c3c" stroke-width="2.5"/>')
        out.append(f'<text x="{MARGIN:.1f}" y="{height - 6:.1f}" '
                   f'font-size="11" fill="#212f3d">'
                   f'{escape(log.episode_id)}: {escape(log.termination)}, '
                   f'{log.n_events} contact(s)</text>')
    return "\n".join(out) + "\n</svg>\n"


def save_svg(path: str, episode: Episode, log: EpisodeLog | None = None) -> None:
    from .util import atomic_write_text
    atomic_write_text(path, render_svg(episode, log))
