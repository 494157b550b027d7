"""Deterministic SVG output: piano rolls and token histograms."""

from __future__ import annotations

from .. import vocab as V
from .track import TICKS_PER_BAR, NoteEventTrack

PX_PER_TICK = 6
PX_PER_PITCH = 4
MARGIN = 20


def render_piano_roll(track: NoteEventTrack, title: str = "") -> str:
    """Time-vs-pitch rectangles, one per note, over a bar/octave grid."""
    n_ticks = max(track.end_tick(), TICKS_PER_BAR)
    n_ticks = -(-n_ticks // TICKS_PER_BAR) * TICKS_PER_BAR
    n_pitch = V.PITCH_MAX - V.PITCH_MIN + 1
    width = n_ticks * PX_PER_TICK + 2 * MARGIN
    height = n_pitch * PX_PER_PITCH + 2 * MARGIN

    def y_of(pitch):
        return MARGIN + (V.PITCH_MAX - pitch) * PX_PER_PITCH

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{_escape(title)}</title>",
        f'<rect class="background" x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        '<g class="grid" stroke="#cccccc" stroke-width="1">',
    ]
    bottom = MARGIN + n_pitch * PX_PER_PITCH
    for tick in range(0, n_ticks + 1, TICKS_PER_BAR):
        x = MARGIN + tick * PX_PER_TICK
        out.append(f'<line x1="{x}" y1="{MARGIN}" x2="{x}" y2="{bottom}"/>')
    for pitch in range(V.PITCH_MIN, V.PITCH_MAX + 1):
        if pitch % 12 == 0:
            y = y_of(pitch) + PX_PER_PITCH
            out.append(f'<line x1="{MARGIN}" y1="{y}" x2="{width - MARGIN}" y2="{y}"/>')
    out.append("</g>")
    out.append('<g class="notes" fill="#3366aa" stroke="#1a3355" stroke-width="0.5">')
    for n in track.notes:
        x = MARGIN + n.onset * PX_PER_TICK
        out.append(
            f'<rect class="note" x="{x}" y="{y_of(n.pitch)}" width="{n.duration * PX_PER_TICK}" '
            f'height="{PX_PER_PITCH}" data-pitch="{n.pitch}" data-onset="{n.onset}"/>'
        )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_histograms(stats, v=None) -> str:
    """One bar chart panel per token type, heights normalised per panel."""
    from ..vocab import TokenType, build_vocabulary

    v = v or build_vocabulary()
    panel_w, panel_h, gap = 420, 120, 30
    width = panel_w + 2 * MARGIN
    height = len(TokenType) * (panel_h + gap) + MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for k, t in enumerate(TokenType):
        counts = stats.histograms[t]
        top = MARGIN + k * (panel_h + gap)
        peak = max(int(counts.max()), 1)
        bar_w = panel_w / len(counts)
        out.append(f'<g class="panel" data-type="{t.name}">')
        out.append(f'<text x="{MARGIN}" y="{top - 4}" font-size="11">{t.name}</text>')
        for i, c in enumerate(counts):
            h = round(panel_h * int(c) / peak, 3)
            x = round(MARGIN + i * bar_w, 3)
            out.append(
                f'<rect x="{x}" y="{round(top + panel_h - h, 3)}" width="{round(bar_w, 3)}" '
                f'height="{h}" fill="#aa5533"><title>{_escape(v.labels(t)[i])}: {int(c)}</title></rect>'
            )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
