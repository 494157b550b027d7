"""Half-bar chord labelling by pitch-class template matching."""

from __future__ import annotations

import numpy as np

from .. import vocab as V
from .track import TICKS_PER_BAR, NoteEventTrack

HALF_BAR = TICKS_PER_BAR // 2
SILENT = "none"


def _templates():
    labels, rows = [], []
    for r, root in enumerate(V.ROOTS):
        for quality, intervals in V.QUALITIES.items():
            row = np.zeros(12)
            row[[(r + i) % 12 for i in intervals]] = 1.0
            labels.append(f"{root}:{quality}")
            rows.append(row / np.linalg.norm(row))
    return labels, np.array(rows)


TEMPLATE_LABELS, TEMPLATES = _templates()


def match_chord(histogram) -> str:
    """Best cosine match of a 12-bin pitch-class histogram; first template wins ties."""
    h = np.asarray(histogram, dtype=float)
    norm = np.linalg.norm(h)
    if norm == 0:
        return SILENT
    scores = TEMPLATES @ (h / norm)
    # round so that exact ties are not split by floating-point noise
    return TEMPLATE_LABELS[int(np.argmax(np.round(scores, 12)))]


def detect_chords(track: NoteEventTrack):
    """One (bar, beat 0|8, label) per half-bar, weighted by sounding time."""
    n_half = 2 * track.n_bars
    hist = np.zeros((n_half, 12))
    for n in track.notes:
        start, end = n.onset, n.onset + n.duration
        first = start // HALF_BAR
        last = min((end - 1) // HALF_BAR, n_half - 1)
        for h in range(first, last + 1):
            lo, hi = max(start, h * HALF_BAR), min(end, (h + 1) * HALF_BAR)
            hist[h, n.pitch % 12] += hi - lo
    return [(h // 2, (h % 2) * HALF_BAR, match_chord(hist[h])) for h in range(n_half)]
