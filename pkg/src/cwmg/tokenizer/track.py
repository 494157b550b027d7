"""Quantized symbolic music: notes on a sixteenth-note grid in 4/4."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

from .. import vocab as V

TICKS_PER_BEAT = 4
TICKS_PER_BAR = V.BEATS_PER_BAR
DEFAULT_BPM = 120.0


class Note(NamedTuple):
    onset: int
    duration: int
    pitch: int
    velocity: int


@dataclass
class NoteEventTrack:
    notes: list = field(default_factory=list)
    tempo_changes: list = field(default_factory=list)
    genre: str = "unknown"
    ticks_per_beat: int = TICKS_PER_BEAT
    meter: tuple = (4, 4)

    def __post_init__(self):
        self.notes = sorted((Note(*n) for n in self.notes), key=lambda n: (n.onset, n.pitch, n.duration, n.velocity))
        self.tempo_changes = [(int(t), float(b)) for t, b in self.tempo_changes]

    @property
    def n_bars(self) -> int:
        if not self.notes:
            return 1
        return self.notes[-1].onset // TICKS_PER_BAR + 1

    def end_tick(self) -> int:
        return max((n.onset + n.duration for n in self.notes), default=0)


def tempo_at(tempo_changes, tick, default=DEFAULT_BPM):
    bpm = tempo_changes[0][1] if tempo_changes else default
    for t, b in tempo_changes:
        if t > tick:
            break
        bpm = b
    return bpm


def quantize_track(track: NoteEventTrack) -> NoteEventTrack:
    """Canonical form: the exact image of a compound-word round trip.

    Pitches are clamped to the piano range, durations to 1..32, velocities
    and tempos snapped to their bin representatives, and tempo changes
    re-sampled at note onsets (first change at tick 0).
    """
    notes = []
    for n in track.notes:
        pitch = n.pitch
        if not V.PITCH_MIN <= pitch <= V.PITCH_MAX:
            warnings.warn(f"pitch {pitch} clamped to piano range", stacklevel=2)
            pitch = min(max(pitch, V.PITCH_MIN), V.PITCH_MAX)
        dur = min(max(int(n.duration), 1), V.MAX_DURATION)
        vel = V.velocity_value(V.velocity_bin(n.velocity))
        notes.append(Note(int(n.onset), dur, pitch, vel))

    changes = []
    current = None
    for tick in sorted({n.onset for n in notes}):
        b = V.tempo_bin(tempo_at(track.tempo_changes, tick))
        if b != current:
            changes.append((0 if current is None else tick, V.tempo_value(b)))
            current = b
    return NoteEventTrack(notes=notes, tempo_changes=changes, genre=track.genre)
