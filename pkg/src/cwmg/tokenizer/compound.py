"""Conversion between note tracks and compound-word sequences."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import vocab as V
from ..errors import StructuralError
from ..vocab import CompoundWord, TokenType, Vocabulary, build_vocabulary
from .chords import HALF_BAR, SILENT, detect_chords
from .track import TICKS_PER_BAR, Note, NoteEventTrack, quantize_track, tempo_at

I = V.IGNORE_ID
BAR_ID = 2  # BARBEAT "bar"; beat_k is BAR_ID + 1 + k


@dataclass
class TokenSequence:
    words: list = field(default_factory=list)
    id: str = ""
    genre: str = "unknown"

    def __post_init__(self):
        self.words = [CompoundWord(*(int(x) for x in w)) for w in self.words]

    def __len__(self):
        return len(self.words)

    def as_array(self) -> np.ndarray:
        return np.array(self.words, dtype=np.int64).reshape(len(self.words), len(TokenType))


def bar_word(genre_id):
    return CompoundWord(V.FAMILY_METRIC, I, I, BAR_ID, I, I, I, genre_id)


def eos_word(genre_id):
    return CompoundWord(V.FAMILY_EOS, I, I, I, I, I, I, genre_id)


def to_compound_words(track: NoteEventTrack, v: Vocabulary | None = None, source_id: str = "") -> TokenSequence:
    """Encode a track as bar / beat / note / eos compound words."""
    v = v or build_vocabulary()
    genre = v.encode(TokenType.GENRE, track.genre)
    for n in track.notes:
        if n.duration > V.MAX_DURATION:
            warnings.warn(f"duration {n.duration} clamped to {V.MAX_DURATION}", stacklevel=2)
            break
    q = quantize_track(track)
    chords = {(bar, beat): label for bar, beat, label in detect_chords(q)}

    by_tick = {}
    for n in q.notes:
        by_tick.setdefault(n.onset, []).append(n)

    words = []
    for bar in range(q.n_bars):
        words.append(bar_word(genre))
        for pos in range(TICKS_PER_BAR):
            tick = bar * TICKS_PER_BAR + pos
            if tick not in by_tick:
                continue
            tempo = 2 + V.tempo_bin(tempo_at(q.tempo_changes, tick))
            label = chords[(bar, (pos // HALF_BAR) * HALF_BAR)]
            chord = I if label == SILENT else v.encode(TokenType.CHORD, label)
            words.append(CompoundWord(V.FAMILY_METRIC, tempo, chord, BAR_ID + 1 + pos, I, I, I, genre))
            for n in sorted(by_tick[tick], key=lambda n: -n.pitch):
                words.append(
                    CompoundWord(
                        V.FAMILY_NOTE,
                        I,
                        I,
                        I,
                        v.encode(TokenType.PITCH, str(n.pitch)),
                        v.encode(TokenType.DURATION, str(n.duration)),
                        2 + V.velocity_bin(n.velocity),
                        genre,
                    )
                )
    words.append(eos_word(genre))
    return TokenSequence(words=words, id=source_id, genre=track.genre)


def from_compound_words(seq: TokenSequence, v: Vocabulary | None = None) -> NoteEventTrack:
    """Decode compound words back into a quantized track.

    Tempo and chord fields left as [ignore] on a beat word keep the previous
    tempo; decoding stops at the first eos word.
    """
    v = v or build_vocabulary()
    words = seq.words
    genre = seq.genre
    if words:
        genre = v.decode(TokenType.GENRE, words[0].genre)
    bar = -1
    beat = None
    tempo = None
    changes = []
    notes = []
    for i, w in enumerate(words):
        problems = V.validate(w, v)
        if problems:
            raise StructuralError("; ".join(problems), i)
        if w.family == V.FAMILY_EOS:
            break
        if w.family == V.FAMILY_METRIC:
            if w.barbeat == BAR_ID:
                bar += 1
                beat = None
                continue
            if bar < 0:
                raise StructuralError("beat word before the first bar", i)
            beat = w.barbeat - BAR_ID - 1
            if w.tempo != I:
                bpm = V.tempo_value(w.tempo - 2)
                if bpm != tempo:
                    tick = 0 if tempo is None else bar * TICKS_PER_BAR + beat
                    if changes and changes[-1][0] == tick:
                        changes.pop()
                    changes.append((tick, bpm))
                    tempo = bpm
        else:
            if beat is None:
                raise StructuralError("note word before any beat word", i)
            notes.append(
                Note(
                    bar * TICKS_PER_BAR + beat,
                    int(v.decode(TokenType.DURATION, w.duration)),
                    int(v.decode(TokenType.PITCH, w.pitch)),
                    V.velocity_value(w.velocity - 2),
                )
            )
    return NoteEventTrack(notes=notes, tempo_changes=changes, genre=genre)
