"""Small deterministic songs used for desk-scale training runs."""

from __future__ import annotations

from dataclasses import replace

from .tokenizer import Note, NoteEventTrack, TokenSequence, to_compound_words
from .training import TrainConfig

# C, Am, F, G as (bass, chord tone) pairs per half bar
_PROGRESSION = [
    ((48, 64), (55, 67)),
    ((45, 64), (52, 69)),
    ((41, 65), (48, 69)),
    ((43, 62), (50, 67)),
]


def looped_track(n_bars: int = 9, genre: str = "edm", bpm: float = 119.0) -> NoteEventTrack:
    """A I-vi-IV-V loop, two notes on beats 0 and 8 of every bar.

    Each bar encodes to 7 words, so the default 9 bars give 64 words with eos.
    """
    notes = []
    for bar in range(n_bars):
        for half, (low, high) in enumerate(_PROGRESSION[bar % len(_PROGRESSION)]):
            onset = bar * 16 + half * 8
            notes.append(Note(onset, 8, low, 82))
            notes.append(Note(onset, 4, high, 98))
    return NoteEventTrack(notes=notes, tempo_changes=[(0, bpm)], genre=genre)


def looped_song(n_bars: int = 9, genre: str = "edm") -> TokenSequence:
    return to_compound_words(looped_track(n_bars, genre), source_id=f"loop-{genre}-{n_bars}")


def toy_train_config(**overrides) -> TrainConfig:
    """Training settings for the toy model on the looped song."""
    return replace(TrainConfig(batch_size=4, epochs=200, lr=3e-3, seed=2), **overrides)
