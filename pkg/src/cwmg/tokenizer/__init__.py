"""Symbolic music <-> compound-word sequences, plus corpus tooling."""

from .chords import detect_chords, match_chord
from .compound import TokenSequence, bar_word, eos_word, from_compound_words, to_compound_words
from .corpus import CorpusStats, corpus_stats, read_corpus, write_corpus
from .render import render_histograms, render_piano_roll
from .smf import parse_smf, write_smf
from .track import Note, NoteEventTrack, quantize_track

__all__ = [
    "CorpusStats",
    "Note",
    "NoteEventTrack",
    "TokenSequence",
    "bar_word",
    "corpus_stats",
    "detect_chords",
    "eos_word",
    "from_compound_words",
    "match_chord",
    "parse_smf",
    "quantize_track",
    "read_corpus",
    "render_histograms",
    "render_piano_roll",
    "to_compound_words",
    "write_corpus",
    "write_smf",
]
