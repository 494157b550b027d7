"""Token types, closed-form vocabulary tables and compound-word validation."""

from __future__ import annotations

import enum
import json
from functools import lru_cache
from typing import NamedTuple

from .errors import VocabLookupError

VOCAB_VERSION = "cwmg-vocab-1"

PAD = "[pad]"
IGNORE = "[ignore]"
PAD_ID = 0
IGNORE_ID = 1

TEMPO_MIN = 32.0
TEMPO_STEP = 6.0
N_TEMPO_BINS = 32
VELOCITY_STEP = 4
N_VELOCITY_BINS = 32
BEATS_PER_BAR = 16
MAX_DURATION = 32
PITCH_MIN, PITCH_MAX = 21, 108

ROOTS = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
QUALITIES = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "dom7": (0, 4, 7, 10),
    "min7": (0, 3, 7, 10),
    "maj7": (0, 4, 7, 11),
    "sus2": (0, 2, 7),
    "sus4": (0, 5, 7),
    "none": (0,),
}
GENRES = ("edm", "indie", "hiphop", "pop", "unknown")


class TokenType(enum.IntEnum):
    FAMILY = 0
    TEMPO = 1
    CHORD = 2
    BARBEAT = 3
    PITCH = 4
    DURATION = 5
    VELOCITY = 6
    GENRE = 7


METRIC_TYPES = (TokenType.TEMPO, TokenType.CHORD, TokenType.BARBEAT)
NOTE_TYPES = (TokenType.PITCH, TokenType.DURATION, TokenType.VELOCITY)


class CompoundWord(NamedTuple):
    family: int
    tempo: int
    chord: int
    barbeat: int
    pitch: int
    duration: int
    velocity: int
    genre: int


# family ids, fixed by the table layout below
FAMILY_METRIC = 1
FAMILY_NOTE = 2
FAMILY_EOS = 3


def _labels():
    tables = {
        TokenType.FAMILY: [PAD, "metric", "note", "eos"],
        TokenType.TEMPO: [PAD, IGNORE] + [f"bin_{i}" for i in range(N_TEMPO_BINS)],
        TokenType.CHORD: [PAD, IGNORE] + [f"{r}:{q}" for r in ROOTS for q in QUALITIES],
        TokenType.BARBEAT: [PAD, IGNORE, "bar"] + [f"beat_{i}" for i in range(BEATS_PER_BAR)],
        TokenType.PITCH: [PAD, IGNORE] + [str(p) for p in range(PITCH_MIN, PITCH_MAX + 1)],
        TokenType.DURATION: [PAD, IGNORE] + [str(d) for d in range(1, MAX_DURATION + 1)],
        TokenType.VELOCITY: [PAD, IGNORE] + [f"bin_{i}" for i in range(N_VELOCITY_BINS)],
        TokenType.GENRE: [PAD] + list(GENRES),
    }
    return tables


class Vocabulary:
    """Per-type label tables. Immutable once built."""

    def __init__(self, tables, version=VOCAB_VERSION):
        self.version = version
        self._labels = {t: tuple(tables[t]) for t in TokenType}
        self._ids = {t: {lab: i for i, lab in enumerate(labs)} for t, labs in self._labels.items()}

    def labels(self, t: TokenType):
        return self._labels[TokenType(t)]

    def size(self, t: TokenType) -> int:
        return len(self._labels[TokenType(t)])

    @property
    def sizes(self):
        return tuple(len(self._labels[t]) for t in TokenType)

    def encode(self, t: TokenType, label: str) -> int:
        t = TokenType(t)
        try:
            return self._ids[t][label]
        except KeyError:
            raise VocabLookupError(f"unknown {t.name} label {label!r}") from None

    def decode(self, t: TokenType, token_id: int) -> str:
        t = TokenType(t)
        labs = self._labels[t]
        if not 0 <= token_id < len(labs):
            raise VocabLookupError(f"unknown {t.name} id {token_id}")
        return labs[token_id]

    def has_ignore(self, t: TokenType) -> bool:
        return TokenType(t) not in (TokenType.FAMILY, TokenType.GENRE)

    def to_json(self) -> str:
        doc = {t.name: {"labels": list(self._labels[t]), "version": self.version} for t in TokenType}
        return json.dumps(doc, indent=1, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str):
        doc = json.loads(text)
        versions = {doc[t.name]["version"] for t in TokenType}
        if len(versions) != 1:
            raise ValueError(f"mixed vocabulary versions {sorted(versions)}")
        return cls({t: doc[t.name]["labels"] for t in TokenType}, version=versions.pop())

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.version == other.version and self._labels == other._labels

    def __hash__(self):
        return hash((self.version, tuple(self._labels[t] for t in TokenType)))


@lru_cache(maxsize=None)
def build_vocabulary() -> Vocabulary:
    return Vocabulary(_labels())


def encode_label(t: TokenType, label: str, v: Vocabulary | None = None) -> int:
    return (v or build_vocabulary()).encode(t, label)


def decode_id(t: TokenType, token_id: int, v: Vocabulary | None = None) -> str:
    return (v or build_vocabulary()).decode(t, token_id)


# value <-> label helpers for binned types


def tempo_bin(bpm: float) -> int:
    b = int((bpm - TEMPO_MIN) // TEMPO_STEP)
    return min(max(b, 0), N_TEMPO_BINS - 1)


def tempo_value(b: int) -> float:
    """Representative BPM of a tempo bin (its centre)."""
    return TEMPO_MIN + TEMPO_STEP * b + TEMPO_STEP / 2


def velocity_bin(velocity: int) -> int:
    return min(max(int(velocity) // VELOCITY_STEP, 0), N_VELOCITY_BINS - 1)


def velocity_value(b: int) -> int:
    return VELOCITY_STEP * b + VELOCITY_STEP // 2


def validate(cw, v: Vocabulary | None = None) -> list[str]:
    """All invariant violations of one compound word; empty means valid."""
    v = v or build_vocabulary()
    problems = []
    cw = tuple(int(x) for x in cw)
    if len(cw) != len(TokenType):
        return [f"expected {len(TokenType)} fields, got {len(cw)}"]
    for t in TokenType:
        if not 0 <= cw[t] < v.size(t):
            problems.append(f"{t.name} id {cw[t]} out of range [0, {v.size(t)})")
    if problems:
        return problems

    family = cw[TokenType.FAMILY]
    if family == PAD_ID:
        problems.append("family is [pad]")
    elif family == FAMILY_METRIC:
        for t in NOTE_TYPES:
            if cw[t] != IGNORE_ID:
                problems.append(f"note field {t.name} set on metric event")
        if cw[TokenType.BARBEAT] in (PAD_ID, IGNORE_ID):
            problems.append("metric event without bar/beat")
    elif family == FAMILY_NOTE:
        for t in METRIC_TYPES:
            if cw[t] != IGNORE_ID:
                problems.append(f"metric field {t.name} set on note event")
        for t in NOTE_TYPES:
            if cw[t] in (PAD_ID, IGNORE_ID):
                problems.append(f"note event without {t.name}")
    elif family == FAMILY_EOS:
        for t in METRIC_TYPES + NOTE_TYPES:
            if cw[t] not in (PAD_ID, IGNORE_ID):
                problems.append(f"field {t.name} set on eos event")
    if family != FAMILY_EOS and family != PAD_ID:
        for t in METRIC_TYPES + NOTE_TYPES:
            if cw[t] == PAD_ID:
                problems.append(f"{t.name} is [pad] on a non-padding event")
    if cw[TokenType.GENRE] == PAD_ID and family != PAD_ID:
        problems.append("genre is [pad]")
    return problems


def is_valid(cw, v: Vocabulary | None = None) -> bool:
    return not validate(cw, v)
