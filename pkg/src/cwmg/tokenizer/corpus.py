"""Corpus files (JSON lines) and token statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ..errors import CorpusFormatError, ParameterError
from ..vocab import TokenType, Vocabulary, build_vocabulary
from .compound import TokenSequence


def dumps_sequence(seq: TokenSequence) -> str:
    doc = {"id": seq.id, "genre": seq.genre, "words": [list(w) for w in seq.words]}
    return json.dumps(doc, separators=(",", ":"))


def write_corpus(path, sequences) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            fh.write(dumps_sequence(seq) + "\n")


def loads_sequence(line: str, lineno: int | None = None) -> TokenSequence:
    try:
        doc = json.loads(line)
        words = doc["words"]
        if not isinstance(words, list) or any(not isinstance(w, list) or len(w) != len(TokenType) for w in words):
            raise ValueError("each word must be a list of 8 integers")
        if any(not isinstance(x, int) or isinstance(x, bool) for w in words for x in w):
            raise ValueError("word entries must be integers")
        return TokenSequence(words=words, id=str(doc["id"]), genre=str(doc["genre"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise CorpusFormatError(f"malformed corpus line ({exc})", lineno) from None


def read_corpus(path) -> list:
    out = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise CorpusFormatError("not UTF-8 text", lineno) from None
            if line.strip():
                out.append(loads_sequence(line, lineno))
    return out


@dataclass
class CorpusStats:
    histograms: dict  # TokenType -> counts indexed by id
    song_lengths: list  # (id, number of words)

    @property
    def total_words(self) -> int:
        return sum(n for _, n in self.song_lengths)

    @property
    def mean_words(self) -> float:
        return self.total_words / len(self.song_lengths)


def corpus_stats(dataset, v: Vocabulary | None = None) -> CorpusStats:
    """Per-type id histograms and per-song word counts."""
    v = v or build_vocabulary()
    if not dataset:
        raise ParameterError("corpus_stats needs at least one sequence")
    hist = {t: np.zeros(v.size(t), dtype=np.int64) for t in TokenType}
    lengths = []
    for seq in dataset:
        arr = seq.as_array()
        for t in TokenType:
            if len(arr):
                hist[t] += np.bincount(arr[:, t], minlength=v.size(t))[: v.size(t)]
        lengths.append((seq.id, len(seq)))
    return CorpusStats(hist, lengths)


def stats_csv(stats: CorpusStats, v: Vocabulary | None = None) -> str:
    v = v or build_vocabulary()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["type", "label", "count"])
    for t in TokenType:
        for i, label in enumerate(v.labels(t)):
            w.writerow([t.name, label, int(stats.histograms[t][i])])
    return buf.getvalue()


def song_lengths_csv(stats: CorpusStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "words"])
    for sid, n in stats.song_lengths:
        w.writerow([sid, n])
    return buf.getvalue()
