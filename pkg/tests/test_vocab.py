import json

import pytest

from cwmg import vocab as V
from cwmg.errors import VocabLookupError
from cwmg.vocab import CompoundWord, TokenType, Vocabulary, build_vocabulary

EXPECTED_SIZES = {
    TokenType.FAMILY: 4,
    TokenType.TEMPO: 34,
    TokenType.CHORD: 122,
    TokenType.BARBEAT: 19,
    TokenType.PITCH: 90,
    TokenType.DURATION: 34,
    TokenType.VELOCITY: 34,
    TokenType.GENRE: 6,
}


def note_word(v, pitch=60, dur=4, vel=20, genre="edm"):
    return CompoundWord(
        V.FAMILY_NOTE, 1, 1, 1,
        v.encode(TokenType.PITCH, str(pitch)),
        v.encode(TokenType.DURATION, str(dur)),
        v.encode(TokenType.VELOCITY, f"bin_{vel}"),
        v.encode(TokenType.GENRE, genre),
    )  # fmt: skip


def test_token_type_enum():
    assert [t.name for t in TokenType] == ["FAMILY", "TEMPO", "CHORD", "BARBEAT", "PITCH", "DURATION", "VELOCITY", "GENRE"]
    assert [int(t) for t in TokenType] == list(range(8))


def test_sizes(vocab):
    for t, n in EXPECTED_SIZES.items():
        assert vocab.size(t) == n, t
    # 12 roots x 10 qualities + 2 specials; 88 keys + 2 specials
    assert vocab.size(TokenType.CHORD) == 12 * 10 + 2
    assert vocab.size(TokenType.PITCH) == 88 + 2


def test_specials(vocab):
    for t in TokenType:
        assert vocab.decode(t, 0) == "[pad]"
        if t in (TokenType.FAMILY, TokenType.GENRE):
            assert "[ignore]" not in vocab.labels(t)
            assert not vocab.has_ignore(t)
        else:
            assert vocab.decode(t, 1) == "[ignore]"


def test_examples(vocab):
    assert list(vocab.labels(TokenType.FAMILY)) == ["[pad]", "metric", "note", "eos"]
    assert "C:maj" in vocab.labels(TokenType.CHORD) and "B:sus4" in vocab.labels(TokenType.CHORD)
    assert vocab.encode(TokenType.TEMPO, "bin_0") == 2
    k = V.encode_label(TokenType.PITCH, "60")
    assert V.decode_id(TokenType.PITCH, k) == "60"
    assert list(vocab.labels(TokenType.GENRE)) == ["[pad]", "edm", "indie", "hiphop", "pop", "unknown"]


def test_lookup_errors_name_type_and_value(vocab):
    with pytest.raises(VocabLookupError) as exc:
        vocab.encode(TokenType.CHORD, "H:maj")
    assert "CHORD" in str(exc.value) and "H:maj" in str(exc.value)
    with pytest.raises(VocabLookupError) as exc:
        vocab.decode(TokenType.PITCH, 9999)
    assert "PITCH" in str(exc.value) and "9999" in str(exc.value)


def test_round_trip_all_ids(vocab):
    for t in TokenType:
        for i in range(vocab.size(t)):
            assert vocab.encode(t, vocab.decode(t, i)) == i


def test_idempotent_and_versioned():
    a, b = build_vocabulary(), Vocabulary(V._labels())
    assert a == b and hash(a) == hash(b)
    assert a.version == V.VOCAB_VERSION
    assert a.to_json() == b.to_json()


def test_vocab_json(vocab):
    text = vocab.to_json()
    doc = json.loads(text)
    assert set(doc) == {t.name for t in TokenType}
    assert all(set(entry) == {"labels", "version"} for entry in doc.values())
    assert Vocabulary.from_json(text) == vocab


def test_validate_examples(vocab):
    good = note_word(vocab)
    assert V.validate(good, vocab) == []
    bad = good._replace(tempo=vocab.encode(TokenType.TEMPO, "bin_5"))
    problems = V.validate(bad, vocab)
    assert any("metric field" in p and "TEMPO" in p for p in problems)
    out = V.validate(good._replace(pitch=9999), vocab)
    assert any("out of range" in p for p in out)


def test_validate_rules(vocab):
    g = vocab.encode(TokenType.GENRE, "pop")
    beat = CompoundWord(V.FAMILY_METRIC, 5, 10, 3, 1, 1, 1, g)
    assert V.is_valid(beat, vocab)
    assert not V.is_valid(beat._replace(pitch=50), vocab)
    assert not V.is_valid(beat._replace(genre=0), vocab)
    eos = CompoundWord(V.FAMILY_EOS, 1, 1, 1, 1, 1, 1, g)
    assert V.is_valid(eos, vocab)
    assert not V.is_valid(eos._replace(pitch=40), vocab)
    assert V.validate((1, 2, 3), vocab)  # wrong arity reported, not raised


def test_bins():
    assert V.tempo_bin(32) == 0 and V.tempo_bin(37.9) == 0 and V.tempo_bin(38) == 1
    assert V.tempo_bin(10) == 0 and V.tempo_bin(500) == 31
    assert V.tempo_value(0) == 35.0
    assert V.velocity_bin(0) == 0 and V.velocity_bin(127) == 31
    for b in range(32):
        assert V.tempo_bin(V.tempo_value(b)) == b
        assert V.velocity_bin(V.velocity_value(b)) == b
