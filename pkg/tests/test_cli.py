import json
import re

import pytest

from cwmg import toy
from cwmg.cli import UsageError, main, read_config_file
from cwmg.tokenizer import NoteEventTrack, TokenSequence, read_corpus, to_compound_words, write_corpus, write_smf
from cwmg.tokenizer.corpus import dumps_sequence


@pytest.fixture()
def mids(tmp_path):
    d = tmp_path / "mids"
    d.mkdir()
    (d / "a.mid").write_bytes(write_smf(toy.looped_track()))
    (d / "b.mid").write_bytes(write_smf(toy.looped_track(3)))
    (d / "c.mid").write_bytes(write_smf(toy.looped_track(2)))
    return d


@pytest.fixture()
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus(path, [toy.looped_song()])
    return path


@pytest.fixture()
def checkpoint(tmp_path, corpus):
    out = tmp_path / "train"
    assert main(["train", str(corpus), "--preset", "toy", "--epochs", "2", "--out-dir", str(out)]) == 0
    return out / "model.cwmg"


def test_tokenize_three_files(tmp_path, mids):
    out = tmp_path / "o"
    assert main(["tokenize", str(mids), "--genre", "pop", "--out-dir", str(out)]) == 0
    seqs = read_corpus(out / "corpus.jsonl")
    assert [s.id for s in seqs] == ["a", "b", "c"]
    assert all(s.genre == "pop" for s in seqs)
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["command"] == "tokenize" and manifest["vocab_version"] == "cwmg-vocab-1"


def test_tokenize_partial_failure(tmp_path, mids):
    (mids / "c.mid").write_bytes(b"not midi at all")
    out = tmp_path / "o"
    assert main(["tokenize", str(mids), "--genre", "edm", "--out-dir", str(out)]) == 0
    assert len(read_corpus(out / "corpus.jsonl")) == 2
    report = json.loads((out / "tokenize_report.json").read_text())
    errors = [r for r in report if r["status"] == "error"]
    assert len(errors) == 1 and errors[0]["file"] == "c.mid"


def test_tokenize_empty_dir_and_all_bad(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["tokenize", str(empty), "--genre", "edm", "--out-dir", str(tmp_path / "o")]) == 2
    assert "no .mid files" in capsys.readouterr().err
    (empty / "x.mid").write_bytes(b"junk")
    assert main(["tokenize", str(empty), "--genre", "edm", "--out-dir", str(tmp_path / "o")]) == 2


def test_tokenize_unknown_genre(tmp_path, mids, capsys):
    assert main(["tokenize", str(mids), "--genre", "jazz", "--out-dir", str(tmp_path)]) == 2
    assert "edm" in capsys.readouterr().err


def test_stats(tmp_path, corpus, capsys):
    out = tmp_path / "s"
    assert main(["stats", str(corpus), "--out-dir", str(out)]) == 0
    assert "mean words/song: 64.00" in capsys.readouterr().out
    text = (out / "stats.csv").read_text()
    assert "FAMILY,metric,27\n" in text and "FAMILY,note,36\n" in text
    assert (out / "songs.csv").read_text() == "id,words\nloop-edm-9,64\n"
    assert (out / "token_distribution.svg").read_text().startswith("<svg")


def test_stats_bad_line(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    good = dumps_sequence(toy.looped_song(2))
    path.write_text("\n".join([good] * 6 + ["{broken"]) + "\n")
    assert main(["stats", str(path), "--out-dir", str(tmp_path)]) == 2
    assert "line 7" in capsys.readouterr().err


def test_train_outputs_and_resume(tmp_path, corpus):
    out = tmp_path / "t"
    args = ["train", str(corpus), "--preset", "toy", "--epochs", "4", "--checkpoint-every", "2"]
    assert main(args + ["--out-dir", str(out)]) == 0
    assert {p.name for p in out.iterdir()} >= {"model.cwmg", "epoch_0002.cwmg", "epoch_0004.cwmg", "loss.csv"}
    rows = (out / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,type,loss" and len(rows) == 1 + 4 * 9
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["lr"] == 3e-3 and manifest["config"]["epochs"] == 4
    assert len(manifest["checkpoint_sha256"]) == 64
    assert "train_seconds" in json.loads((out / "timing.json").read_text())

    res = tmp_path / "r"
    assert main(["train", str(corpus), "--resume", str(out / "epoch_0002.cwmg"), "--epochs", "2",
                 "--lr", "3e-3", "--seed", "2", "--out-dir", str(res)]) == 0  # fmt: skip
    resumed = (res / "loss.csv").read_text().splitlines()
    assert resumed[1].startswith("3,")
    assert resumed[1:] == rows[1 + 2 * 9 :]
    assert (res / "model.cwmg").read_bytes() == (out / "model.cwmg").read_bytes()


def test_train_preflight_rejects_bad_ids(tmp_path, capsys):
    seq = toy.looped_song()
    seq.words[5] = seq.words[5]._replace(chord=400)
    path = tmp_path / "bad.jsonl"
    write_corpus(path, [seq])
    assert main(["train", str(path), "--preset", "toy", "--epochs", "1", "--out-dir", str(tmp_path / "o")]) == 2
    assert "word 5" in capsys.readouterr().err
    assert not (tmp_path / "o" / "model.cwmg").exists()


def test_config_file_and_overrides(tmp_path, corpus):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy run\npreset = toy\nepochs = 3\nlr = 0.002\n")
    out = tmp_path / "o"
    assert main(["train", str(corpus), "--config", str(cfg), "--epochs", "1", "--out-dir", str(out)]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["epochs"] == 1 and manifest["config"]["lr"] == 0.002
    assert manifest["config"]["preset"] == "toy"
    cfg.write_text("epochs = 3\nlearning_rate = 1\n")
    assert main(["train", str(corpus), "--config", str(cfg), "--out-dir", str(out)]) == 2
    with pytest.raises(UsageError):
        read_config_file(tmp_path / "missing.cfg")


def test_generate(tmp_path, checkpoint):
    out = tmp_path / "g"
    args = ["generate", str(checkpoint), "--genre", "edm", "--n-songs", "3", "--max-words", "80"]
    assert main(args + ["--out-dir", str(out), "--p", "pitch=0.5", "--tau", "chord=1.5"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"song_000.mid", "song_002.mid", "audit_001.csv", "generated.jsonl", "timing.json"} <= names
    assert len(read_corpus(out / "generated.jsonl")) == 3
    timing = json.loads((out / "timing.json").read_text())
    assert len(timing["songs"]) == 3 and "median_step" in timing["songs"][0]
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["p.pitch"] == 0.5 and manifest["config"]["tau.chord"] == 1.5

    again = tmp_path / "g2"
    assert main(args + ["--out-dir", str(again), "--p", "pitch=0.5", "--tau", "chord=1.5"]) == 0
    for name in ("generated.jsonl", "song_001.mid", "audit_002.csv"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_generate_errors(tmp_path, checkpoint, corpus, capsys):
    assert main(["generate", str(checkpoint), "--genre", "jazz", "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert all(g in err for g in ("edm", "indie", "hiphop", "pop", "unknown"))
    assert main(["generate", str(corpus), "--genre", "edm", "--out-dir", str(tmp_path)]) == 2
    assert "magic" in capsys.readouterr().err
    out = tmp_path / "none"
    assert main(["generate", str(checkpoint), "--genre", "edm", "--n-songs", "0", "--out-dir", str(out)]) == 0
    assert not list(out.glob("*.mid")) and not (out / "generated.jsonl").exists()


def test_render(tmp_path, corpus):
    svg = tmp_path / "a.svg"
    assert main(["render", str(corpus), "--output", str(svg)]) == 0
    first = svg.read_bytes()
    assert len(re.findall(rb'<rect class="note"', first)) == 36
    assert main(["render", str(corpus), "--output", str(svg)]) == 0
    assert svg.read_bytes() == first
    mid = tmp_path / "x.mid"
    mid.write_bytes(write_smf(toy.looped_track()))
    assert main(["render", str(mid), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "x.svg").read_bytes().count(b'<rect class="note"') == 36


def test_render_empty_and_bad(tmp_path):
    empty = tmp_path / "empty.jsonl"
    write_corpus(empty, [to_compound_words(NoteEventTrack(), source_id="e")])
    assert main(["render", str(empty), "--output", str(tmp_path / "e.svg")]) == 0
    assert b'<rect class="note"' not in (tmp_path / "e.svg").read_bytes()
    bad = tmp_path / "bad.mid"
    bad.write_bytes(b"MThd garbage")
    assert main(["render", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["render", str(empty), "--line", "5", "--out-dir", str(tmp_path)]) == 2
    write_corpus(tmp_path / "nb.jsonl", [TokenSequence([[2, 1, 1, 1, 40, 5, 10, 1]])])
    assert main(["render", str(tmp_path / "nb.jsonl"), "--out-dir", str(tmp_path)]) == 2


def test_internal_error_exit_code(monkeypatch, corpus, tmp_path):
    import cwmg.cli as cli

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "corpus_stats", boom)
    assert main(["stats", str(corpus), "--out-dir", str(tmp_path)]) == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
