"""Acceptance criteria 1-9, one test each.

Every test records a PASS/FAIL line (printed in the pytest terminal summary,
or directly when this file is run as a script) and then asserts it.
"""

import math
import time

import numpy as np
import pytest

from cwmg import model as M
from cwmg import numerics as nx
from cwmg import toy
from cwmg import vocab as V
from cwmg.checkpoint import load_checkpoint, save_checkpoint
from cwmg.cli import main as cli_main
from cwmg.sampling import GenerationPolicy, generate, nucleus_sample, step_timing
from cwmg.tokenizer import Note, NoteEventTrack, from_compound_words, parse_smf, quantize_track, to_compound_words, write_smf
from cwmg.training import batch_loss, sequence_loss, teacher_forced_accuracy, train
from cwmg.vocab import TokenType

from oracles import quadratic_linear_attention

RESULTS = []


def record(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c1_attention_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(1)
    for T in (1, 2, 17, 64):
        Q, K, Vv = (rng.normal(size=(8, T, 64)) for _ in range(3))
        ref = quadratic_linear_attention(Q, K, Vv)
        worst = max(worst, float(np.max(np.abs(M.linear_attention_causal(Q, K, Vv) - ref))))
        with nx.precision(np.float64):
            chunked = nx.causal_linear_attention(nx.elu_plus_one(Q), nx.elu_plus_one(K), Vv).data
        worst = max(worst, float(np.max(np.abs(chunked - ref))))
    elapsed = time.perf_counter() - t0
    record(1, "attention oracle", worst <= 1e-5 and elapsed < 10, f"max abs diff {worst:.2e}, {elapsed:.2f}s")


@pytest.mark.slow
def test_c2_gradient_integrity():
    cfg = M.toy_config()
    ids = toy.looped_song().as_array()[:16]
    params = M.init_params(cfg, seed=1)
    names = list(params)
    t0 = time.perf_counter()
    err = nx.grad_check(lambda xs: batch_loss(ids, dict(zip(names, xs)), cfg)[2], list(params.values()), eps=1e-6)
    elapsed = time.perf_counter() - t0
    n = M.count_parameters(cfg)
    record(2, "full-loss grad check", err <= 1e-3 and elapsed < 300,
           f"{n} coordinates, max rel err {err:.2e}, {elapsed:.1f}s")  # fmt: skip


def test_c3_uniform_baseline(vocab, loop_song):
    cfg = M.toy_config()
    losses = sequence_loss(loop_song, M.init_params(cfg, zero=True), cfg)
    gaps = {t.name: abs(losses[t] - math.log(vocab.size(t))) for t in TokenType}
    worst = max(gaps.values())
    record(3, "uniform-logit baseline", worst <= 1e-3,
           f"FAMILY {losses[TokenType.FAMILY]:.4f}, CHORD {losses[TokenType.CHORD]:.4f}, max gap {worst:.1e}")  # fmt: skip


@pytest.mark.slow
def test_c4_memorization(loop_song):
    cfg = M.toy_config()
    t0 = time.perf_counter()
    res = train([loop_song], toy.toy_train_config(), cfg)
    elapsed = time.perf_counter() - t0
    acc = teacher_forced_accuracy([loop_song], res.params, cfg)
    out = generate(res.params, cfg, GenerationPolicy.uniform(p=0.9, tau=1e-4), loop_song.genre)
    regen = out.sequence.words == loop_song.words
    ok = acc[TokenType.FAMILY] >= 0.95 and min(acc.values()) >= 0.9 and elapsed < 600 and regen
    record(4, "toy memorization", ok,
           f"{res.epoch} epochs in {elapsed:.1f}s, family acc {acc[TokenType.FAMILY]:.3f}, "
           f"min type acc {min(acc.values()):.3f}, regenerated={regen}")  # fmt: skip


def random_track(rng):
    n = int(rng.integers(0, 40))
    n_bars = int(rng.integers(1, 12))
    notes = [
        Note(int(rng.integers(0, 16 * n_bars)), int(rng.integers(1, 33)), int(rng.integers(21, 109)), int(rng.integers(0, 128)))
        for _ in range(n)
    ]
    changes = sorted((int(rng.integers(0, 16 * n_bars)), float(rng.uniform(30, 230))) for _ in range(rng.integers(0, 4)))
    genre = V.GENRES[int(rng.integers(len(V.GENRES)))]
    return quantize_track(NoteEventTrack(notes, changes, genre))


def test_c5_codec_round_trip():
    rng = np.random.default_rng(5)
    n, bad = 1000, 0
    for _ in range(n):
        x = random_track(rng)
        y = from_compound_words(to_compound_words(x))
        if (y.notes, y.tempo_changes, y.genre) != (x.notes, x.tempo_changes, x.genre):
            bad += 1
    record(5, "codec round trip", bad == 0, f"{n - bad}/{n} tracks exact")


def test_c6_nucleus_statistics():
    probs = [0.5, 0.3, 0.15, 0.05]
    rng = np.random.default_rng(6)
    n = 10_000
    counts = np.bincount([nucleus_sample(probs, 0.8, 1.0, rng) for _ in range(n)], minlength=4)
    z = [abs(counts[k] / n - q) / math.sqrt(q * (1 - q) / n) for k, q in ((0, 0.625), (1, 0.375))]
    ok = counts[2] == 0 and counts[3] == 0 and max(z) <= 3
    record(6, "nucleus statistics", ok, f"counts {counts.tolist()}, max |z| {max(z):.2f}")


def _song_ok(seq):
    valid = all(V.is_valid(w) for w in seq.words)
    track = parse_smf(write_smf(from_compound_words(seq)))
    return valid, track


@pytest.mark.slow
def test_c7_structural_validity(tmp_path, trained_toy):
    cfg = M.toy_config()
    path = tmp_path / "random.cwmg"
    save_checkpoint(M.init_params(cfg, seed=0), cfg, path)
    ck = load_checkpoint(path)
    random_ok = 0
    for i in range(20):
        valid, track = _song_ok(generate(ck.params, ck.config, GenerationPolicy(seed=0), "hiphop", song_index=i).sequence)
        random_ok += valid and len(track.notes) >= 1
    cfg, res = trained_toy
    trained_ok, bars = 0, []
    for i in range(20):
        valid, track = _song_ok(generate(res.params, cfg, GenerationPolicy(seed=0), "edm", song_index=i).sequence)
        trained_ok += valid and len(track.notes) >= 1 and track.n_bars >= 8
        bars.append(track.n_bars)
    ok = random_ok == 20 and trained_ok == 20
    record(7, "structural validity", ok,
           f"random-init {random_ok}/20 valid, trained {trained_ok}/20 valid with >= 8 bars (min {min(bars)})")  # fmt: skip


@pytest.mark.slow
def test_c8_constant_cost_steps():
    cfg = M.TransformerConfig()
    params = M.init_params(cfg, seed=0)
    policy = GenerationPolicy(seed=0, min_words=2100, max_words=2100, max_bars=10_000, timing=True)
    t0 = time.perf_counter()
    res = generate(params, cfg, policy, "pop")
    elapsed = time.perf_counter() - t0
    times = step_timing(res)
    # times[i] covers sampling word i + 1 and feeding it through the model
    early = float(np.median(times[64:129]))
    late = float(np.median(times[1900:2049]))
    ratio = late / early
    record(8, "constant-cost steps", len(res.sequence) == 2100 and ratio <= 1.5 and elapsed < 900,
           f"median {early * 1e3:.2f} ms at 64-128 vs {late * 1e3:.2f} ms at 1900-2048, ratio {ratio:.2f}, {elapsed:.0f}s")  # fmt: skip


def _pipeline(root, mids):
    out = {}
    assert cli_main(["tokenize", str(mids), "--genre", "indie", "--out-dir", str(root / "tok")]) == 0
    assert cli_main(["train", str(root / "tok" / "corpus.jsonl"), "--preset", "toy", "--epochs", "30",
                     "--seed", "4", "--out-dir", str(root / "train")]) == 0  # fmt: skip
    assert cli_main(["generate", str(root / "train" / "model.cwmg"), "--genre", "indie", "--n-songs", "4",
                     "--seed", "4", "--out-dir", str(root / "gen")]) == 0  # fmt: skip
    for name in ("tok/corpus.jsonl", "train/model.cwmg", "train/loss.csv", "gen/generated.jsonl"):
        out[name] = (root / name).read_bytes()
    return out


@pytest.mark.slow
def test_c9_determinism(tmp_path):
    mids = tmp_path / "mids"
    mids.mkdir()
    for i, n_bars in enumerate((9, 5, 3)):
        (mids / f"song{i}.mid").write_bytes(write_smf(toy.looped_track(n_bars, genre="indie")))
    a = _pipeline(tmp_path / "run1", mids)
    b = _pipeline(tmp_path / "run2", mids)
    same = [k for k in a if a[k] == b[k]]
    record(9, "determinism", len(same) == len(a), f"{len(same)}/{len(a)} outputs byte-identical: {', '.join(same)}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
