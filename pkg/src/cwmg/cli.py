"""Command-line entry point: tokenize, stats, train, generate, render.

Settings resolve in three layers: built-in defaults, then a ``key = value``
config file (``--config``), then explicit flags. Every run writes
``run_manifest.json`` with the resolved settings. Exit codes: 0 success,
1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import statistics
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ContractError,
    CorpusFormatError,
    CorruptCheckpointError,
    LengthError,
    MidiParseError,
    ParameterError,
    StructuralError,
    TokenIndexError,
    UnsupportedMeterError,
    VocabLookupError,
)
from .model import TransformerConfig, toy_config
from .sampling import GenerationPolicy, generate
from .tokenizer import (
    corpus_stats,
    from_compound_words,
    parse_smf,
    read_corpus,
    render_histograms,
    render_piano_roll,
    to_compound_words,
    write_corpus,
    write_smf,
)
from .tokenizer.corpus import song_lengths_csv, stats_csv
from .toy import toy_train_config
from .training import TrainConfig, train, validate_corpus
from .vocab import GENRES, TokenType, build_vocabulary

log = logging.getLogger("cwmg")

INPUT_ERRORS = (
    ContractError,
    CorpusFormatError,
    CorruptCheckpointError,
    LengthError,
    MidiParseError,
    ParameterError,
    StructuralError,
    TokenIndexError,
    UnsupportedMeterError,
    VocabLookupError,
    FileNotFoundError,
    IsADirectoryError,
)


class UsageError(Exception):
    """Bad invocation or input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

MODEL_KEYS = {"preset", "d_model", "n_layers", "n_heads", "emb_dims", "ff_dim", "head_dim", "max_len"}
TRAIN_KEYS = {"batch_size", "epochs", "lr", "clip_norm", "checkpoint_every", "train_max_len"}
GEN_KEYS = {"genre", "n_songs", "max_words", "max_bars", "min_words"}
POLICY_KEYS = {f"{kind}.{t.name.lower()}" for kind in ("p", "tau") for t in TokenType}
KNOWN_KEYS = {"seed", "out_dir", "verbose"} | MODEL_KEYS | TRAIN_KEYS | GEN_KEYS | POLICY_KEYS

INT_KEYS = {
    "seed",
    "d_model",
    "n_layers",
    "n_heads",
    "ff_dim",
    "head_dim",
    "max_len",
    "batch_size",
    "epochs",
    "checkpoint_every",
    "train_max_len",
    "n_songs",
    "max_words",
    "max_bars",
    "min_words",
}
FLOAT_KEYS = {"lr", "clip_norm"} | POLICY_KEYS


def _coerce(key, value):
    if key not in KNOWN_KEYS:
        raise UsageError(f"unknown config key {key!r}")
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
        if key == "emb_dims":
            if isinstance(value, str):
                return tuple(int(x) for x in value.split(","))
            return tuple(int(x) for x in value)
        if key == "verbose":
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    except ValueError:
        raise UsageError(f"bad value {value!r} for {key}") from None
    return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def resolve_config(args, defaults: dict) -> dict:
    """defaults < config file < flags that were actually given."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in KNOWN_KEYS and value is not None:
            cfg[key] = _coerce(key, value)
    for spec in getattr(args, "p", None) or []:
        k, val = _type_value(spec)
        cfg[f"p.{k}"] = val
    for spec in getattr(args, "tau", None) or []:
        k, val = _type_value(spec)
        cfg[f"tau.{k}"] = val
    return cfg


def _type_value(spec):
    if "=" not in spec:
        raise UsageError(f"expected TYPE=VALUE, got {spec!r}")
    k, val = spec.split("=", 1)
    k = k.strip().lower()
    if f"p.{k}" not in POLICY_KEYS:
        raise UsageError(f"unknown token type {k!r}")
    try:
        return k, float(val)
    except ValueError:
        raise UsageError(f"bad number in {spec!r}") from None


def model_config_from(cfg: dict) -> TransformerConfig:
    preset = cfg.get("preset", "default")
    if preset == "toy":
        base = toy_config()
    elif preset == "default":
        base = TransformerConfig()
    else:
        raise UsageError(f"unknown preset {preset!r} (toy, default)")
    overrides = {k: cfg[k] for k in MODEL_KEYS - {"preset"} if k in cfg}
    return replace(base, **overrides)


def policy_from(cfg: dict, timing=True) -> GenerationPolicy:
    policy = GenerationPolicy(
        seed=cfg.get("seed", 0),
        max_words=cfg.get("max_words", 4096),
        max_bars=cfg.get("max_bars", 256),
        min_words=cfg.get("min_words", 0),
        timing=timing,
    )
    for t in TokenType:
        name = t.name.lower()
        policy = policy.with_type(t, p=cfg.get(f"p.{name}"), tau=cfg.get(f"tau.{name}"))
    return policy


def write_manifest(out_dir: Path, command: str, cfg: dict, extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "vocab_version": build_vocabulary().version,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
    }
    doc.update(extra or {})
    (out_dir / "run_manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_tokenize(args) -> int:
    cfg = resolve_config(args, {"seed": 0, "out_dir": "."})
    genre = args.genre
    if genre not in GENRES:
        raise UsageError(f"unknown genre {genre!r}; valid genres: {', '.join(GENRES)}")
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise UsageError(f"{in_dir} is not a directory")
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in (".mid", ".midi"))
    if not files:
        raise UsageError(f"no .mid files in {in_dir}")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sequences, report = [], []
    for path in files:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                track = parse_smf(path.read_bytes(), genre=genre)
                seq = to_compound_words(track, source_id=path.stem)
            except (MidiParseError, UnsupportedMeterError, VocabLookupError, OSError) as exc:
                report.append({"file": path.name, "status": "error", "error": str(exc)})
                log.warning("%s: %s", path.name, exc)
                continue
        sequences.append(seq)
        report.append(
            {"file": path.name, "status": "ok", "words": len(seq), "warnings": [str(w.message) for w in caught]}
        )
    out = Path(args.out) if args.out else out_dir / "corpus.jsonl"
    write_corpus(out, sequences)
    (out_dir / "tokenize_report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    write_manifest(out_dir, "tokenize", cfg, {"inputs": [p.name for p in files], "genre": genre})
    n_err = sum(r["status"] == "error" for r in report)
    print(f"tokenized {len(sequences)} of {len(files)} files into {out} ({n_err} errors)")
    return 0 if sequences else 2


def cmd_stats(args) -> int:
    cfg = resolve_config(args, {"seed": 0, "out_dir": "."})
    dataset = read_corpus(args.corpus)
    if not dataset:
        raise UsageError(f"{args.corpus} contains no songs")
    stats = corpus_stats(dataset)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "stats.csv").write_text(stats_csv(stats), encoding="utf-8")
    (out_dir / "songs.csv").write_text(song_lengths_csv(stats), encoding="utf-8")
    (out_dir / "token_distribution.svg").write_text(render_histograms(stats), encoding="utf-8")
    write_manifest(out_dir, "stats", cfg, {"corpus_sha256": _sha256(args.corpus)})
    print(f"songs: {len(stats.song_lengths)}  total words: {stats.total_words}  mean words/song: {stats.mean_words:.2f}")
    return 0


TRAIN_DEFAULTS = {
    "seed": 0,
    "out_dir": ".",
    "preset": "default",
    "batch_size": 4,
    "epochs": 180,
    "lr": 2e-4,
    "clip_norm": 3.0,
    "checkpoint_every": 0,
    "train_max_len": 0,
}


_toy = toy_train_config()
TOY_TRAIN_DEFAULTS = {"epochs": _toy.epochs, "lr": _toy.lr, "seed": _toy.seed, "batch_size": _toy.batch_size}


def cmd_train(args) -> int:
    cfg = resolve_config(args, TRAIN_DEFAULTS)
    if cfg["preset"] == "toy":
        # the toy preset has its own training defaults; file and flags still win
        cfg = resolve_config(args, {**TRAIN_DEFAULTS, **TOY_TRAIN_DEFAULTS})
    v = build_vocabulary()
    dataset = read_corpus(args.corpus)
    validate_corpus(dataset, v)
    params = opt_state = None
    start_epoch = 0
    if args.resume:
        ck = load_checkpoint(args.resume, v)
        config = ck.config
        params, opt_state, start_epoch = ck.params, ck.opt_state, ck.epoch
    else:
        config = model_config_from(cfg)
    tc = TrainConfig(
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        clip_norm=cfg["clip_norm"],
        max_len=cfg["train_max_len"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    def on_epoch(epoch, p, st, report):
        if tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            save_checkpoint(p, config, out_dir / f"epoch_{epoch:04d}.cwmg", v, epoch, st)

    t0 = time.perf_counter()
    result = train(dataset, tc, config, v, params, opt_state, start_epoch, on_epoch)
    elapsed = time.perf_counter() - t0
    digest = save_checkpoint(result.params, config, out_dir / "model.cwmg", v, result.epoch, result.opt_state)
    (out_dir / "loss.csv").write_text(result.report.to_csv(), encoding="utf-8")
    (out_dir / "timing.json").write_text(json.dumps({"train_seconds": elapsed}, indent=1) + "\n", encoding="utf-8")
    extra = {"corpus_sha256": _sha256(args.corpus), "checkpoint_sha256": digest, "model_config": config.to_dict()}
    if args.resume:
        extra["resumed_from"] = {"sha256": _sha256(args.resume), "epoch": start_epoch}
    write_manifest(out_dir, "train", cfg, extra)
    if result.report.epochs:
        print(f"epochs {start_epoch + 1}-{result.epoch}: final mean loss {result.report.mean(-1):.4f}")
    return 0


GEN_DEFAULTS = {"seed": 0, "out_dir": ".", "n_songs": 20, "max_words": 4096, "max_bars": 256, "min_words": 0}


def cmd_generate(args) -> int:
    cfg = resolve_config(args, GEN_DEFAULTS)
    genre = cfg.get("genre")
    if genre not in GENRES:
        raise UsageError(f"unknown genre {genre!r}; valid genres: {', '.join(GENRES)}")
    v = build_vocabulary()
    ck = load_checkpoint(args.checkpoint, v)
    policy = policy_from(cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    timing = []
    for i in range(cfg["n_songs"]):
        res = generate(ck.params, ck.config, policy, genre, v=v, song_index=i)
        track = from_compound_words(res.sequence, v)
        (out_dir / f"song_{i:03d}.mid").write_bytes(write_smf(track))
        (out_dir / f"audit_{i:03d}.csv").write_text(res.audit_csv(), encoding="utf-8")
        results.append(res.sequence)
        steps = res.step_times
        timing.append(
            {
                "song": i,
                "words": len(res.sequence),
                "seconds": sum(steps),
                "median_step": statistics.median(steps) if steps else 0.0,
                "max_step": max(steps) if steps else 0.0,
            }
        )
    if results:
        write_corpus(out_dir / "generated.jsonl", results)
    summary = {"songs": timing}
    if timing:
        summary["mean_seconds_per_song"] = sum(t["seconds"] for t in timing) / len(timing)
    (out_dir / "timing.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    write_manifest(out_dir, "generate", cfg, {"checkpoint_sha256": _sha256(args.checkpoint)})
    print(f"generated {len(results)} songs in {out_dir}")
    return 0


def cmd_render(args) -> int:
    cfg = resolve_config(args, {"seed": 0, "out_dir": "."})
    path = Path(args.input)
    if path.suffix.lower() in (".mid", ".midi"):
        track = parse_smf(path.read_bytes())
        title = path.stem
    else:
        dataset = read_corpus(path)
        if not 1 <= args.line <= len(dataset):
            raise UsageError(f"{path} has {len(dataset)} songs; --line {args.line} is out of range")
        seq = dataset[args.line - 1]
        track = from_compound_words(seq)
        title = seq.id
    out = Path(args.output) if args.output else Path(cfg["out_dir"]) / f"{path.stem}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_piano_roll(track, title=title), encoding="utf-8")
    print(f"wrote {out} ({len(track.notes)} notes)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value settings file")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--out-dir", dest="out_dir")
    shared.add_argument("--verbose", action="store_true", default=None)

    parser = argparse.ArgumentParser(prog="cwmg", description="Compound-word multi-genre music transformer")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", parents=[shared], help="MIDI directory -> corpus .jsonl")
    p.add_argument("in_dir")
    p.add_argument("--genre", required=True)
    p.add_argument("--out", help="corpus path (default: OUT_DIR/corpus.jsonl)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("stats", parents=[shared], help="token histograms and song lengths")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", parents=[shared], help="train a model on a corpus")
    p.add_argument("corpus")
    p.add_argument("--preset", choices=["toy", "default"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--max-len", dest="train_max_len", type=int, help="training window length")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[shared], help="sample songs from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--genre")
    p.add_argument("--n-songs", dest="n_songs", type=int)
    p.add_argument("--max-words", dest="max_words", type=int)
    p.add_argument("--max-bars", dest="max_bars", type=int)
    p.add_argument("--min-words", dest="min_words", type=int)
    p.add_argument("--p", action="append", metavar="TYPE=P", help="nucleus threshold for one token type")
    p.add_argument("--tau", action="append", metavar="TYPE=TAU", help="temperature for one token type")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", parents=[shared], help="piano-roll .svg from .mid or corpus line")
    p.add_argument("input")
    p.add_argument("--line", type=int, default=1, help="1-based song index for corpus input")
    p.add_argument("--output")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
