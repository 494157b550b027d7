"""Per-type cross-entropy objective and the mini-batch training loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import ParameterError
from .model import TransformerConfig, as_arrays, family_logits, forward, init_params, rest_logits
from .numerics import AdamHyper, AdamState, Array, Tape
from .vocab import PAD_ID, TokenType, Vocabulary, build_vocabulary, validate

log = logging.getLogger(__name__)

TYPE_NAMES = [t.name for t in TokenType]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 180
    lr: float = 2e-4
    clip_norm: float = 3.0
    max_len: int = 0  # 0 means: use the model's max_len
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr >= 0:
            raise ParameterError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 0 or self.clip_norm <= 0:
            raise ParameterError("epochs must be >= 0 and clip_norm > 0")


@dataclass
class LossReport:
    """Per-epoch mean loss for each token type; ``mean`` is their average."""

    epochs: list = field(default_factory=list)
    per_type: list = field(default_factory=list)  # list of {TokenType: float}

    def add(self, epoch: int, losses: dict):
        self.epochs.append(int(epoch))
        self.per_type.append({TokenType(t): float(losses[t]) for t in TokenType})

    def mean(self, i: int) -> float:
        return float(np.mean([self.per_type[i][t] for t in TokenType]))

    def series(self, t: TokenType | None = None) -> list:
        if t is None:
            return [self.mean(i) for i in range(len(self.epochs))]
        return [row[TokenType(t)] for row in self.per_type]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["epoch", "type", "loss"])
        for i, epoch in enumerate(self.epochs):
            for t in TokenType:
                w.writerow([epoch, t.name, repr(self.per_type[i][t])])
            w.writerow([epoch, "MEAN", repr(self.mean(i))])
        return buf.getvalue()


def batch_loss(ids, params: dict, config: TransformerConfig, v: Vocabulary | None = None):
    """Teacher-forced next-word losses for a (B, T, 8) batch.

    Returns ({type: scalar Array}, {type: target count}, mean Array). Target
    words whose family is [pad] are masked; [ignore] targets are real classes.
    The non-family heads are conditioned on the true next family.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 2:
        ids = ids[None]
    if ids.shape[-2] < 2:
        raise ParameterError("need at least two words to form a prediction target")
    params = as_arrays(params)
    inputs, targets = ids[:, :-1], ids[:, 1:]
    mask = targets[..., TokenType.FAMILY] != PAD_ID
    hidden = forward(inputs, params, config, v)
    losses = {TokenType.FAMILY: nx.cross_entropy(family_logits(hidden, params), targets[..., 0], mask)}
    rest = rest_logits(hidden, targets[..., TokenType.FAMILY], params)
    for t, logits in rest.items():
        losses[t] = nx.cross_entropy(logits, targets[..., t], mask)
    total = losses[TokenType.FAMILY]
    for t in TokenType:
        if t != TokenType.FAMILY:
            total = nx.add(total, losses[t])
    mean = nx.mul(total, 1.0 / len(TokenType))
    count = int(mask.sum())
    return losses, {t: count for t in TokenType}, mean


def sequence_loss(seq, params: dict, config: TransformerConfig, v: Vocabulary | None = None) -> dict:
    """Per-type losses (floats) for one sequence plus their unweighted ``"mean"``."""
    ids = seq.as_array() if hasattr(seq, "as_array") else np.asarray(seq)
    if len(ids) < 2:
        raise ParameterError(f"sequence_loss needs T >= 2, got {len(ids)}")
    losses, _, mean = batch_loss(ids, params, config, v)
    out = {t: float(a.item()) for t, a in losses.items()}
    out["mean"] = float(mean.item())
    return out


def teacher_forced_accuracy(dataset, params: dict, config: TransformerConfig, v=None) -> dict:
    """Argmax accuracy per type over all non-[pad] next-word targets."""
    hits = {t: 0 for t in TokenType}
    total = 0
    params = as_arrays(params)
    for seq in dataset:
        for window in split_windows(_ids(seq), config.max_len):
            inputs, targets = window[None, :-1], window[None, 1:]
            mask = targets[..., 0] != PAD_ID
            hidden = forward(inputs, params, config, v)
            pred = {TokenType.FAMILY: family_logits(hidden, params).data.argmax(-1)}
            for t, lg in rest_logits(hidden, targets[..., 0], params).items():
                pred[t] = lg.data.argmax(-1)
            for t in TokenType:
                hits[t] += int(((pred[t] == targets[..., t]) & mask).sum())
            total += int(mask.sum())
    return {t: hits[t] / max(total, 1) for t in TokenType}


def _ids(seq):
    return seq.as_array() if hasattr(seq, "as_array") else np.asarray(seq, dtype=np.int64)


def split_windows(ids: np.ndarray, max_len: int) -> list:
    """Cut a long sequence into max_len windows that overlap by one word."""
    if len(ids) <= max_len:
        return [ids]
    out = []
    start = 0
    while start < len(ids) - 1:
        out.append(ids[start : start + max_len])
        start += max_len - 1
    return out


def pad_batch(windows) -> np.ndarray:
    T = max(len(w) for w in windows)
    batch = np.zeros((len(windows), T, len(TokenType)), dtype=np.int64)
    for i, w in enumerate(windows):
        batch[i, : len(w)] = w
    return batch


def validate_corpus(dataset, v: Vocabulary | None = None) -> None:
    """Raise ParameterError naming the first invalid word in the corpus."""
    v = v or build_vocabulary()
    for seq in dataset:
        for i, w in enumerate(seq.words):
            problems = validate(w, v)
            if problems:
                raise ParameterError(f"song {seq.id!r} word {i}: {'; '.join(problems)}")


@dataclass
class TrainResult:
    params: dict
    report: LossReport
    opt_state: AdamState
    epoch: int


def train(
    dataset,
    train_config: TrainConfig,
    config: TransformerConfig,
    v: Vocabulary | None = None,
    params: dict | None = None,
    opt_state: AdamState | None = None,
    start_epoch: int = 0,
    on_epoch: Callable | None = None,
) -> TrainResult:
    """Run ``train_config.epochs`` epochs of shuffled mini-batch Adam.

    Shuffling for epoch ``e`` uses a generator seeded by ``(seed, e)`` so a
    resumed run sees the same batches an uninterrupted one would.
    ``on_epoch(epoch, params, opt_state, report)`` is called after each epoch.
    """
    if not dataset:
        raise ParameterError("training needs a non-empty dataset")
    v = v or build_vocabulary()
    max_len = train_config.max_len or config.max_len
    max_len = min(max_len, config.max_len)
    windows = [w for seq in dataset for w in split_windows(_ids(seq), max_len) if len(w) >= 2]
    if not windows:
        raise ParameterError("no training window has two or more words")
    if params is None:
        params = init_params(config, v, seed=train_config.seed)
    if opt_state is None:
        opt_state = AdamState.zeros(params)
    hyper = AdamHyper(lr=train_config.lr)
    names = list(params)
    report = LossReport()

    for epoch in range(start_epoch + 1, start_epoch + train_config.epochs + 1):
        rng = np.random.default_rng((train_config.seed, epoch))
        order = rng.permutation(len(windows))
        sums = {t: 0.0 for t in TokenType}
        counts = {t: 0 for t in TokenType}
        for b in range(0, len(order), train_config.batch_size):
            batch = pad_batch([windows[i] for i in order[b : b + train_config.batch_size]])
            arrays = {k: Array(params[k], name=k) for k in names}
            with Tape() as tape:
                losses, n, mean = batch_loss(batch, arrays, config, v)
            grads = nx.backward(tape, mean, [arrays[k] for k in names])
            grads, _ = nx.clip_by_global_norm(grads, train_config.clip_norm)
            params, opt_state = nx.adam_step(params, dict(zip(names, grads)), opt_state, hyper)
            for t in TokenType:
                sums[t] += float(losses[t].item()) * n[t]
                counts[t] += n[t]
        report.add(epoch, {t: sums[t] / max(counts[t], 1) for t in TokenType})
        log.info("epoch %d mean loss %.4f", epoch, report.mean(len(report.epochs) - 1))
        if on_epoch is not None:
            on_epoch(epoch, params, opt_state, report)
    return TrainResult(params, report, opt_state, start_epoch + train_config.epochs)
