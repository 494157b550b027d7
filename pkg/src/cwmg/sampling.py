"""Family-first autoregressive generation with per-type nucleus sampling.

Every generated word is sampled in two stages: the family head picks
metric / note / eos, then the remaining heads are evaluated conditioned on
that family and only the fields the family uses are sampled; the others are
set to [ignore]. Each token type draws from its own random stream, derived
from ``SeedSequence(seed, spawn_key=(song_index, type ordinal))``, so the
draws for one type never depend on how many draws another type made.

A small event grammar keeps output decodable: [pad] is never sampled, a
note needs a beat word earlier in the same bar, eos needs at least one note
(and ``min_words`` words), and sampled metric/note fields may not be
[ignore] where the word requires a value.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import vocab as V
from .errors import ContractError, ParameterError, StructuralError
from .model import AttentionState, TransformerConfig, predict_family, predict_rest, step
from .tokenizer.compound import BAR_ID, TokenSequence, bar_word, eos_word
from .vocab import CompoundWord, TokenType, Vocabulary, build_vocabulary

N_TYPES = len(TokenType)


def _default_p():
    p = [0.9] * N_TYPES
    p[TokenType.FAMILY] = 0.99
    return tuple(p)


def _default_tau():
    tau = [1.0] * N_TYPES
    tau[TokenType.CHORD] = 1.2
    return tuple(tau)


@dataclass(frozen=True)
class GenerationPolicy:
    p: tuple = field(default_factory=_default_p)
    tau: tuple = field(default_factory=_default_tau)
    seed: int = 0
    max_words: int = 4096
    max_bars: int = 256
    min_words: int = 0
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "tau", tuple(float(x) for x in self.tau))
        if len(self.p) != N_TYPES or len(self.tau) != N_TYPES:
            raise ParameterError(f"need {N_TYPES} thresholds and temperatures")
        for t in TokenType:
            _check_p_tau(self.p[t], self.tau[t])
        if self.max_words < 2 or self.max_bars < 1:
            raise ParameterError("max_words must be >= 2 and max_bars >= 1")

    def with_type(self, t: TokenType, p=None, tau=None):
        ps, taus = list(self.p), list(self.tau)
        if p is not None:
            ps[t] = p
        if tau is not None:
            taus[t] = tau
        return replace(self, p=tuple(ps), tau=tuple(taus))

    @classmethod
    def uniform(cls, p=0.9, tau=1.0, **kw):
        return cls(p=(p,) * N_TYPES, tau=(tau,) * N_TYPES, **kw)


def _check_p_tau(p, tau):
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"nucleus threshold p must be in (0, 1], got {p}")
    if not tau > 0.0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def nucleus_distribution(probs, p: float, tau: float = 1.0):
    """Class indices of the nucleus (most probable first) and their renormalised probabilities.

    Temperature divides the log-probabilities before re-normalising. The
    nucleus is the shortest probability-sorted prefix whose mass reaches
    ``p``; the class that crosses the threshold is included.
    """
    _check_p_tau(p, tau)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ContractError(f"expected a non-empty distribution, got shape {probs.shape}")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-5:
        raise ContractError(f"probabilities must be non-negative and sum to 1, sum={probs.sum()}")
    if tau != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(probs) / tau
        logp -= logp.max()
        probs = np.exp(logp)
        probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    # tolerance absorbs rounding in the prefix sums (e.g. 0.5 + 0.3 vs 0.8)
    k = int(np.searchsorted(cum, p * (1 - 1e-12), side="left")) + 1
    k = min(k, probs.size)
    kept = order[:k]
    mass = probs[kept]
    return kept, mass / mass.sum()


def nucleus_sample(probs, p: float, tau: float, rng: np.random.Generator) -> int:
    """Draw one class index by nucleus (top-p) sampling."""
    kept, weights = nucleus_distribution(probs, p, tau)
    return int(kept[_draw(weights, rng)])


def _draw(weights, rng):
    cum = np.cumsum(weights)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(i, len(weights) - 1)


def type_streams(seed: int, song_index: int = 0):
    """One independent generator per token type."""
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(song_index, int(t)))))
        for t in TokenType
    ]


@dataclass
class AuditRow:
    step: int
    type: TokenType
    token_id: int
    probability: float
    nucleus_size: int


@dataclass
class GenerationResult:
    sequence: TokenSequence
    audit: list = field(default_factory=list)
    step_times: list = field(default_factory=list)

    def audit_csv(self) -> str:
        lines = ["step,type,chosen_id,probability,nucleus_size"]
        for r in self.audit:
            lines.append(f"{r.step},{r.type.name},{r.token_id},{r.probability!r},{r.nucleus_size}")
        return "\n".join(lines) + "\n"


def step_timing(result: GenerationResult) -> np.ndarray:
    """Wall time per generated word (empty when timing was off)."""
    return np.asarray(result.step_times, dtype=np.float64)


def _masked_probs(logits, allowed):
    z = np.where(allowed, np.asarray(logits, dtype=np.float64), -np.inf)
    z -= z[allowed].max()
    e = np.exp(z)
    return e / e.sum()


def generate(
    params: dict,
    config: TransformerConfig,
    policy: GenerationPolicy,
    genre: str,
    prompt: TokenSequence | None = None,
    v: Vocabulary | None = None,
    song_index: int = 0,
) -> GenerationResult:
    v = v or build_vocabulary()
    genre_id = v.encode(TokenType.GENRE, genre)
    if genre_id == V.PAD_ID:
        raise ParameterError("[pad] is not a genre")
    streams = type_streams(policy.seed, song_index)

    if prompt is not None and len(prompt.words):
        words = list(prompt.words)
        for i, w in enumerate(words):
            problems = V.validate(w, v)
            if problems:
                raise StructuralError("invalid prompt: " + "; ".join(problems), i)
            if w.family == V.FAMILY_EOS:
                raise StructuralError("prompt contains eos", i)
        if len(words) >= policy.max_words:
            raise ParameterError(f"prompt of {len(words)} words leaves no room under max_words={policy.max_words}")
    else:
        words = [bar_word(genre_id)]

    bars = 0
    beat_in_bar = False
    n_notes = 0
    for w in words:
        if w.family == V.FAMILY_METRIC:
            if w.barbeat == BAR_ID:
                bars, beat_in_bar = bars + 1, False
            else:
                beat_in_bar = True
        elif w.family == V.FAMILY_NOTE:
            n_notes += 1

    state = AttentionState.empty(config, dtype=np.asarray(params["emb.family"]).dtype)
    hidden = None
    for w in words:
        hidden, state = step(w, state, params, config)

    audit = []
    times = []

    def sample(t, logits, allowed):
        probs = _masked_probs(logits, allowed)
        kept, weights = nucleus_distribution(probs, policy.p[t], policy.tau[t])
        j = _draw(weights, streams[t])
        audit.append(AuditRow(len(words), TokenType(t), int(kept[j]), float(weights[j]), len(kept)))
        return int(kept[j])

    n_family = v.size(TokenType.FAMILY)
    while True:
        t0 = time.perf_counter()
        allowed = np.ones(n_family, dtype=bool)
        allowed[V.PAD_ID] = False
        if not beat_in_bar:
            allowed[V.FAMILY_NOTE] = False
        if n_notes == 0 or len(words) < policy.min_words:
            allowed[V.FAMILY_EOS] = False
        if len(words) >= policy.max_words - 1:
            allowed[:] = False
            allowed[V.FAMILY_EOS] = True
        family = sample(TokenType.FAMILY, predict_family(hidden, params), allowed)

        if family == V.FAMILY_EOS:
            word = eos_word(genre_id)
        else:
            rest = predict_rest(hidden, family, params)
            fields = [V.IGNORE_ID] * N_TYPES
            fields[TokenType.FAMILY] = family
            fields[TokenType.GENRE] = genre_id
            if family == V.FAMILY_METRIC:
                fields[TokenType.BARBEAT] = sample(TokenType.BARBEAT, rest[TokenType.BARBEAT], _allowed(v, TokenType.BARBEAT, True))
                if fields[TokenType.BARBEAT] != BAR_ID:
                    for t in (TokenType.TEMPO, TokenType.CHORD):
                        fields[t] = sample(t, rest[t], _allowed(v, t, False))
            else:
                for t in V.NOTE_TYPES:
                    fields[t] = sample(t, rest[t], _allowed(v, t, True))
            word = CompoundWord(*fields)
            if word.family == V.FAMILY_METRIC and word.barbeat == BAR_ID and bars >= policy.max_bars:
                word = eos_word(genre_id)

        words.append(word)
        if word.family == V.FAMILY_EOS:
            if policy.timing:
                times.append(time.perf_counter() - t0)
            break
        if word.family == V.FAMILY_METRIC:
            if word.barbeat == BAR_ID:
                bars, beat_in_bar = bars + 1, False
            else:
                beat_in_bar = True
        else:
            n_notes += 1
        hidden, state = step(word, state, params, config)
        if policy.timing:
            times.append(time.perf_counter() - t0)

    seq = TokenSequence(words=words, id=f"gen-{policy.seed}-{song_index}", genre=genre)
    return GenerationResult(seq, audit, times)


def _allowed(v: Vocabulary, t: TokenType, required: bool):
    mask = np.ones(v.size(t), dtype=bool)
    mask[V.PAD_ID] = False
    if required:
        mask[V.IGNORE_ID] = False
    return mask
