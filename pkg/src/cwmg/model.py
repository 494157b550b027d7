"""Causal linear-attention transformer over compound words.

Each word is embedded type by type, the eight embeddings are concatenated
(their widths sum to ``d_model``) and a sinusoidal position code is added.
A stack of pre-norm blocks with linear attention follows. Output is split
into heads: the family head predicts the event family first, and every other
token type has a two-layer head that sees the hidden state concatenated with
the embedding of that family.

Training uses :func:`forward` on tape-aware arrays. Generation uses
:func:`step`, which carries the per-layer attention prefix sums in an
:class:`AttentionState` so each new word costs the same regardless of
position.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import numerics as nx
from .errors import LengthError, ParameterError, TokenIndexError
from .numerics import Array
from .vocab import TokenType, Vocabulary, build_vocabulary

ATTN_EPS = 1e-6
LN_EPS = 1e-5
INIT_SCALE = 0.02

REST_TYPES = tuple(t for t in TokenType if t != TokenType.FAMILY)


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 512
    n_layers: int = 12
    n_heads: int = 8
    emb_dims: tuple = (16, 64, 96, 64, 128, 64, 64, 16)
    ff_dim: int = 2048
    head_dim: int = 256
    max_len: int = 16384

    def __post_init__(self):
        object.__setattr__(self, "emb_dims", tuple(int(d) for d in self.emb_dims))
        if len(self.emb_dims) != len(TokenType):
            raise ParameterError(f"need {len(TokenType)} embedding widths, got {len(self.emb_dims)}")
        if sum(self.emb_dims) != self.d_model:
            raise ParameterError(f"embedding widths sum to {sum(self.emb_dims)}, not d_model={self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ParameterError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if min(self.n_layers, self.ff_dim, self.head_dim, self.max_len) < 1:
            raise ParameterError("layer count and widths must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self):
        d = asdict(self)
        d["emb_dims"] = list(self.emb_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def toy_config(**overrides) -> TransformerConfig:
    """Two-layer, d_model=64 configuration for desk-scale runs and checks."""
    base = TransformerConfig(
        d_model=64,
        n_layers=2,
        n_heads=4,
        emb_dims=(8, 8, 12, 8, 12, 6, 6, 4),
        ff_dim=64,
        head_dim=32,
        max_len=256,
    )
    return replace(base, **overrides)


def param_shapes(config: TransformerConfig, v: Vocabulary | None = None) -> dict:
    """Parameter names and shapes in checkpoint order."""
    v = v or build_vocabulary()
    d, f, h = config.d_model, config.ff_dim, config.head_dim
    shapes = {}
    for t in TokenType:
        shapes[f"emb.{t.name.lower()}"] = (v.size(t), config.emb_dims[t])
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + w] = (d, d)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["ln_f.gain"] = (d,)
    shapes["ln_f.bias"] = (d,)
    shapes["head.family.w"] = (d, v.size(TokenType.FAMILY))
    shapes["head.family.b"] = (v.size(TokenType.FAMILY),)
    cond = d + config.emb_dims[TokenType.FAMILY]
    for t in REST_TYPES:
        p = f"head.{t.name.lower()}."
        shapes[p + "w1"] = (cond, h)
        shapes[p + "b1"] = (h,)
        shapes[p + "w2"] = (h, v.size(t))
        shapes[p + "b2"] = (v.size(t),)
    return shapes


def count_parameters(config: TransformerConfig, v: Vocabulary | None = None) -> int:
    """Closed-form parameter count.

    sum_t |V_t| e_t + L (4 d^2 + 2 d f + f + 5 d) + 2 d + (d + 1) |V_family|
    + sum_{t != family} ((d + e_family) h + h + (h + 1) |V_t|)
    """
    v = v or build_vocabulary()
    d, f, h, L = config.d_model, config.ff_dim, config.head_dim, config.n_layers
    e_fam = config.emb_dims[TokenType.FAMILY]
    total = sum(v.size(t) * config.emb_dims[t] for t in TokenType)
    total += L * (4 * d * d + 2 * d * f + f + 5 * d)
    total += 2 * d + (d + 1) * v.size(TokenType.FAMILY)
    total += sum((d + e_fam) * h + h + (h + 1) * v.size(t) for t in REST_TYPES)
    return total


def init_params(config: TransformerConfig, v: Vocabulary | None = None, seed: int = 0, zero: bool = False) -> dict:
    """Normal(0, 0.02) weights and embeddings, zero biases, unit norm gains.

    ``zero=True`` returns all-zero arrays (norm gains included), which makes
    every logit exactly zero.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config, v).items():
        if zero:
            arr = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".gain"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.startswith("emb.") or name.split(".")[-1] in ("wq", "wk", "wv", "wo", "w", "w1", "w2"):
            arr = (rng.standard_normal(shape) * INIT_SCALE).astype(np.float32)
        else:
            arr = np.zeros(shape, dtype=np.float32)
        params[name] = arr
    return params


def as_arrays(params: dict) -> dict:
    if isinstance(params, _ArrayParams):
        return params
    return _ArrayParams((k, p if isinstance(p, Array) else Array(p, name=k)) for k, p in params.items())


class _ArrayParams(dict):
    """Parameter dict already wrapped as Arrays (skips re-wrapping)."""


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def positional_encoding(T: int, d_model: int, start: int = 0, dtype=np.float32) -> np.ndarray:
    """Sinusoidal codes: sin on even columns, cos on odd columns."""
    return _pe(int(T), int(d_model), int(start), np.dtype(dtype)).copy()


@lru_cache(maxsize=64)
def _pe(T, d_model, start, dtype):
    pos = np.arange(start, start + T, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, even / d_model)
    pe = np.zeros((T, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)


def _check_ids(ids: np.ndarray, v: Vocabulary):
    sizes = np.array(v.sizes)
    bad = (ids < 0) | (ids >= sizes)
    if bad.any():
        where = np.argwhere(bad)[0]
        t = TokenType(int(where[-1]))
        pos = int(where[-2])
        raise TokenIndexError(f"{t.name} id {int(ids[tuple(where)])} out of range at word {pos}")


def embed_sequence(ids, params: dict, config: TransformerConfig, v: Vocabulary | None = None) -> Array:
    """Concatenated per-type embeddings plus positional encoding.

    ``ids`` has shape (T, 8) or (B, T, 8).
    """
    v = v or build_vocabulary()
    ids = np.asarray(ids, dtype=np.int64)
    _check_ids(ids, v)
    params = as_arrays(params)
    parts = [nx.take(params[f"emb.{t.name.lower()}"], ids[..., t]) for t in TokenType]
    x = nx.concat(parts, axis=-1)
    pe = positional_encoding(ids.shape[-2], config.d_model, dtype=x.dtype)
    return nx.add(x, Array(pe, dtype=x.dtype))


def _split_heads(x: Array, n_heads: int) -> Array:
    *lead, T, d = x.shape
    x = nx.reshape(x, (*lead, T, n_heads, d // n_heads))
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    return nx.transpose(x, axes)


def _merge_heads(x: Array) -> Array:
    *lead, H, T, dh = x.shape
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    x = nx.transpose(x, axes)
    return nx.reshape(x, (*lead, T, H * dh))


def forward(ids, params: dict, config: TransformerConfig, v: Vocabulary | None = None) -> Array:
    """Hidden states for every position; output is after the final layer norm."""
    ids = np.asarray(ids)
    T = ids.shape[-2]
    if T > config.max_len:
        raise LengthError(f"sequence length {T} exceeds max_len={config.max_len}")
    params = as_arrays(params)
    h = embed_sequence(ids, params, config, v)
    for i in range(config.n_layers):
        p = f"layer{i}."
        x = nx.layer_norm(h, params[p + "ln1.gain"], params[p + "ln1.bias"], LN_EPS)
        q = nx.elu_plus_one(_split_heads(nx.matmul(x, params[p + "attn.wq"]), config.n_heads))
        k = nx.elu_plus_one(_split_heads(nx.matmul(x, params[p + "attn.wk"]), config.n_heads))
        val = _split_heads(nx.matmul(x, params[p + "attn.wv"]), config.n_heads)
        att = _merge_heads(nx.causal_linear_attention(q, k, val, ATTN_EPS))
        h = nx.add(h, nx.matmul(att, params[p + "attn.wo"]))
        x = nx.layer_norm(h, params[p + "ln2.gain"], params[p + "ln2.bias"], LN_EPS)
        x = nx.gelu(nx.add(nx.matmul(x, params[p + "ff.w1"]), params[p + "ff.b1"]))
        h = nx.add(h, nx.add(nx.matmul(x, params[p + "ff.w2"]), params[p + "ff.b2"]))
    return nx.layer_norm(h, params["ln_f.gain"], params["ln_f.bias"], LN_EPS)


def family_logits(hidden, params: dict) -> Array:
    params = as_arrays(params)
    return nx.add(nx.matmul(hidden, params["head.family.w"]), params["head.family.b"])


def rest_logits(hidden, family_ids, params: dict) -> dict:
    """Logits of the seven non-family types conditioned on ``family_ids``."""
    params = as_arrays(params)
    fam = nx.take(params["emb.family"], np.asarray(family_ids))
    cond = nx.concat([hidden, fam], axis=-1)
    out = {}
    for t in REST_TYPES:
        p = f"head.{t.name.lower()}."
        z = nx.gelu(nx.add(nx.matmul(cond, params[p + "w1"]), params[p + "b1"]))
        out[t] = nx.add(nx.matmul(z, params[p + "w2"]), params[p + "b2"])
    return out


def predict_family(hidden_t, params: dict) -> np.ndarray:
    """Family logits for one time step's hidden vector."""
    h = np.asarray(hidden_t.data if isinstance(hidden_t, Array) else hidden_t)[None, :]
    return family_logits(Array(h), params).data[0]


def predict_rest(hidden_t, family_id: int, params: dict) -> dict:
    """Per-type logits for one time step, conditioned on a family id."""
    n_family = (params["emb.family"].data if isinstance(params["emb.family"], Array) else params["emb.family"]).shape[0]
    if not 0 <= int(family_id) < n_family:
        raise TokenIndexError(f"FAMILY id {family_id} out of range")
    h = np.asarray(hidden_t.data if isinstance(hidden_t, Array) else hidden_t)[None, :]
    logits = rest_logits(Array(h), np.array([int(family_id)]), params)
    return {t: a.data[0] for t, a in logits.items()}


# ---------------------------------------------------------------------------
# recurrent inference path
# ---------------------------------------------------------------------------


def _elu1(x):
    return np.where(x > 0, x + 1, np.exp(np.minimum(x, 0)))


def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS) * g + b


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(nx._GELU_C * x * (1 + 0.044715 * x * x)))


def linear_attention_causal(Q, K, V, eps: float = ATTN_EPS) -> np.ndarray:
    """Recurrent causal linear attention with the elu+1 feature map.

    Q, K, V have shape (..., T, d). Walks positions in order, keeping the
    running sums S = sum phi(k) v^T and z = sum phi(k).
    """
    Q, K, V = (np.asarray(a) for a in (Q, K, V))
    phi_q, phi_k = _elu1(Q), _elu1(K)
    lead, T = Q.shape[:-2], Q.shape[-2]
    S = np.zeros(lead + (Q.shape[-1], V.shape[-1]), dtype=np.result_type(Q, V))
    z = np.zeros(lead + (Q.shape[-1],), dtype=S.dtype)
    out = np.empty(lead + (T, V.shape[-1]), dtype=S.dtype)
    for t in range(T):
        S = S + phi_k[..., t, :, None] * V[..., t, None, :]
        z = z + phi_k[..., t, :]
        num = np.einsum("...f,...fd->...d", phi_q[..., t, :], S)
        den = (phi_q[..., t, :] * z).sum(axis=-1) + eps
        out[..., t, :] = num / den[..., None]
    return out


@dataclass
class AttentionState:
    """Per-layer prefix sums (S: heads x F x D, z: heads x F) and position."""

    S: list = field(default_factory=list)
    z: list = field(default_factory=list)
    position: int = 0

    @classmethod
    def empty(cls, config: TransformerConfig, dtype=np.float32):
        H, dh = config.n_heads, config.d_head
        return cls(
            S=[np.zeros((H, dh, dh), dtype=dtype) for _ in range(config.n_layers)],
            z=[np.zeros((H, dh), dtype=dtype) for _ in range(config.n_layers)],
            position=0,
        )


def _raw(params):
    return {k: (p.data if isinstance(p, Array) else p) for k, p in params.items()}


def step(word, state: AttentionState, params: dict, config: TransformerConfig):
    """Consume one word and return (hidden vector, next state)."""
    if state.position >= config.max_len:
        raise LengthError(f"position {state.position} reaches max_len={config.max_len}")
    P = _raw(params)
    word = np.asarray(word, dtype=np.int64)
    x = np.concatenate([P[f"emb.{t.name.lower()}"][word[t]] for t in TokenType])
    x = x + positional_encoding(1, config.d_model, state.position, dtype=x.dtype)[0]
    H, dh = config.n_heads, config.d_head
    new_S, new_z = [], []
    for i in range(config.n_layers):
        p = f"layer{i}."
        xn = _ln(x, P[p + "ln1.gain"], P[p + "ln1.bias"])
        q = _elu1(xn @ P[p + "attn.wq"]).reshape(H, dh)
        k = _elu1(xn @ P[p + "attn.wk"]).reshape(H, dh)
        val = (xn @ P[p + "attn.wv"]).reshape(H, dh)
        S = state.S[i] + k[:, :, None] * val[:, None, :]
        z = state.z[i] + k
        num = np.einsum("hf,hfd->hd", q, S)
        den = (q * z).sum(axis=-1) + ATTN_EPS
        x = x + (num / den[:, None]).reshape(-1) @ P[p + "attn.wo"]
        xn = _ln(x, P[p + "ln2.gain"], P[p + "ln2.bias"])
        x = x + _gelu(xn @ P[p + "ff.w1"] + P[p + "ff.b1"]) @ P[p + "ff.w2"] + P[p + "ff.b2"]
        new_S.append(S)
        new_z.append(z)
    hidden = _ln(x, P["ln_f.gain"], P["ln_f.bias"])
    return hidden, AttentionState(new_S, new_z, state.position + 1)
