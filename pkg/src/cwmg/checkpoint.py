"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"CWMG" | uint32 format version | uint32 header length | header (UTF-8 JSON)
    | float32 payload

The header records the model config, vocabulary version, epoch, optimizer
step and the ``[name, shape]`` list that fixes payload order: model
parameters in :func:`cwmg.model.param_shapes` order, then (if saved) the
optimizer moments as ``opt.m/<name>`` and ``opt.v/<name>`` in the same order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptCheckpointError
from .model import TransformerConfig, param_shapes
from .numerics import AdamState
from .vocab import Vocabulary, build_vocabulary

MAGIC = b"CWMG"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict
    config: TransformerConfig
    epoch: int = 0
    opt_state: AdamState | None = None
    vocab_version: str = ""


def checkpoint_bytes(params, config, v=None, epoch=0, opt_state=None) -> bytes:
    v = v or build_vocabulary()
    order = list(param_shapes(config, v))
    arrays = [(k, params[k]) for k in order]
    if opt_state is not None:
        arrays += [(f"opt.m/{k}", opt_state.m[k]) for k in order]
        arrays += [(f"opt.v/{k}", opt_state.v[k]) for k in order]
    header = {
        "config": config.to_dict(),
        "vocab_version": v.version,
        "epoch": int(epoch),
        "opt_step": None if opt_state is None else int(opt_state.step),
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(text)), text]
    chunks += [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays]
    return b"".join(chunks)


def save_checkpoint(params, config, path, v=None, epoch=0, opt_state=None) -> str:
    """Write a checkpoint; returns its sha256 hex digest."""
    data = checkpoint_bytes(params, config, v, epoch, opt_state)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, v: Vocabulary | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data, v)


def parse_checkpoint(data: bytes, v: Vocabulary | None = None) -> Checkpoint:
    v = v or build_vocabulary()
    if data[:4] != MAGIC:
        raise CorruptCheckpointError(f"expected {MAGIC!r}, found {bytes(data[:4])!r}", "magic")
    if len(data) < 12:
        raise CorruptCheckpointError("file ends inside the preamble", "header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported format version {version}", "version")
    if 12 + hlen > len(data):
        raise CorruptCheckpointError("file ends inside the header", "header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
        config = TransformerConfig.from_dict(header["config"])
        listed = [(str(n), tuple(int(s) for s in shape)) for n, shape in header["arrays"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable header ({exc})", "header") from None
    if header.get("vocab_version") != v.version:
        raise CorruptCheckpointError(
            f"checkpoint built for {header.get('vocab_version')!r}, running {v.version!r}", "vocab_version"
        )

    expected = param_shapes(config, v)
    names = list(expected)
    opt_step = header.get("opt_step")
    if opt_step is not None:
        names += [f"opt.m/{k}" for k in expected] + [f"opt.v/{k}" for k in expected]
    if [n for n, _ in listed] != names:
        raise CorruptCheckpointError("array list does not match the config", "arrays")
    for name, shape in listed:
        want = expected[name.split("/", 1)[-1]]
        if shape != tuple(want):
            raise CorruptCheckpointError(f"{name} has shape {shape}, config implies {tuple(want)}", "shape")

    pos = 12 + hlen
    total = sum(int(np.prod(s)) for _, s in listed) * 4
    if len(data) - pos != total:
        raise CorruptCheckpointError(f"payload is {len(data) - pos} bytes, expected {total}", "payload")
    arrays = {}
    for name, shape in listed:
        n = int(np.prod(shape)) * 4
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += n
    params = {k: arrays[k] for k in expected}
    opt_state = None
    if opt_step is not None:
        opt_state = AdamState(
            step=int(opt_step),
            m={k: arrays[f"opt.m/{k}"] for k in expected},
            v={k: arrays[f"opt.v/{k}"] for k in expected},
        )
    return Checkpoint(params, config, int(header.get("epoch", 0)), opt_state, v.version)
