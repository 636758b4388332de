"""DINOF1 checkpoint container.

Layout::

    b"DINOF1"
    uint64 little-endian  header length in bytes
    header                UTF-8 JSON: config, iteration, RNG state, layer
                          inventory and the ordered list of parameter blocks
    blocks                raw little-endian float64 arrays, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .autodiff import AdamState
from .errors import CheckpointError, ConfigError
from .pipeline import TrainState, init_state

MAGIC = b"DINOF1"
FORMAT_VERSION = 1


def _groups(state: TrainState):
    sk, fk = state.score_keys, state.flow_keys
    yield "score", sk, [state.score.params[k] for k in sk]
    yield "flow", fk, [state.flow.params[k] for k in fk]
    yield "score_adam_m", sk, state.score_opt.m
    yield "score_adam_v", sk, state.score_opt.v
    yield "flow_adam_m", fk, state.flow_opt.m
    yield "flow_adam_v", fk, state.flow_opt.v


def to_bytes(state: TrainState, frontend: dict | None = None) -> bytes:
    blocks, payload = [], []
    for group, keys, arrays in _groups(state):
        for key, arr in zip(keys, arrays):
            blocks.append({"group": group, "name": key, "shape": list(arr.shape)})
            payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    rng_state = state.rng.bit_generator.state
    header = {
        "format": MAGIC.decode(),
        "version": FORMAT_VERSION,
        "config": {k: _jsonable(v) for k, v in cfgmod.flatten(state.config, frontend).items()},
        "iteration": state.iteration,
        "rng": rng_state,
        "score_adam_step": state.score_opt.step,
        "flow_adam_step": state.flow_opt.step,
        "flow_initialized": state.flow.initialized,
        "flow_layers": state.flow.layer_inventory(),
        "flow_permutations": state.flow.permutations(),
        "blocks": blocks,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(payload)


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def save(path, state: TrainState, frontend: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(state, frontend))
    tmp.replace(path)
    return path


def read_header(buf: bytes) -> tuple[dict, int]:
    if len(buf) < len(MAGIC) + 8 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a DINOF1 checkpoint (magic mismatch)")
    (n,) = struct.unpack("<Q", buf[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + n > len(buf):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[start: start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    return header, start + n


def from_bytes(buf: bytes) -> tuple[TrainState, dict]:
    """Rebuild a training state; also returns the stored flat config."""
    header, offset = read_header(buf)
    flat_raw = header.get("config", {})
    try:
        flat = cfgmod.resolve({k: _restore(k, v) for k, v in flat_raw.items()})
        cfg = cfgmod.build(flat)
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from None
    state = init_state(cfg)
    state.flow.set_permutations(header["flow_permutations"])
    arrays: dict[tuple[str, str], np.ndarray] = {}
    for blk in header["blocks"]:
        shape = tuple(blk["shape"])
        size = int(np.prod(shape)) * 8
        if offset + size > len(buf):
            raise CheckpointError(f"truncated parameter block {blk['group']}/{blk['name']}")
        arrays[(blk["group"], blk["name"])] = (
            np.frombuffer(buf, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
        )
        offset += size
    if offset != len(buf):
        raise CheckpointError("trailing bytes after last parameter block")

    def take(group, keys):
        try:
            return [arrays[(group, k)] for k in keys]
        except KeyError as exc:
            raise CheckpointError(f"missing parameter block {group}/{exc.args[0][1]}") from None

    sk, fk = state.score_keys, state.flow_keys
    state.score.params = dict(zip(sk, take("score", sk)))
    state.flow.params = dict(zip(fk, take("flow", fk)))
    state.score_opt = AdamState(header["score_adam_step"], take("score_adam_m", sk), take("score_adam_v", sk))
    state.flow_opt = AdamState(header["flow_adam_step"], take("flow_adam_m", fk), take("flow_adam_v", fk))
    state.flow.initialized = bool(header["flow_initialized"])
    state.iteration = int(header["iteration"])
    state.rng.bit_generator.state = header["rng"]
    return state, flat


def _restore(key, value):
    if key == "score_hidden" and isinstance(value, list):
        return tuple(value)
    return value


def load(path) -> tuple[TrainState, dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(buf)
