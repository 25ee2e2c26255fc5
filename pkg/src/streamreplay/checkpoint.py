"""Versioned binary checkpoint of a run: model, optimizer, generators and buffer.

Layout::

    8 bytes   magic b"SRPLCKPT"
    4 bytes   format version (uint32, little endian)
    8 bytes   header length H (uint64, little endian)
    H bytes   UTF-8 JSON header (scalars, generator states, array table)
    ...       raw little-endian array payloads at the offsets in the header
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .diffcore import ModelState, OptimizerState
from .replay import Entry, ReplayBuffer
from .streams.dataset import Example
from .trainer import RunState

MAGIC = b"SRPLCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class _Arrays:
    def __init__(self):
        self.table: dict[str, dict] = {}
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, name: str, array: np.ndarray) -> None:
        array = np.ascontiguousarray(array)
        dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
        raw = array.astype(dtype, copy=False).tobytes()
        self.table[name] = {"dtype": dtype.str, "shape": list(array.shape), "offset": self.offset,
                            "nbytes": len(raw)}
        self.chunks.append(raw)
        self.offset += len(raw)


def save_checkpoint(path, state: RunState, config: dict | None = None) -> None:
    arrays = _Arrays()
    model, opt = state.model, state.optimizer
    arrays.add("params", model.params)
    arrays.add("first_moment", opt.first_moment)
    arrays.add("second_moment", opt.second_moment)
    for i, ckpt in enumerate(state.checkpoints):
        arrays.add(f"checkpoint_{i}", ckpt.params)
    header = {
        "config": config or {},
        "topology": list(model.topology),
        "activations": list(model.activations),
        "optimizer": {"step_count": opt.step_count, "lr": opt.lr, "beta1": opt.beta1,
                      "beta2": opt.beta2, "epsilon": opt.epsilon},
        "rng": state.rng.bit_generator.state,
        "steps": state.steps,
        "num_checkpoints": len(state.checkpoints),
        "buffer": None,
    }
    if state.buffer is not None:
        # snapshots share Entry objects; store each distinct entry once, keyed by insertion order
        distinct: dict[int, Entry] = {}
        for entries in [state.buffer.entries, *state.buffer_snapshots]:
            for e in entries:
                distinct.setdefault(e.order, e)
        orders = sorted(distinct)
        header["buffer"] = {
            "state": state.buffer.state(),
            "entries": [e.order for e in state.buffer.entries],
            "snapshots": [[e.order for e in snap] for snap in state.buffer_snapshots],
            "count": len(orders),
        }
        if orders:
            ents = [distinct[o] for o in orders]
            arrays.add("entry_order", np.array(orders, dtype=np.int64))
            arrays.add("entry_phase", np.array([e.phase for e in ents], dtype=np.int64))
            arrays.add("entry_x", np.stack([e.item.x for e in ents]))
            arrays.add("entry_y", np.stack([np.asarray(e.item.y) for e in ents]))
            arrays.add("entry_origin", np.array([e.item.phase_origin for e in ents], dtype=np.int64))
            arrays.add("entry_key", np.array([e.item.key for e in ents], dtype=np.int64))
    header["arrays"] = arrays.table
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for chunk in arrays.chunks:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[RunState, dict]:
    """Return the restored RunState and the saved config echo."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen

    def array(name):
        meta = header["arrays"][name]
        start = base + meta["offset"]
        if start + meta["nbytes"] > len(raw):
            raise CheckpointError(f"{path}: truncated array {name}")
        return np.frombuffer(raw, dtype=np.dtype(meta["dtype"]), count=int(np.prod(meta["shape"])),
                             offset=start).reshape(meta["shape"]).copy()

    topology, acts = tuple(header["topology"]), tuple(header["activations"])
    model = ModelState(topology, acts, array("params"))
    o = header["optimizer"]
    opt = OptimizerState(o["step_count"], array("first_moment"), array("second_moment"),
                         o["lr"], o["beta1"], o["beta2"], o["epsilon"])
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    checkpoints = [ModelState(topology, acts, array(f"checkpoint_{i}"))
                   for i in range(header["num_checkpoints"])]
    state = RunState(model, opt, rng, None, checkpoints, [], header["steps"])
    b = header["buffer"]
    if b is not None:
        by_order: dict[int, Entry] = {}
        if b["count"]:
            xs, ys = array("entry_x"), array("entry_y")
            for i, (order, phase, origin, key) in enumerate(zip(
                    array("entry_order"), array("entry_phase"), array("entry_origin"), array("entry_key"))):
                y = ys[i] if ys.ndim > 1 else ys[i].item()
                by_order[int(order)] = Entry(Example(xs[i], y, int(origin), int(key)), int(phase), int(order))
        state.buffer = ReplayBuffer.restore(b["state"], [by_order[o] for o in b["entries"]])
        state.buffer_snapshots = [[by_order[o] for o in snap] for snap in b["snapshots"]]
    return state, header["config"]
