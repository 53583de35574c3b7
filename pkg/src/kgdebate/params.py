"""Named parameter tensors, Adam updates, and a byte-stable checkpoint file.

A checkpoint is a single binary container holding several ParameterStores
(agent1/agent2/judge) under name prefixes, their Adam slots, per-store step
counters, and a JSON meta block. Saving the same state twice produces
identical bytes, so checkpoints can be compared by hash.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = b"KGDCKPT\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # decoupled (AdamW-style)


class ParameterStore:
    """name -> Tensor plus per-parameter Adam slots and a step counter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.value)
        self._v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def grad_is_finite(self) -> bool:
        return all(np.all(np.isfinite(t.grad)) for t in self._params.values())

    def adam_step(self, cfg: AdamConfig):
        """One Adam update from the accumulated gradients."""
        self.step += 1
        bc1 = 1.0 - cfg.beta1 ** self.step
        bc2 = 1.0 - cfg.beta2 ** self.step
        for name in self.names():
            t = self._params[name]
            g = t.grad
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay:
                t.value *= 1.0 - cfg.lr * cfg.weight_decay
            t.value -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def value_bytes(self) -> bytes:
        """Concatenated raw values in name order (for isolation checks)."""
        return b"".join(self._params[n].value.tobytes() for n in self.names())


def save_checkpoint(path, stores: dict[str, ParameterStore], meta: dict | None = None):
    """Write stores + optimizer state + meta as one versioned binary file."""
    header: dict = {"meta": meta or {}, "stores": {}}
    payload = bytearray()
    for prefix in sorted(stores):
        store = stores[prefix]
        entries = []
        for name in store.names():
            t = store[name]
            entry = {"name": name, "shape": list(t.value.shape), "offset": len(payload)}
            payload += t.value.tobytes()
            payload += store._m[name].tobytes()
            payload += store._v[name].tobytes()
            entries.append(entry)
        header["stores"][prefix] = {"step": store.step, "params": entries}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, ParameterStore], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (head_len,) = struct.unpack("<Q", blob[12:20])
    header = json.loads(blob[20:20 + head_len].decode("utf-8"))
    payload = blob[20 + head_len:]
    stores: dict[str, ParameterStore] = {}
    for prefix, spec in header["stores"].items():
        store = ParameterStore()
        store.step = int(spec["step"])
        for entry in spec["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            off = entry["offset"]
            span = n * 8
            def block(k):
                return np.frombuffer(payload[off + k * span: off + (k + 1) * span],
                                     dtype=np.float64).reshape(shape).copy()
            t = store.add(entry["name"], block(0))
            store._m[entry["name"]] = block(1)
            store._v[entry["name"]] = block(2)
        stores[prefix] = store
    return stores, header["meta"]


# ---------------------------------------------------------------------------
# initializers


def xavier_uniform(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def normal_embeddings(rng, count: int, dim: int, std: float = 0.1) -> np.ndarray:
    return rng.normal(0.0, std, size=(count, dim))
