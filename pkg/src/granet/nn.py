"""Parameter storage, affine stacks, Adam and the binary checkpoint format."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"GRNT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """Named float64 parameters, iterated in sorted-name order."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self):
        return [(k, self._params[k]) for k in sorted(self._params)]

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def set(self, name: str, value) -> None:
        """Overwrite a parameter's values in place (shape must match)."""
        value = np.asarray(value, dtype=np.float64)
        p = self[name]
        if p.shape != value.shape:
            raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
        p.data = value.copy()

    def rng_for(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def add_affine(self, prefix: str, fan_in: int, fan_out: int) -> None:
        bound = np.sqrt(6.0 / fan_in)
        w_name = f"{prefix}.weight"
        self.add(w_name, self.rng_for(w_name).uniform(-bound, bound, size=(fan_in, fan_out)))
        self.add(f"{prefix}.bias", np.zeros(fan_out))

    def add_mlp(self, prefix: str, widths: Sequence[int]) -> None:
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            self.add_affine(f"{prefix}.{i}", a, b)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.items() if p.grad is not None}

    def frozen(self) -> "ParameterStore":
        """Copy whose tensors do not record gradients."""
        out = ParameterStore(self.seed)
        for k, p in self.items():
            out._params[k] = Tensor(p.data.copy(), requires_grad=False, name=k)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor], seed: int = 0) -> "ParameterStore":
        """Store that uses the given tensors as its parameters (no copy)."""
        out = cls(seed)
        out._params.update(tensors)
        return out

    def copy(self) -> "ParameterStore":
        out = ParameterStore(self.seed)
        for k, p in self.items():
            out.add(k, p.data)
        return out


def _check_shape(store: ParameterStore, name: str, expected: tuple[int, ...]) -> Tensor:
    p = store[name]
    if p.shape != expected:
        raise ValueError(f"parameter {name}: expected shape {expected}, got {p.shape}")
    return p


def affine_apply(store: ParameterStore, prefix: str, x: Tensor, fan_out: int | None = None) -> Tensor:
    w = store[f"{prefix}.weight"]
    fan_in = x.shape[-1]
    out = w.shape[1] if fan_out is None else fan_out
    w = _check_shape(store, f"{prefix}.weight", (fan_in, out))
    b = _check_shape(store, f"{prefix}.bias", (out,))
    return T.affine(x, w, b)


def mlp_apply(store: ParameterStore, prefix: str, x, layer_widths: Sequence[int],
              final_relu: bool = False) -> Tensor:
    """Affine + ReLU on every hidden layer, plain affine on the last one.

    ``layer_widths`` includes the input width, e.g. ``(256, 128, 2)``.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != layer_widths[0]:
        raise ValueError(f"{prefix}: input width {x.shape[-1]} does not match {layer_widths[0]}")
    n_layers = len(layer_widths) - 1
    for i in range(n_layers):
        x = affine_apply(store, f"{prefix}.{i}", x, layer_widths[i + 1])
        if i < n_layers - 1 or final_relu:
            x = T.relu(x)
    return x


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, store: ParameterStore, grads: dict[str, np.ndarray] | None = None,
             lr: float | None = None) -> None:
        adam_step(store, store.grads() if grads is None else grads, self,
                  self.lr if lr is None else lr)


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray], state: Adam,
              lr: float) -> None:
    """One bias-corrected Adam update over every parameter of ``store``."""
    missing = [k for k in store if k not in grads]
    if missing:
        raise KeyError(f"missing gradient for parameter {missing[0]!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in store.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + state.eps)


# -- checkpoints ---------------------------------------------------------
def save_checkpoint(store: ParameterStore, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(store))]
    for name, p in store.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, seed: int = 0) -> ParameterStore:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    store = ParameterStore(seed)
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        store.add(name, values.astype(np.float64))
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return store
