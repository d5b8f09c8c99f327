"""Named parameter collection with lazy, name-seeded initialization."""
from __future__ import annotations

import threading
import zlib
from typing import Iterable

import numpy as np
import torch

from ..errors import CheckpointError

INITS = ("uniform", "zeros", "ones", "normal")


def _name_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def init_array(seed: int, name: str, shape, init: str, fan_in: int | None = None, std: float = 0.02) -> np.ndarray:
    """Initial values for ``name``; independent of registration order."""
    shape = tuple(int(s) for s in shape)
    if init == "zeros":
        return np.zeros(shape)
    if init == "ones":
        return np.ones(shape)
    rng = _name_rng(seed, name)
    if init == "normal":
        return rng.normal(0.0, std, size=shape)
    if init == "uniform":
        if fan_in is None:
            fan_in = shape[0] if shape else 1
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)
    raise ValueError(f"unknown init {init!r}")


class ParamStore:
    """Learnable tensors keyed by name, plus Adam moments.

    ``param`` registers on first use and returns the existing leaf on later
    calls.  Registration is guarded by a lock so encoders may run on worker
    threads against one store.
    """

    def __init__(self, seed: int = 0, dtype=torch.float32):
        self.seed = int(seed)
        self.dtype = dtype
        self.params: dict[str, torch.Tensor] = {}
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}
        self.t: dict[str, int] = {}
        self.frozen_prefixes: tuple[str, ...] = ()
        self._lock = threading.Lock()

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def param(self, name: str, shape, init: str = "uniform", fan_in: int | None = None) -> torch.Tensor:
        p = self.params.get(name)
        if p is None:
            with self._lock:
                p = self.params.get(name)
                if p is None:
                    arr = init_array(self.seed, name, shape, init, fan_in)
                    p = torch.tensor(arr, dtype=self.dtype, requires_grad=True)
                    self.params[name] = p
                    return p
        if tuple(p.shape) != tuple(int(s) for s in shape):
            raise ValueError(f"parameter {name!r} has shape {tuple(p.shape)}, requested {tuple(shape)}")
        return p

    def set(self, name: str, value) -> None:
        value = torch.as_tensor(np.asarray(value), dtype=self.dtype)
        with torch.no_grad():
            if name in self.params:
                if self.params[name].shape != value.shape:
                    raise ValueError(f"shape mismatch for {name!r}")
                self.params[name].copy_(value)
            else:
                self.params[name] = value.clone().requires_grad_(True)

    def is_frozen(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.frozen_prefixes)

    def trainable(self) -> list[str]:
        return [n for n in self.names() if not self.is_frozen(n)]

    def numpy(self, name: str) -> np.ndarray:
        return self.params[name].detach().cpu().numpy()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: self.numpy(n).astype(np.float32) for n in self.names()}

    def load_dict(self, arrays: dict[str, np.ndarray], strict: bool = False) -> None:
        if strict and set(arrays) != set(self.params):
            raise CheckpointError("parameter name sets differ")
        for name, arr in arrays.items():
            self.set(name, arr)

    def clone(self, dtype=None) -> "ParamStore":
        """Detached copy (optionally re-typed); optimizer state is copied too."""
        dtype = dtype or self.dtype
        out = ParamStore(self.seed, dtype)
        out.frozen_prefixes = self.frozen_prefixes
        for name in self.names():
            out.params[name] = self.params[name].detach().to(dtype).clone().requires_grad_(True)
        out.m = {k: v.clone().to(dtype) for k, v in self.m.items()}
        out.v = {k: v.clone().to(dtype) for k, v in self.v.items()}
        out.t = dict(self.t)
        return out

    def subset_bytes(self, prefixes: Iterable[str]) -> dict[str, bytes]:
        """Raw value bytes of every parameter under ``prefixes`` (freeze checks)."""
        prefixes = tuple(prefixes)
        return {n: self.numpy(n).tobytes() for n in self.names() if n.startswith(prefixes)}

    def grads_of(self, loss: torch.Tensor, names: list[str] | None = None) -> dict[str, torch.Tensor]:
        """Gradients of ``loss`` for trainable parameters that it touches."""
        names = self.trainable() if names is None else names
        tensors = [self.params[n] for n in names]
        if not tensors:
            return {}
        gs = torch.autograd.grad(loss, tensors, allow_unused=True)
        return {n: g for n, g in zip(names, gs) if g is not None}
