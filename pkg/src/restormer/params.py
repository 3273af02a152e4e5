"""Named parameter storage with deterministic registration order."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str  # "uniform" | "ones" | "zeros"
    fan_in: int = 1

    @property
    def size(self) -> int:
        return math.prod(self.shape)


class ParamStore(dict):
    """Ordered ``name -> Tensor`` map; iteration order is the canonical order."""

    def numel(self) -> int:
        return sum(t.data.size for t in self.values())

    def tensors(self) -> list[Tensor]:
        return list(self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.astype(dtype), requires_grad=v.requires_grad))
                          for k, v in self.items())

    def copy(self) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.copy(), requires_grad=v.requires_grad))
                          for k, v in self.items())


def materialize(specs: list[ParamSpec], seed: int, dtype=np.float32) -> ParamStore:
    """Draw initial values for ``specs`` in order from a single seeded stream."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate parameter names")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for s in specs:
        if s.init == "uniform":
            bound = 1.0 / math.sqrt(s.fan_in)
            data = rng.uniform(-bound, bound, size=s.shape)
        elif s.init == "ones":
            data = np.ones(s.shape)
        elif s.init == "zeros":
            data = np.zeros(s.shape)
        else:
            raise ConfigError(f"unknown init {s.init!r}")
        store[s.name] = Tensor(data.astype(dtype), requires_grad=True)
    return store


def conv_specs(name: str, k: int, cin: int, cout: int, groups: int = 1,
               bias: bool = False) -> list[ParamSpec]:
    fan_in = k * k * cin // groups
    out = [ParamSpec(f"{name}.weight", (k, k, cin // groups, cout), "uniform", fan_in)]
    if bias:
        out.append(ParamSpec(f"{name}.bias", (cout,), "uniform", fan_in))
    return out


def norm_specs(name: str, dim: int, bias: bool) -> list[ParamSpec]:
    out = [ParamSpec(f"{name}.weight", (dim,), "ones")]
    if bias:
        out.append(ParamSpec(f"{name}.bias", (dim,), "zeros"))
    return out
