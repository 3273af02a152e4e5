"""RSTM binary checkpoint format.

Layout (all integers little-endian)::

    b"RSTM"  u32 version=1
    u64 config_len   config JSON (UTF-8, sorted keys, compact)
    u64 n_tensors    n_tensors x tensor record
    u8  has_optimizer
        [u64 step  u64 n  n x tensor record (m.<name> ..., then v.<name> ...)]
    u64 iteration
    u64 rng_len      RNG state JSON (UTF-8; empty when absent)

    tensor record: u32 name_len, name, u32 rank, rank x u64 dims, float32 LE values
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import FormatError, IntegrityError
from .network import Model, param_specs
from .optim import OptState
from .params import ParamStore
from .tensor import Tensor

MAGIC = b"RSTM"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParamStore
    opt_state: OptState | None = None
    iteration: int = 0
    rng_state: dict | None = None
    version: int = VERSION

    @property
    def model(self) -> Model:
        return Model(self.config, self.params)


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated checkpoint at byte {f.tell()}")
    return b


def _read_tensor(f) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", _read_exact(f, 4))
    name = _read_exact(f, nlen).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").astype(np.float32).reshape(dims)
    return name, arr


def dumps(ckpt: Checkpoint) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    cfg = ckpt.config.to_json().encode("utf-8")
    f.write(struct.pack("<Q", len(cfg)))
    f.write(cfg)
    f.write(struct.pack("<Q", len(ckpt.params)))
    for name, t in ckpt.params.items():
        _write_tensor(f, name, t.data)
    opt = ckpt.opt_state
    f.write(struct.pack("<B", 0 if opt is None else 1))
    if opt is not None:
        f.write(struct.pack("<Q", opt.t))
        f.write(struct.pack("<Q", 2 * len(ckpt.params)))
        for prefix, moments in (("m", opt.m), ("v", opt.v)):
            for name in ckpt.params:
                _write_tensor(f, f"{prefix}.{name}", moments[name])
    f.write(struct.pack("<Q", ckpt.iteration))
    rng = b"" if ckpt.rng_state is None else json.dumps(ckpt.rng_state, sort_keys=True).encode()
    f.write(struct.pack("<Q", len(rng)))
    f.write(rng)
    return f.getvalue()


def loads(data: bytes) -> Checkpoint:
    f = io.BytesIO(data)
    if f.read(4) != MAGIC:
        raise FormatError("bad magic, not an RSTM checkpoint")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<Q", _read_exact(f, 8))
    try:
        cfg = ModelConfig.from_dict(json.loads(_read_exact(f, clen).decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise IntegrityError(f"invalid config block: {e}") from None

    specs = param_specs(cfg)
    (count,) = struct.unpack("<Q", _read_exact(f, 8))
    if count != len(specs):
        raise IntegrityError(f"config implies {len(specs)} tensors, file has {count}")
    params = ParamStore()
    for spec in specs:
        name, arr = _read_tensor(f)
        if name != spec.name or arr.shape != spec.shape:
            raise IntegrityError(f"expected {spec.name}{spec.shape}, found {name}{arr.shape}")
        params[name] = Tensor(arr, requires_grad=True)

    (flag,) = struct.unpack("<B", _read_exact(f, 1))
    opt = None
    if flag not in (0, 1):
        raise IntegrityError(f"bad optimizer flag {flag}")
    if flag:
        (step,) = struct.unpack("<Q", _read_exact(f, 8))
        (n,) = struct.unpack("<Q", _read_exact(f, 8))
        if n != 2 * len(params):
            raise IntegrityError("optimizer section does not mirror the parameters")
        opt = OptState(t=step)
        for prefix, moments in (("m", opt.m), ("v", opt.v)):
            for pname, p in params.items():
                name, arr = _read_tensor(f)
                if name != f"{prefix}.{pname}" or arr.shape != p.shape:
                    raise IntegrityError(f"optimizer tensor {name} does not match {pname}")
                moments[pname] = arr.copy()
    (iteration,) = struct.unpack("<Q", _read_exact(f, 8))
    (rlen,) = struct.unpack("<Q", _read_exact(f, 8))
    rng = json.loads(_read_exact(f, rlen).decode("utf-8")) if rlen else None
    if f.read(1):
        raise IntegrityError("trailing bytes after checkpoint")
    for name, t in params.items():
        if not np.all(np.isfinite(t.data)):
            raise IntegrityError(f"non-finite values in tensor {name}")
    return Checkpoint(cfg, params, opt, iteration, rng, version)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
