"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"O2SRCKPT"
    version    u32
    header     u32 length + UTF-8 ``key = value`` text (config echo, step)
    n_tensors  u32
    tensor*    u16 name length, name, u8 ndim, u32 dims..., float32 data
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import kv
from .errors import IncompatibilityError, IntegrityError
from .model import ModelConfig, O2Former, build_model, shape_chart

MAGIC = b"O2SRCKPT"
FORMAT_VERSION = 1
OPTIM_PREFIX = "optim."


@dataclass
class Checkpoint:
    model: O2Former
    config: ModelConfig
    step: int
    header: dict = field(default_factory=dict)
    optimizer_tensors: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def optimizer_tensors(model, optimizer) -> dict:
    """Adam moments keyed by parameter name."""
    if optimizer is None:
        return {}
    out = {}
    for name, p in model.named_parameters():
        st = optimizer.state.get(p)
        if st:
            out[f"{OPTIM_PREFIX}exp_avg.{name}"] = st["exp_avg"].detach()
            out[f"{OPTIM_PREFIX}exp_avg_sq.{name}"] = st["exp_avg_sq"].detach()
    return out


def save_checkpoint(path, model: O2Former, step: int = 0, optimizer=None,
                    extra_header: dict | None = None) -> None:
    header = {"format_version": str(FORMAT_VERSION), "step": str(step)}
    header.update(kv.to_items(model.cfg, "model"))
    if optimizer is not None:
        states = [s for s in optimizer.state.values() if "step" in s]
        header["optim.step"] = str(int(states[0]["step"])) if states else "0"
    header.update(extra_header or {})
    text = kv.dumps(header).encode("utf-8")

    tensors = {n: p.detach() for n, p in model.named_parameters()}
    tensors.update(optimizer_tensors(model, optimizer))
    body = bytearray(MAGIC)
    body += struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(text)) + text
    body += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        body += _pack_tensor(name, t.cpu().numpy())
    body += struct.pack("<I", zlib.crc32(body))

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(body))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_raw(path):
    """Parse a checkpoint file into (header dict, name -> float32 array)."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not an o2sr checkpoint (bad magic)")
    if len(data) < len(MAGIC) + 8:
        raise IntegrityError(f"{path}: truncated checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    r = _Reader(data[:-4], path)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise IncompatibilityError(
            f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}",
            field="format_version",
        )
    if zlib.crc32(data[:-4]) != crc:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    (hlen,) = r.unpack("<I")
    header = kv.loads(r.take(hlen).decode("utf-8"))
    (n,) = r.unpack("<I")
    tensors = {}
    for _ in range(n):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = arr.copy()
    if r.pos != len(r.data):
        raise IntegrityError(f"{path}: trailing bytes after tensor table")
    return header, tensors


def check_compatible(expected: ModelConfig, found: ModelConfig, path="checkpoint"):
    for name in expected.__dataclass_fields__:
        a, b = getattr(expected, name), getattr(found, name)
        if a != b:
            raise IncompatibilityError(
                f"{path}: model.{name} is {b!r} in checkpoint but {a!r} was expected",
                field=f"model.{name}",
            )


def load_checkpoint(path, expected: ModelConfig | None = None, dtype=torch.float32) -> Checkpoint:
    header, tensors = read_raw(path)
    cfg = kv.from_items(ModelConfig, header, "model")
    if expected is not None:
        check_compatible(expected, cfg, path)
    model = build_model(cfg, dtype=dtype)
    chart = shape_chart(cfg)
    state = {}
    for name, shape in chart.items():
        if name not in tensors:
            raise IntegrityError(f"{path}: parameter {name!r} missing")
        if tuple(tensors[name].shape) != shape:
            raise IntegrityError(f"{path}: parameter {name!r} has shape {tensors[name].shape}, expected {shape}")
        state[name] = torch.from_numpy(tensors[name]).to(dtype)
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(state[name])
    optim = {k: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(OPTIM_PREFIX)}
    return Checkpoint(model, cfg, int(header.get("step", 0)), header, optim)


def restore_optimizer(optimizer, model, ck: Checkpoint) -> None:
    """Load saved Adam moments into a freshly built optimizer over ``model``."""
    if not ck.optimizer_tensors:
        return
    step = float(ck.header.get("optim.step", "0"))
    sd = optimizer.state_dict()
    state = {}
    for i, (name, _) in enumerate(model.named_parameters()):
        m = ck.optimizer_tensors.get(f"{OPTIM_PREFIX}exp_avg.{name}")
        v = ck.optimizer_tensors.get(f"{OPTIM_PREFIX}exp_avg_sq.{name}")
        if m is None or v is None:
            raise IntegrityError(f"optimizer state for {name!r} missing")
        state[i] = {"step": torch.tensor(step), "exp_avg": m.clone(), "exp_avg_sq": v.clone()}
    sd["state"] = state
    optimizer.load_state_dict(sd)
