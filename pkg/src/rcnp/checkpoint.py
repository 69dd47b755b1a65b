"""Binary checkpoint and task-set files.

Checkpoint layout (all integers little-endian)::

    b"RCNP" | u32 version | u32 header_bytes | header (UTF-8 key=value lines)
    then n_tensors blocks: u32 name_len | name | u32 rank | u64 dims[rank] | f64 data

Header values are JSON literals so floats round-trip exactly. The tensor
count is the ``n_tensors`` header key.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import taskgen
from .models import ModelSpec

MAGIC = b"RCNP"
VERSION = 1
TASKS_MAGIC = b"RCTS"
TASKS_VERSION = 1


class FormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    meta: dict = field(default_factory=dict)


def _header_lines(items: dict) -> bytes:
    lines = []
    for k, v in items.items():
        if "=" in k or "\n" in k:
            raise FormatError(f"invalid header key {k!r}")
        lines.append(f"{k}={json.dumps(v)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_header(raw: bytes) -> dict:
    out = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise FormatError(f"malformed header line {line!r}")
        out[key] = json.loads(val)
    return out


def dumps(ckpt: Checkpoint) -> bytes:
    header = {f"spec.{k}": v for k, v in ckpt.spec.to_dict().items()}
    header.update({f"meta.{k}": v for k, v in ckpt.meta.items()})
    header["n_tensors"] = len(ckpt.params)
    head = _header_lines(header)
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, head_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    header = _parse_header(r.take(head_len))
    spec_kw = {k[5:]: v for k, v in header.items() if k.startswith("spec.")}
    known = {f.name for f in fields(ModelSpec)}
    if set(spec_kw) - known:
        raise FormatError(f"unknown spec fields {sorted(set(spec_kw) - known)}")
    spec = ModelSpec(**spec_kw)
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    params = {}
    for _ in range(int(header["n_tensors"])):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q")
        params[name] = r.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor")
    return Checkpoint(spec, params, meta)


def save(path, ckpt: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())


# ------------------------------------------------------------------ task sets


def dumps_tasks(tasks) -> bytes:
    """``b"RCTS" | u32 version | u32 count`` then per task
    ``u32 n | u32 m | u32 d | u32 tag_len | tag | f64 cx[n*d] | cy[n] | tx[m*d] | ty[m]``."""
    parts = [TASKS_MAGIC, struct.pack("<II", TASKS_VERSION, len(tasks))]
    for t in tasks:
        tag = t.tag.encode("utf-8")
        parts.append(struct.pack("<IIII", t.n_context, t.n_target, t.d_x, len(tag)) + tag)
        for a in (t.context_x, t.context_y, t.target_x, t.target_y):
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_tasks(buf: bytes) -> list:
    r = _Reader(buf)
    if r.take(4) != TASKS_MAGIC:
        raise FormatError("not a task file (bad magic)")
    version, count = r.unpack("<II")
    if version != TASKS_VERSION:
        raise FormatError(f"unsupported task file version {version}")
    tasks = []
    for i in range(count):
        n, m, d, tag_len = r.unpack("<IIII")
        tag = r.take(tag_len).decode("utf-8")
        cx = r.floats(n * d).reshape(n, d)
        cy = r.floats(n)
        tx = r.floats(m * d).reshape(m, d)
        ty = r.floats(m)
        tasks.append(taskgen.Task(cx, cy, tx, ty, tag=tag, seed=i))
    return tasks
