"""DCPT checkpoint files.

Layout, all little-endian:

    magic    4 bytes  "DCPT"
    header   u16 version, u32 global step, u16 phase,
             u32 generator-opt step, u32 discriminator-opt step
    rng      u8 flag; if 1: 16-byte PCG64 state, 16-byte increment,
             u32 has_uint32, u32 cached uinteger
    count    u32 number of entries
    entry    u16 name length, utf-8 name, u8 ndim, ndim x u32 dims,
             float32 payload

Entries are sorted by name so identical registries always produce
identical bytes. Optimizer moments ride along as "<param>#m" and
"<param>#v"; '#' cannot appear in parameter names (nn.collect enforces
that), so the namespaces cannot collide.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"DCPT"
VERSION = 1

_HEADER = struct.Struct("<HIHII")
_RNG_BODY = struct.Struct("<16s16sII")


@dataclass
class Checkpoint:
    step: int
    phase: int
    gen_opt_step: int = 0
    disc_opt_step: int = 0
    rng_state: dict | None = None
    arrays: dict = field(default_factory=dict)  # name -> float32 ndarray


def _moment_entries(params: dict, opt) -> dict:
    out = {}
    if opt is None:
        return out
    for name in params:
        if name in opt.m:
            out[name + "#m"] = opt.m[name]
            out[name + "#v"] = opt.v[name]
    return out


def build_checkpoint(step: int, phase: int, rng=None, gen_params=None,
                     gen_opt=None, disc_params=None,
                     disc_opt=None) -> Checkpoint:
    """Snapshot parameter data (copied) plus optimizer moments."""
    arrays = {}
    for group in (gen_params, disc_params):
        if not group:
            continue
        for name, t in group.items():
            if name in arrays:
                raise FormatError(f"duplicate parameter name {name!r} "
                                  "across groups")
            arrays[name] = t.data.copy()
    arrays.update({k: v.copy() for k, v in
                   _moment_entries(gen_params or {}, gen_opt).items()})
    arrays.update({k: v.copy() for k, v in
                   _moment_entries(disc_params or {}, disc_opt).items()})
    return Checkpoint(
        step=step, phase=phase,
        gen_opt_step=0 if gen_opt is None else gen_opt.step,
        disc_opt_step=0 if disc_opt is None else disc_opt.step,
        rng_state=None if rng is None else rng.bit_generator.state,
        arrays=arrays)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    parts = [MAGIC, _HEADER.pack(VERSION, ckpt.step, ckpt.phase,
                                 ckpt.gen_opt_step, ckpt.disc_opt_step)]
    if ckpt.rng_state is None:
        parts.append(b"\x00")
    else:
        st = ckpt.rng_state
        if st.get("bit_generator") != "PCG64":
            raise FormatError(
                f"only PCG64 rng state is supported, got "
                f"{st.get('bit_generator')!r}")
        parts.append(b"\x01")
        parts.append(_RNG_BODY.pack(
            int(st["state"]["state"]).to_bytes(16, "little"),
            int(st["state"]["inc"]).to_bytes(16, "little"),
            int(st["has_uint32"]), int(st["uinteger"])))
    parts.append(struct.pack("<I", len(ckpt.arrays)))
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype=np.float32)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at "
                f"offset {self.pos}, have {len(self.blob) - self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic at offset 0, expected {MAGIC!r}")
    version, step, phase, gstep, dstep = _HEADER.unpack(
        r.take(_HEADER.size, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    flag = r.take(1, "rng flag")[0]
    rng_state = None
    if flag == 1:
        sbytes, ibytes, has32, uint = _RNG_BODY.unpack(
            r.take(_RNG_BODY.size, "rng state"))
        rng_state = {"bit_generator": "PCG64",
                     "state": {"state": int.from_bytes(sbytes, "little"),
                               "inc": int.from_bytes(ibytes, "little")},
                     "has_uint32": int(has32), "uinteger": int(uint)}
    elif flag != 0:
        raise FormatError(f"bad rng flag {flag} at offset {r.pos - 1}")
    (count,) = struct.unpack("<I", r.take(4, "entry count"))
    arrays = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", r.take(2, f"entry {i} name length"))
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        ndim = r.take(1, f"entry {i} ndim")[0]
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"entry {i} dims"))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.take(4 * size, f"entry {i} ({name}) payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if name in arrays:
            raise FormatError(f"duplicate entry {name!r}")
        arrays[name] = arr.copy()
    if r.pos != len(blob):
        raise FormatError(
            f"{len(blob) - r.pos} trailing bytes after offset {r.pos}")
    return Checkpoint(step=step, phase=phase, gen_opt_step=gstep,
                      disc_opt_step=dstep, rng_state=rng_state,
                      arrays=arrays)


def restore_checkpoint(ckpt: Checkpoint, gen_params=None, gen_opt=None,
                       disc_params=None, disc_opt=None, rng=None) -> None:
    """Copy checkpoint arrays into live tensors and optimizer states.

    Every registered parameter must be present with its exact shape and
    every stored entry must land somewhere; anything else is rejected
    with the full offender list. Moments are optional per parameter
    (a parameter the optimizer has not touched yet has none)."""
    registry = {}
    for group, opt in ((gen_params, gen_opt), (disc_params, disc_opt)):
        if group:
            for name, t in group.items():
                registry[name] = (t, opt)
    problems = []
    for name, (t, _) in registry.items():
        if name not in ckpt.arrays:
            problems.append(f"missing parameter {name!r}")
        elif ckpt.arrays[name].shape != t.data.shape:
            problems.append(
                f"shape mismatch for {name!r}: checkpoint "
                f"{ckpt.arrays[name].shape}, registry {t.data.shape}")
    for name in ckpt.arrays:
        base = name.split("#", 1)[0]
        if base not in registry:
            problems.append(f"unexpected entry {name!r}")
        elif name != base and name[len(base):] not in ("#m", "#v"):
            problems.append(f"unknown suffix on entry {name!r}")
    if problems:
        raise FormatError("checkpoint does not match registry: "
                          + "; ".join(sorted(problems)))
    for name, (t, _) in registry.items():
        t.data = ckpt.arrays[name].astype(np.float32, copy=True)
    for name, arr in ckpt.arrays.items():
        if "#" not in name:
            continue
        base, kind = name.split("#", 1)
        _, opt = registry[base]
        if opt is None:
            continue
        slot = opt.m if kind == "m" else opt.v
        slot[base] = arr.astype(np.float32, copy=True)
    if gen_opt is not None:
        gen_opt.step = ckpt.gen_opt_step
    if disc_opt is not None:
        disc_opt.step = ckpt.disc_opt_step
    if rng is not None and ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
