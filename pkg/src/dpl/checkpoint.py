"""Binary checkpoint format: magic "DPLC", version 1, named float32 tensors.

Layout: magic (4 bytes) | version u32 | tensor count u32, then per tensor
name length u16 + UTF-8 name | rank u8 | dims u32 each | payload as
little-endian float32. Names are written in lexicographic order so the
byte output is a pure function of the bundle.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"DPLC"
VERSION = 1


class CheckpointError(Exception):
    pass


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    return np.ascontiguousarray(np.asarray(value, dtype=np.float64).astype("<f4"))


def save_checkpoint(bundle: dict, path) -> None:
    names = sorted(bundle)
    if len(names) != len(bundle):
        raise CheckpointError("duplicate tensor names in bundle")
    for name in names:
        if not name:
            raise CheckpointError("empty tensor name")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            arr = _as_array(bundle[name])
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("bad magic: not a DPLC checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    bundle: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        if name in bundle:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1))
        dims = [struct.unpack("<I", take(4))[0] for _ in range(rank)]
        size = int(np.prod(dims)) if dims else 1
        payload = take(4 * size)
        bundle[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes after checkpoint payload")
    return bundle
