"""Binary checkpoint format for named parameter tensors.

Layout (little-endian): magic b"W2VP", u16 version, u32 tensor count, then per
tensor: u16 name length, utf-8 name, u8 rank, u32 per-axis dims, float32 data
in row-major order. Values are stored as float32; loading returns float64.
"""

import struct

import numpy as np

from ..errors import MalformedHeader, TruncatedPayload

MAGIC = b"W2VP"
VERSION = 1


def save_params(path, named: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(named))]
    for name, arr in named.items():
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise MalformedHeader(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported checkpoint version {version}")
    off = 10
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            end = off + 4 * n
            if end > len(buf):
                raise TruncatedPayload(f"{path}: tensor {name} data truncated")
            data = np.frombuffer(buf[off:end], dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float64)
            off = end
    except struct.error:
        raise TruncatedPayload(f"{path}: checkpoint ends mid-record") from None
    if off != len(buf):
        raise MalformedHeader(f"{path}: {len(buf) - off} trailing bytes")
    return out


def assign_params(named_live: dict[str, np.ndarray], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded values into live parameter arrays, matching by name."""
    missing = set(named_live) - set(loaded)
    extra = set(loaded) - set(named_live)
    if missing or extra:
        raise MalformedHeader(
            f"checkpoint name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for key, arr in named_live.items():
        src = loaded[key]
        if src.shape != arr.shape:
            raise MalformedHeader(
                f"checkpoint shape mismatch for {key}: {src.shape} vs {arr.shape}"
            )
        arr[...] = src
