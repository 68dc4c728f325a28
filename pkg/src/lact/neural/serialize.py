"""Binary model files.

Layout (little-endian): the 8-byte magic ``LACTMDL1``; ``uint32`` tensor
count; then per tensor ``uint32`` name length, UTF-8 name, ``uint32`` rank,
``rank`` ``uint32`` dims, and the row-major ``float64`` values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LACTMDL1"


class ModelFormatError(ValueError):
    pass


def dumps_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads_tensors(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise ModelFormatError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ModelFormatError("truncated model file")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 8 * n > len(buf):
            raise ModelFormatError(f"truncated data for tensor {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise ModelFormatError(f"{len(buf) - pos} trailing bytes after {count} tensors")
    return out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    return loads_tensors(Path(path).read_bytes())


def save_autoencoder(path, model) -> None:
    tensors = {"meta.patch_size": np.array(float(model.patch_size)),
               "meta.latent_dim": np.array(float(model.latent))}
    tensors.update(model.state_dict())
    save_tensors(path, tensors)


def load_autoencoder(path):
    from .autoencoder import PatchAutoencoder

    tensors = load_tensors(path)
    try:
        p = int(tensors.pop("meta.patch_size"))
        latent = int(tensors.pop("meta.latent_dim"))
    except KeyError as exc:
        raise ModelFormatError(f"model file lacks metadata tensor {exc}") from None
    model = PatchAutoencoder(p)
    if model.latent != latent:
        raise ModelFormatError(f"latent dim {latent} inconsistent with patch size {p}")
    model.load_state_dict(tensors)
    return model
